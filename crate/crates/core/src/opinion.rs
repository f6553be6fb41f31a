//! Opinion space: vote matrix → 2-D principal-component projection →
//! k-means opinion groups chosen by mean silhouette.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Dense};
use crate::model::{ParticipantId, StatementId, Vote};

pub const DEFAULT_K_CANDIDATES: RangeInclusive<usize> = 2..=5;
pub const KMEANS_RESTARTS: usize = 100;
pub const EIGEN_TOLERANCE: f64 = 1e-9;
pub const EIGEN_MAX_ITERATIONS: usize = 10_000;

const BLOCK_SIZE: usize = 8;
const START_SEED: u64 = 0x5eed_0f_0b1e;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OpinionError {
    #[error("degenerate matrix: {0}")]
    DegenerateMatrix(String),
    #[error("eigensolver did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("need at least {needed} participants, have {have}")]
    TooFewParticipants { needed: usize, have: usize },
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
}

/// Sparse participants × statements matrix of effective votes. Missing
/// cells (never voted) are distinct from Pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteMatrix {
    row_ids: Vec<ParticipantId>,
    col_ids: Vec<StatementId>,
    rows: Vec<Vec<(usize, Vote)>>,
}

impl VoteMatrix {
    /// `rows[r]` holds `(column, vote)` pairs for participant `row_ids[r]`.
    pub fn from_rows(
        row_ids: Vec<ParticipantId>,
        col_ids: Vec<StatementId>,
        mut rows: Vec<Vec<(usize, Vote)>>,
    ) -> Result<Self, OpinionError> {
        if rows.len() != row_ids.len() {
            return Err(OpinionError::InvalidMatrix(format!(
                "{} rows for {} row ids",
                rows.len(),
                row_ids.len()
            )));
        }
        for (r, cells) in rows.iter_mut().enumerate() {
            cells.sort_by_key(|(c, _)| *c);
            for pair in cells.windows(2) {
                if pair[0].0 == pair[1].0 {
                    return Err(OpinionError::InvalidMatrix(format!(
                        "duplicate cell ({r}, {})",
                        pair[0].0
                    )));
                }
            }
            if let Some((c, _)) = cells.last() {
                if *c >= col_ids.len() {
                    return Err(OpinionError::InvalidMatrix(format!(
                        "cell ({r}, {c}) out of bounds"
                    )));
                }
            }
        }
        Ok(VoteMatrix {
            row_ids,
            col_ids,
            rows,
        })
    }

    /// Builds a matrix from dense rows of optional votes.
    pub fn from_dense(
        row_ids: Vec<ParticipantId>,
        col_ids: Vec<StatementId>,
        dense: &[Vec<Option<Vote>>],
    ) -> Result<Self, OpinionError> {
        let rows = dense
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter_map(|(c, v)| v.map(|v| (c, v)))
                    .collect()
            })
            .collect();
        Self::from_rows(row_ids, col_ids, rows)
    }

    pub fn n_participants(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_statements(&self) -> usize {
        self.col_ids.len()
    }

    pub fn row_ids(&self) -> &[ParticipantId] {
        &self.row_ids
    }

    pub fn col_ids(&self) -> &[StatementId] {
        &self.col_ids
    }

    pub fn row(&self, r: usize) -> &[(usize, Vote)] {
        &self.rows[r]
    }

    pub fn get(&self, r: usize, c: usize) -> Option<Vote> {
        let row = &self.rows[r];
        row.binary_search_by_key(&c, |(col, _)| *col)
            .ok()
            .map(|i| row[i].1)
    }

    pub fn n_votes(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Iterates `(row, col, vote)` in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, Vote)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(r, cells)| cells.iter().map(move |(c, v)| (r, *c, *v)))
    }
}

/// Mean-centers each column over its observed cells; missing cells become
/// 0 afterwards, which is mean imputation. Unobserved columns are all zero.
pub fn center_and_impute(matrix: &VoteMatrix) -> Result<Dense, OpinionError> {
    let (n, m) = (matrix.n_participants(), matrix.n_statements());
    if n < 2 || m < 2 {
        return Err(OpinionError::DegenerateMatrix(format!(
            "{n} participants × {m} statements; need at least 2 × 2"
        )));
    }
    let mut sums = vec![0.0; m];
    let mut counts = vec![0usize; m];
    for (_, c, v) in matrix.entries() {
        sums[c] += f64::from(v.value());
        counts[c] += 1;
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &k)| if k == 0 { 0.0 } else { s / k as f64 })
        .collect();
    let mut dense = Dense::zeros(n, m);
    for (r, c, v) in matrix.entries() {
        dense.set(r, c, f64::from(v.value()) - means[c]);
    }
    Ok(dense)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// Per participant, in matrix row order.
    pub coords: Vec<[f64; 2]>,
    /// Per statement, in matrix column order; each component has unit norm.
    pub component_loadings: Vec<[f64; 2]>,
    /// Variance along each component (eigenvalue / (n − 1)), descending.
    pub explained_variance: [f64; 2],
    pub iterations: usize,
}

impl Projection {
    /// All participants at the origin. Used when the centered matrix has
    /// rank 0 so downstream stages can still report a degenerate result.
    pub fn degenerate(n_participants: usize, n_statements: usize) -> Self {
        let mut loadings = vec![[0.0; 2]; n_statements];
        if n_statements >= 2 {
            loadings[0][0] = 1.0;
            loadings[1][1] = 1.0;
        }
        Projection {
            coords: vec![[0.0; 2]; n_participants],
            component_loadings: loadings,
            explained_variance: [0.0; 2],
            iterations: 0,
        }
    }
}

/// Projects participants onto the top two right singular directions of the
/// centered matrix.
///
/// Block subspace iteration with Rayleigh–Ritz on `XᵀX`, applied as
/// `Xᵀ(XQ)` so the statement × statement covariance is never formed.
/// Converged when both leading Ritz pairs have residual
/// `‖XᵀXu − λu‖ ≤ 1e-9·λ₁`. Each component is signed so that its loading of
/// largest magnitude is positive.
pub fn project_2d(matrix: &VoteMatrix) -> Result<Projection, OpinionError> {
    let x = center_and_impute(matrix)?;
    project_dense(&x)
}

pub(crate) fn project_dense(x: &Dense) -> Result<Projection, OpinionError> {
    let m = x.cols;
    if x.data.iter().all(|v| *v == 0.0) {
        return Err(OpinionError::DegenerateMatrix(
            "centered matrix is zero (rank 0)".into(),
        ));
    }
    let p = BLOCK_SIZE.min(m);
    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
    let mut random_vec = move || -> Vec<f64> { (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let mut q = Dense::zeros(m, p);
    for c in 0..p {
        q.set_column(c, &random_vec());
    }
    linalg::orthonormalize(&mut q, &mut random_vec);

    for iteration in 1..=EIGEN_MAX_ITERATIONS {
        let aq = x.tmul(&x.mul(&q));
        let t = q.tmul(&aq);
        let (values, vecs) = linalg::symmetric_eigen(&symmetrize(t));
        let u = q.mul(&vecs);
        let au = aq.mul(&vecs);
        let lambda1 = values[0].max(0.0);
        let converged = (0..2).all(|k| {
            let resid: f64 = (0..m)
                .map(|i| (au.get(i, k) - values[k] * u.get(i, k)).powi(2))
                .sum::<f64>()
                .sqrt();
            resid <= EIGEN_TOLERANCE * lambda1
        });
        if converged {
            return Ok(finish_projection(x, &u, &values, iteration));
        }
        q = au;
        linalg::orthonormalize(&mut q, &mut random_vec);
    }
    Err(OpinionError::NoConvergence(EIGEN_MAX_ITERATIONS))
}

fn symmetrize(mut t: Dense) -> Dense {
    for i in 0..t.rows {
        for j in i + 1..t.cols {
            let avg = 0.5 * (t.get(i, j) + t.get(j, i));
            t.set(i, j, avg);
            t.set(j, i, avg);
        }
    }
    t
}

fn finish_projection(x: &Dense, u: &Dense, values: &[f64], iterations: usize) -> Projection {
    let (n, m) = (x.rows, x.cols);
    let mut components = [u.column(0), u.column(1)];
    for comp in components.iter_mut() {
        let norm = linalg::norm(comp);
        let mut best = 0;
        for (i, v) in comp.iter().enumerate() {
            if v.abs() > comp[best].abs() {
                best = i;
            }
        }
        let sign = if comp[best] < 0.0 { -1.0 } else { 1.0 };
        for v in comp.iter_mut() {
            *v *= sign / norm;
        }
    }
    let coords = (0..n)
        .map(|r| {
            let row = x.row(r);
            [linalg::dot(row, &components[0]), linalg::dot(row, &components[1])]
        })
        .collect();
    let component_loadings = (0..m).map(|i| [components[0][i], components[1][i]]).collect();
    let denom = (n - 1) as f64;
    let ev0 = values[0].max(0.0) / denom;
    let ev1 = (values[1].max(0.0) / denom).min(ev0);
    Projection {
        coords,
        component_loadings,
        explained_variance: [ev0, ev1],
        iterations,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateDiagnostic {
    pub k: usize,
    /// `None` when the points have fewer than `k` distinct positions.
    pub mean_silhouette: Option<f64>,
    pub sse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpinionGroups {
    pub k: usize,
    /// Group index in `[0, k)` per participant, in matrix row order.
    pub assignment: Vec<usize>,
    pub centroids: Vec<[f64; 2]>,
    pub mean_silhouette: f64,
    pub sse: f64,
    pub candidate_diagnostics: Vec<CandidateDiagnostic>,
    /// Set when no candidate k had enough distinct points, e.g. everyone
    /// voted identically.
    pub zero_variance: bool,
}

impl OpinionGroups {
    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &g in &self.assignment {
            sizes[g] += 1;
        }
        sizes
    }
}

/// Clusters projected participants. For each candidate k, k-means runs
/// from [`KMEANS_RESTARTS`] greedy farthest-point seedings and keeps the
/// lowest-SSE result; the k with the highest mean silhouette wins, ties to
/// the smaller k.
pub fn cluster(
    projection: &Projection,
    k_candidates: RangeInclusive<usize>,
    seed: u64,
) -> Result<OpinionGroups, OpinionError> {
    cluster_points(&projection.coords, k_candidates, seed)
}

/// Same as [`cluster`] on raw 2-D points.
///
/// Points are processed in a canonical (coordinate-sorted) order, so
/// permuting the input permutes the output assignment identically.
pub fn cluster_points(
    points: &[[f64; 2]],
    k_candidates: RangeInclusive<usize>,
    seed: u64,
) -> Result<OpinionGroups, OpinionError> {
    let (k_min, k_max) = (*k_candidates.start(), *k_candidates.end());
    if k_min == 0 || k_min > k_max {
        return Err(OpinionError::InvalidMatrix(format!(
            "invalid k candidates {k_min}..={k_max}"
        )));
    }
    let n = points.len();
    if n < k_max {
        return Err(OpinionError::TooFewParticipants {
            needed: k_max,
            have: n,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| cmp_point(&points[a], &points[b]));
    let sorted: Vec<[f64; 2]> = order.iter().map(|&i| points[i]).collect();
    let distinct = 1 + sorted
        .windows(2)
        .filter(|w| cmp_point(&w[0], &w[1]) != Ordering::Equal)
        .count();

    let mut diagnostics = Vec::new();
    let mut best: Option<(f64, KMeansFit)> = None;
    for k in k_candidates {
        if k > distinct {
            diagnostics.push(CandidateDiagnostic {
                k,
                mean_silhouette: None,
                sse: None,
            });
            continue;
        }
        let fit = kmeans_restarts(&sorted, k, seed);
        let sil = mean_silhouette(&sorted, &fit.assignment, k);
        diagnostics.push(CandidateDiagnostic {
            k,
            mean_silhouette: Some(sil),
            sse: Some(fit.sse),
        });
        if best.as_ref().is_none_or(|(s, _)| sil > *s) {
            best = Some((sil, fit));
        }
    }

    let (mean_sil, fit, zero_variance) = match best {
        Some((sil, fit)) => (sil, fit, distinct == 1),
        None => (0.0, degenerate_fit(&sorted, k_min), true),
    };

    let mut assignment = vec![0; n];
    for (pos, &orig) in order.iter().enumerate() {
        assignment[orig] = fit.assignment[pos];
    }
    Ok(OpinionGroups {
        k: fit.centroids.len(),
        assignment,
        centroids: fit.centroids,
        mean_silhouette: mean_sil,
        sse: fit.sse,
        candidate_diagnostics: diagnostics,
        zero_variance,
    })
}

fn cmp_point(a: &[f64; 2], b: &[f64; 2]) -> Ordering {
    a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1]))
}

#[inline]
fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

#[derive(Debug, Clone)]
struct KMeansFit {
    assignment: Vec<usize>,
    centroids: Vec<[f64; 2]>,
    sse: f64,
}

fn degenerate_fit(points: &[[f64; 2]], k: usize) -> KMeansFit {
    let n = points.len();
    let assignment: Vec<usize> = (0..n).map(|i| i.min(k - 1)).collect();
    let centroids = centroids_of(points, &assignment, k);
    let sse = sse_of(points, &assignment, &centroids);
    KMeansFit {
        assignment,
        centroids,
        sse,
    }
}

fn kmeans_restarts(points: &[[f64; 2]], k: usize, seed: u64) -> KMeansFit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    let mut by_start: BTreeMap<usize, f64> = BTreeMap::new();
    let mut best: Option<KMeansFit> = None;
    for _ in 0..KMEANS_RESTARTS {
        let first = rng.gen_range(0..points.len());
        // A restart is fully determined by its first center.
        if by_start.contains_key(&first) {
            continue;
        }
        let fit = kmeans_once(points, k, first);
        by_start.insert(first, fit.sse);
        if best.as_ref().is_none_or(|b| fit.sse < b.sse) {
            best = Some(fit);
        }
    }
    let mut fit = best.expect("at least one restart");
    canonical_labels(&mut fit);
    fit
}

/// Relabels groups by order of first appearance.
fn canonical_labels(fit: &mut KMeansFit) {
    let k = fit.centroids.len();
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    for &g in &fit.assignment {
        if map[g] == usize::MAX {
            map[g] = next;
            next += 1;
        }
    }
    let mut centroids = vec![[0.0; 2]; k];
    for (old, &new) in map.iter().enumerate() {
        centroids[new] = fit.centroids[old];
    }
    for g in fit.assignment.iter_mut() {
        *g = map[*g];
    }
    fit.centroids = centroids;
}

fn farthest_point_seeds(points: &[[f64; 2]], k: usize, first: usize) -> Vec<[f64; 2]> {
    let mut centers = vec![points[first]];
    let mut nearest: Vec<f64> = points.iter().map(|p| dist2(p, &points[first])).collect();
    while centers.len() < k {
        let mut far = 0;
        for (i, d) in nearest.iter().enumerate() {
            if *d > nearest[far] {
                far = i;
            }
        }
        let c = points[far];
        centers.push(c);
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
    }
    centers
}

fn centroids_of(points: &[[f64; 2]], assignment: &[usize], k: usize) -> Vec<[f64; 2]> {
    let mut sums = vec![[0.0; 2]; k];
    let mut counts = vec![0usize; k];
    for (p, &g) in points.iter().zip(assignment) {
        sums[g][0] += p[0];
        sums[g][1] += p[1];
        counts[g] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &c)| {
            if c == 0 {
                [f64::NAN; 2]
            } else {
                [s[0] / c as f64, s[1] / c as f64]
            }
        })
        .collect()
}

fn sse_of(points: &[[f64; 2]], assignment: &[usize], centroids: &[[f64; 2]]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &g)| dist2(p, &centroids[g]))
        .sum()
}

/// One k-means run: farthest-point seeding from `first`, Lloyd iterations
/// to an assignment fixpoint, then single-point (Hartigan) moves until no
/// move lowers SSE. Requires at least `k` distinct points.
fn kmeans_once(points: &[[f64; 2]], k: usize, first: usize) -> KMeansFit {
    let seeds = farthest_point_seeds(points, k, first);
    let mut assignment: Vec<usize> = points
        .iter()
        .map(|p| nearest_center(p, &seeds, None))
        .collect();
    let mut centroids = centroids_of(points, &assignment, k);
    for _round in 0..1000 {
        // Lloyd
        for _ in 0..10_000 {
            fill_empty_clusters(points, &mut assignment, &mut centroids, k);
            let mut changed = false;
            for (i, p) in points.iter().enumerate() {
                let g = nearest_center(p, &centroids, Some(assignment[i]));
                if g != assignment[i] {
                    assignment[i] = g;
                    changed = true;
                }
            }
            centroids = centroids_of(points, &assignment, k);
            if !changed {
                break;
            }
        }
        fill_empty_clusters(points, &mut assignment, &mut centroids, k);
        if !hartigan_pass(points, &mut assignment, &mut centroids, k) {
            break;
        }
    }
    let centroids = centroids_of(points, &assignment, k);
    let sse = sse_of(points, &assignment, &centroids);
    KMeansFit {
        assignment,
        centroids,
        sse,
    }
}

/// Nearest center; keeps `current` unless another center is strictly closer.
fn nearest_center(p: &[f64; 2], centers: &[[f64; 2]], current: Option<usize>) -> usize {
    let mut best = current.unwrap_or(0);
    let mut best_d = dist2(p, &centers[best]);
    for (g, c) in centers.iter().enumerate() {
        let d = dist2(p, c);
        if d < best_d {
            best = g;
            best_d = d;
        }
    }
    best
}

fn fill_empty_clusters(
    points: &[[f64; 2]],
    assignment: &mut [usize],
    centroids: &mut Vec<[f64; 2]>,
    k: usize,
) {
    loop {
        let mut sizes = vec![0usize; k];
        for &g in assignment.iter() {
            sizes[g] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        // Move the point farthest from its centroid out of a multi-member group.
        let mut far: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            let g = assignment[i];
            if sizes[g] < 2 {
                continue;
            }
            let d = dist2(p, &centroids[g]);
            if far.is_none_or(|(_, fd)| d > fd) {
                far = Some((i, d));
            }
        }
        let (i, _) = far.expect("n >= k guarantees a multi-member group");
        assignment[i] = empty;
        *centroids = centroids_of(points, assignment, k);
    }
}

/// One sweep of single-point moves that strictly lower SSE. Returns whether
/// any point moved.
fn hartigan_pass(
    points: &[[f64; 2]],
    assignment: &mut [usize],
    centroids: &mut [[f64; 2]],
    k: usize,
) -> bool {
    let mut sizes = vec![0usize; k];
    for &g in assignment.iter() {
        sizes[g] += 1;
    }
    let mut moved = false;
    for (i, p) in points.iter().enumerate() {
        let a = assignment[i];
        if sizes[a] < 2 {
            continue;
        }
        let na = sizes[a] as f64;
        let removal_gain = na / (na - 1.0) * dist2(p, &centroids[a]);
        let mut best: Option<(usize, f64)> = None;
        for b in 0..k {
            if b == a {
                continue;
            }
            let nb = sizes[b] as f64;
            let cost = nb / (nb + 1.0) * dist2(p, &centroids[b]);
            if best.is_none_or(|(_, c)| cost < c) {
                best = Some((b, cost));
            }
        }
        let Some((b, cost)) = best else { continue };
        if cost < removal_gain * (1.0 - 1e-12) {
            let nb = sizes[b] as f64;
            for d in 0..2 {
                centroids[a][d] = (centroids[a][d] * na - p[d]) / (na - 1.0);
                centroids[b][d] = (centroids[b][d] * nb + p[d]) / (nb + 1.0);
            }
            sizes[a] -= 1;
            sizes[b] += 1;
            assignment[i] = b;
            moved = true;
        }
    }
    moved
}

/// Mean silhouette over all points. Members of singleton groups score 0.
pub fn mean_silhouette(points: &[[f64; 2]], assignment: &[usize], k: usize) -> f64 {
    let n = points.len();
    if n == 0 {
        return 0.0;
    }
    let mut sizes = vec![0usize; k];
    for &g in assignment {
        sizes[g] += 1;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[assignment[j]] += dist2(&points[i], &points[j]).sqrt();
            }
        }
        let own = assignment[i];
        if sizes[own] < 2 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&g| g != own && sizes[g] > 0)
            .map(|g| sums[g] / sizes[g] as f64)
            .fold(f64::INFINITY, f64::min);
        if !b.is_finite() {
            continue;
        }
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

/// Within-cluster sum of squared distances to group means.
pub fn within_cluster_sse(points: &[[f64; 2]], assignment: &[usize], k: usize) -> f64 {
    let centroids = centroids_of(points, assignment, k);
    sse_of(points, assignment, &centroids)
}
