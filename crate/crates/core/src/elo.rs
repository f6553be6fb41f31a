//! Elo ratings from pairwise preference records.
//!
//! Classical Elo scale: `p(a beats b) = 1 / (1 + 10^(−(R_a − R_b)/400))`,
//! fitted by maximum likelihood with the anchor pinned at 0. Each
//! dimension is fitted on its own records. Uncertainty is a nonparametric
//! bootstrap over records, reported as half the width of the central 95%
//! percentile interval.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::{self, Write as _};
use std::io::Read;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GRADIENT_TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 100_000;
pub const DEFAULT_RESAMPLES: usize = 1000;

/// Elo points per natural-log odds unit.
pub fn elo_per_logit() -> f64 {
    400.0 / std::f64::consts::LN_10
}

/// Probability that a player rated `ra` beats one rated `rb`.
pub fn win_probability(ra: f64, rb: f64) -> f64 {
    1.0 / (1.0 + 10f64.powf(-(ra - rb) / 400.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Winner {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dimension {
    Helpfulness,
    Harmlessness,
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dimension::Helpfulness => "Helpfulness",
            Dimension::Harmlessness => "Harmlessness",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub model_a: String,
    pub model_b: String,
    pub winner: Winner,
    pub dimension: Dimension,
}

impl ComparisonRecord {
    pub fn new(a: &str, b: &str, winner: Winner, dimension: Dimension) -> Self {
        ComparisonRecord {
            model_a: a.to_string(),
            model_b: b.to_string(),
            winner,
            dimension,
        }
    }

    pub fn winner_loser(&self) -> (&str, &str) {
        match self.winner {
            Winner::A => (&self.model_a, &self.model_b),
            Winner::B => (&self.model_b, &self.model_a),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EloError {
    #[error("no comparison records")]
    NoRecords,
    #[error("anchor {0:?} does not appear in the records")]
    UnknownAnchor(String),
    #[error("models not connected to the anchor: {0:?}")]
    DisconnectedGraph(Vec<String>),
    #[error("record compares {0:?} with itself")]
    SelfComparison(String),
    #[error("optimizer stopped after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NoConvergence { iterations: usize, gradient_norm: f64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Ratings for one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EloFit {
    /// `None` for models whose rating diverges: they never lose to, or never
    /// beat, the anchor's strongly connected group.
    pub ratings: BTreeMap<String, Option<f64>>,
    pub n_comparisons: BTreeMap<String, usize>,
    pub identifiable: bool,
    pub iterations: usize,
}

/// Reachability-based strongly connected component of `start` in the
/// directed graph "loser → winner".
fn strong_component(models: &[String], wins: &[Vec<u32>], start: usize) -> BTreeSet<usize> {
    let reach = |forward: bool| {
        let mut seen = vec![false; models.len()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            for j in 0..models.len() {
                let edge = if forward { wins[j][i] } else { wins[i][j] };
                if edge > 0 && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen
    };
    let (f, b) = (reach(true), reach(false));
    (0..models.len()).filter(|&i| f[i] && b[i]).collect()
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Maximum-likelihood ratings for records of a single dimension.
pub fn fit_ratings(records: &[ComparisonRecord], anchor: &str) -> Result<EloFit, EloError> {
    if records.is_empty() {
        return Err(EloError::NoRecords);
    }
    let models: Vec<String> = records
        .iter()
        .flat_map(|r| [r.model_a.clone(), r.model_b.clone()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<&str, usize> = models.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect();
    let a = *index
        .get(anchor)
        .ok_or_else(|| EloError::UnknownAnchor(anchor.to_string()))?;
    let m = models.len();
    let mut wins = vec![vec![0u32; m]; m];
    let mut n_comparisons: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        if r.model_a == r.model_b {
            return Err(EloError::SelfComparison(r.model_a.clone()));
        }
        let (w, l) = r.winner_loser();
        wins[index[w]][index[l]] += 1;
        *n_comparisons.entry(r.model_a.clone()).or_default() += 1;
        *n_comparisons.entry(r.model_b.clone()).or_default() += 1;
    }

    // Undirected connectivity to the anchor.
    let mut seen = vec![false; m];
    let mut queue = VecDeque::from([a]);
    seen[a] = true;
    while let Some(i) = queue.pop_front() {
        for j in 0..m {
            if (wins[i][j] > 0 || wins[j][i] > 0) && !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    let unreachable: Vec<String> = (0..m).filter(|&i| !seen[i]).map(|i| models[i].clone()).collect();
    if !unreachable.is_empty() {
        return Err(EloError::DisconnectedGraph(unreachable));
    }

    // Only the anchor's strongly connected group has a finite optimum; the
    // within-group optimum is unaffected by comparisons leaving the group.
    let group: Vec<usize> = strong_component(&models, &wins, a).into_iter().collect();
    let free: Vec<usize> = group.iter().copied().filter(|&i| i != a).collect();
    let (theta, iterations) = maximize(&wins, a, &free)?;
    let ratings = models
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let r = if i == a {
                Some(0.0)
            } else if group.contains(&i) {
                Some(theta[i] * elo_per_logit())
            } else {
                None
            };
            (name.clone(), r)
        })
        .collect();
    Ok(EloFit {
        ratings,
        n_comparisons,
        identifiable: group.len() == m,
        iterations,
    })
}

/// Diagonally preconditioned gradient ascent with backtracking on the log
/// likelihood in logit units, over the `free` models (anchor fixed at 0).
/// Stops when the gradient norm falls below [`GRADIENT_TOLERANCE`].
fn maximize(wins: &[Vec<u32>], anchor: usize, free: &[usize]) -> Result<(Vec<f64>, usize), EloError> {
    let m = wins.len();
    let mut members = free.to_vec();
    members.push(anchor);
    let loglik = |theta: &[f64]| -> f64 {
        let mut ll = 0.0;
        for &i in &members {
            for &j in &members {
                if wins[i][j] > 0 {
                    ll -= f64::from(wins[i][j]) * softplus(-(theta[i] - theta[j]));
                }
            }
        }
        ll
    };
    let mut theta = vec![0.0; m];
    if free.is_empty() {
        return Ok((theta, 0));
    }
    let mut ll = loglik(&theta);
    let mut gradient_norm = f64::INFINITY;
    for it in 0..MAX_ITERATIONS {
        let mut grad = vec![0.0; m];
        let mut curv = vec![0.0; m];
        for &i in free {
            for &j in &members {
                if i == j {
                    continue;
                }
                let n = f64::from(wins[i][j] + wins[j][i]);
                if n == 0.0 {
                    continue;
                }
                let p = sigmoid(theta[i] - theta[j]);
                grad[i] += f64::from(wins[i][j]) - n * p;
                curv[i] += n * p * (1.0 - p);
            }
        }
        gradient_norm = free.iter().map(|&i| grad[i] * grad[i]).sum::<f64>().sqrt();
        if gradient_norm <= GRADIENT_TOLERANCE {
            return Ok((theta, it));
        }
        let dir: Vec<f64> = (0..m)
            .map(|i| if curv[i] > 0.0 { grad[i] / curv[i] } else { 0.0 })
            .collect();
        let slope: f64 = free.iter().map(|&i| grad[i] * dir[i]).sum();
        let mut step = 1.0;
        loop {
            let trial: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + step * d).collect();
            let trial_ll = loglik(&trial);
            // Near the optimum the gain drops below the rounding of the
            // log likelihood itself; allow for that.
            let noise = 1e-14 * (1.0 + ll.abs());
            if trial_ll + noise >= ll + 1e-4 * step * slope {
                theta = trial;
                ll = trial_ll;
                break;
            }
            step *= 0.5;
            if step < 1e-30 {
                // No representable ascent remains; the gradient is at the
                // noise floor of the likelihood.
                return Err(EloError::NoConvergence {
                    iterations: it,
                    gradient_norm,
                });
            }
        }
    }
    Err(EloError::NoConvergence {
        iterations: MAX_ITERATIONS,
        gradient_norm,
    })
}

/// Fits every dimension present in `records`.
pub fn fit_elo(
    records: &[ComparisonRecord],
    anchor: &str,
) -> Result<BTreeMap<Dimension, EloFit>, EloError> {
    let by_dim = split_by_dimension(records);
    if by_dim.is_empty() {
        return Err(EloError::NoRecords);
    }
    by_dim
        .into_iter()
        .map(|(d, recs)| Ok((d, fit_ratings(&recs, anchor)?)))
        .collect()
}

fn split_by_dimension(records: &[ComparisonRecord]) -> BTreeMap<Dimension, Vec<ComparisonRecord>> {
    let mut out: BTreeMap<Dimension, Vec<ComparisonRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.dimension).or_default().push(r.clone());
    }
    out
}

/// Linear-interpolation percentile of sorted data (`q` in [0, 1]).
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Per model; `None` when the full-sample rating is not identifiable or
    /// no resample produced a finite rating.
    pub half_widths: BTreeMap<String, Option<f64>>,
    /// Resamples in which a model's rating was undefined.
    pub failed_resamples: BTreeMap<String, usize>,
    pub n_resamples: usize,
}

/// Resamples records with replacement `n_resamples` times. Resample `b`
/// draws from its own ChaCha stream of `seed`, so results do not depend on
/// evaluation order.
pub fn bootstrap_ci(
    records: &[ComparisonRecord],
    anchor: &str,
    n_resamples: usize,
    seed: u64,
) -> Result<BootstrapResult, EloError> {
    let full = fit_ratings(records, anchor)?;
    let mut samples: BTreeMap<String, Vec<f64>> =
        full.ratings.keys().map(|m| (m.clone(), Vec::new())).collect();
    let mut failed: BTreeMap<String, usize> = full.ratings.keys().map(|m| (m.clone(), 0)).collect();
    let n = records.len();
    let mut resample = Vec::with_capacity(n);
    for b in 0..n_resamples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        resample.clear();
        resample.extend((0..n).map(|_| records[rng.gen_range(0..n)].clone()));
        let fit = fit_ratings(&resample, anchor).ok();
        for (model, values) in samples.iter_mut() {
            match fit.as_ref().and_then(|f| f.ratings.get(model).copied().flatten()) {
                Some(r) => values.push(r),
                None => *failed.get_mut(model).expect("model listed") += 1,
            }
        }
    }
    let half_widths = samples
        .into_iter()
        .map(|(model, mut values)| {
            let hw = if full.ratings[&model].is_none() || values.is_empty() {
                None
            } else {
                values.sort_by(f64::total_cmp);
                Some((percentile(&values, 0.975) - percentile(&values, 0.025)) / 2.0)
            };
            (model, hw)
        })
        .collect();
    Ok(BootstrapResult {
        half_widths,
        failed_resamples: failed,
        n_resamples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EloEntry {
    pub model: String,
    pub dimension: Dimension,
    pub rating: Option<f64>,
    /// Half-width of the central 95% bootstrap percentile interval.
    pub half_width: Option<f64>,
    pub n_comparisons: usize,
    pub identifiable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EloReport {
    pub anchor: String,
    pub interval: String,
    pub n_resamples: usize,
    pub seed: u64,
    pub entries: Vec<EloEntry>,
}

/// Fit plus bootstrap for every dimension.
pub fn elo_report(
    records: &[ComparisonRecord],
    anchor: &str,
    n_resamples: usize,
    seed: u64,
) -> Result<EloReport, EloError> {
    let mut entries = Vec::new();
    let by_dim = split_by_dimension(records);
    if by_dim.is_empty() {
        return Err(EloError::NoRecords);
    }
    for (dim, recs) in by_dim {
        let fit = fit_ratings(&recs, anchor)?;
        let boot = bootstrap_ci(&recs, anchor, n_resamples, seed)?;
        for (model, rating) in &fit.ratings {
            entries.push(EloEntry {
                model: model.clone(),
                dimension: dim,
                rating: *rating,
                half_width: if model == anchor { Some(0.0) } else { boot.half_widths[model] },
                n_comparisons: fit.n_comparisons[model],
                identifiable: rating.is_some(),
            });
        }
    }
    Ok(EloReport {
        anchor: anchor.to_string(),
        interval: "95% bootstrap percentile half-width".into(),
        n_resamples,
        seed,
        entries,
    })
}

impl EloReport {
    /// Rows per dimension, one column per model with the anchor last.
    pub fn to_table(&self) -> String {
        let mut models: Vec<&str> = self
            .entries
            .iter()
            .map(|e| e.model.as_str())
            .filter(|m| *m != self.anchor)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        models.push(&self.anchor);
        let dims: BTreeSet<Dimension> = self.entries.iter().map(|e| e.dimension).collect();
        let mut rows: Vec<Vec<String>> = vec![std::iter::once(String::new())
            .chain(models.iter().map(|m| m.to_string()))
            .collect()];
        for d in dims {
            let mut row = vec![format!("{d} (Elo)")];
            for m in &models {
                let e = self.entries.iter().find(|e| e.dimension == d && e.model == *m);
                row.push(match e {
                    None => "-".into(),
                    Some(e) if e.model == self.anchor => "0.0".into(),
                    Some(EloEntry { rating: None, .. }) => "not identifiable".into(),
                    Some(EloEntry {
                        rating: Some(r),
                        half_width,
                        ..
                    }) => match half_width {
                        Some(h) => format!("{r:.1} ± {h:.1}"),
                        None => format!("{r:.1}"),
                    },
                });
            }
            rows.push(row);
        }
        let widths: Vec<usize> = (0..=models.len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &rows {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", cells.join(" | ").trim_end());
        }
        let _ = writeln!(
            out,
            "± is the {} over {} resamples (seed {}); {} is fixed at 0.",
            self.interval, self.n_resamples, self.seed, self.anchor
        );
        out
    }
}

#[derive(Deserialize)]
struct RawRecord {
    model_a: String,
    model_b: String,
    winner: String,
    dimension: String,
}

/// Reads `model_a,model_b,winner,dimension` CSV. `winner` is `A`, `B`, or
/// one of the two model names.
pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<ComparisonRecord>, EloError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<RawRecord>().enumerate() {
        let line = i + 2;
        let raw = row.map_err(|e| EloError::Parse {
            line,
            message: e.to_string(),
        })?;
        let err = |message: String| EloError::Parse { line, message };
        if raw.model_a == raw.model_b {
            return Err(err(format!("model_a and model_b are both {:?}", raw.model_a)));
        }
        let winner = if raw.winner.eq_ignore_ascii_case("a") || raw.winner == raw.model_a {
            Winner::A
        } else if raw.winner.eq_ignore_ascii_case("b") || raw.winner == raw.model_b {
            Winner::B
        } else {
            return Err(err(format!("unknown winner {:?}", raw.winner)));
        };
        let dimension = match raw.dimension.to_ascii_lowercase().as_str() {
            "helpfulness" => Dimension::Helpfulness,
            "harmlessness" | "harmfulness" => Dimension::Harmlessness,
            other => return Err(err(format!("unknown dimension {other:?}"))),
        };
        out.push(ComparisonRecord {
            model_a: raw.model_a,
            model_b: raw.model_b,
            winner,
            dimension,
        });
    }
    Ok(out)
}
