//! Statement scoring: group-aware consensus, polarization indices and
//! per-group representativeness.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{StatementId, Vote};
use crate::opinion::{OpinionGroups, VoteMatrix};

/// Minimum in-group seen count for a statement to be ranked as
/// representative of that group.
pub const DEFAULT_REPNESS_MIN_SEEN: u32 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConsensusError {
    #[error("no opinion groups")]
    NoGroups,
    #[error("no votes")]
    NoVotes,
    #[error("empty report")]
    EmptyReport,
    #[error("assignment has {assignment} entries for {rows} matrix rows")]
    ShapeMismatch { assignment: usize, rows: usize },
}

/// Whether Pass votes count toward the seen total in the agree-probability
/// estimate. Counting them is the default; excluding them is offered for
/// sensitivity analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PassPolicy {
    #[default]
    CountAsSeen,
    ExcludeFromSeen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VoteCounts {
    pub agree: u32,
    pub disagree: u32,
    pub pass: u32,
}

impl VoteCounts {
    pub fn new(agree: u32, disagree: u32, pass: u32) -> Self {
        VoteCounts {
            agree,
            disagree,
            pass,
        }
    }

    pub fn seen(&self) -> u32 {
        self.agree + self.disagree + self.pass
    }

    pub fn count(&self, vote: Vote) -> u32 {
        match vote {
            Vote::Agree => self.agree,
            Vote::Disagree => self.disagree,
            Vote::Pass => self.pass,
        }
    }

    pub fn add(&mut self, vote: Vote) {
        match vote {
            Vote::Agree => self.agree += 1,
            Vote::Disagree => self.disagree += 1,
            Vote::Pass => self.pass += 1,
        }
    }

    fn minus(&self, other: &VoteCounts) -> VoteCounts {
        VoteCounts {
            agree: self.agree - other.agree,
            disagree: self.disagree - other.disagree,
            pass: self.pass - other.pass,
        }
    }
}

/// Add-one smoothed frequency `(count + 1) / (seen + 2)`.
pub fn smoothed(count: u32, seen: u32) -> f64 {
    (f64::from(count) + 1.0) / (f64::from(seen) + 2.0)
}

pub fn estimate_agree_prob(counts: &VoteCounts, policy: PassPolicy) -> f64 {
    let seen = match policy {
        PassPolicy::CountAsSeen => counts.seen(),
        PassPolicy::ExcludeFromSeen => counts.agree + counts.disagree,
    };
    smoothed(counts.agree, seen)
}

/// Group-aware consensus: product over groups of the smoothed agree
/// probability. Strictly inside (0, 1).
pub fn gac(groups: &[VoteCounts], policy: PassPolicy) -> Result<f64, ConsensusError> {
    if groups.is_empty() {
        return Err(ConsensusError::NoGroups);
    }
    Ok(groups
        .iter()
        .map(|g| estimate_agree_prob(g, policy))
        .product())
}

/// `(pi, adjusted_pi)` with `pi = 1 − |a − d| / n` and
/// `adjusted_pi = pi · (a + d) / n`.
pub fn polarization_index(
    agree: u32,
    disagree: u32,
    pass: u32,
) -> Result<(f64, f64), ConsensusError> {
    let total = u64::from(agree) + u64::from(disagree) + u64::from(pass);
    if total == 0 {
        return Err(ConsensusError::NoVotes);
    }
    let spread = total - u64::from(agree.abs_diff(disagree));
    let decided = u64::from(agree) + u64::from(disagree);
    // Single rounding each so exact fractions land on the nearest double.
    let pi = spread as f64 / total as f64;
    let adjusted = (spread * decided) as f64 / (total * total) as f64;
    Ok((pi, adjusted))
}

/// Relative odds `P̂(v | g) / P̂(v | ¬g)`, both add-one smoothed.
pub fn representativeness(in_group: &VoteCounts, complement: &VoteCounts, vote: Vote) -> f64 {
    smoothed(in_group.count(vote), in_group.seen())
        / smoothed(complement.count(vote), complement.seen())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Repness {
    pub agree: f64,
    pub disagree: f64,
    pub pass: f64,
}

impl Repness {
    pub fn get(&self, vote: Vote) -> f64 {
        match vote {
            Vote::Agree => self.agree,
            Vote::Disagree => self.disagree,
            Vote::Pass => self.pass,
        }
    }

    /// Largest ratio and its vote kind; ties resolve Agree, Disagree, Pass.
    pub fn max(&self) -> (Vote, f64) {
        Vote::ALL
            .iter()
            .map(|&v| (v, self.get(v)))
            .fold((Vote::Agree, f64::NEG_INFINITY), |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatementConsensus {
    pub statement: StatementId,
    pub gac: f64,
    /// `None` when nobody voted on the statement.
    pub pi: Option<f64>,
    pub adjusted_pi: Option<f64>,
    pub overall: VoteCounts,
    pub groups: Vec<VoteCounts>,
    pub repness: Vec<Repness>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub gac: Summary,
    pub pi: Option<Summary>,
    pub adjusted_pi: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusReport {
    pub n_groups: usize,
    pub pass_policy: PassPolicy,
    /// Ascending statement id.
    pub statements: Vec<StatementConsensus>,
    pub summary: ReportSummary,
}

impl ConsensusReport {
    pub fn get(&self, statement: StatementId) -> Option<&StatementConsensus> {
        self.statements
            .binary_search_by_key(&statement, |s| s.statement)
            .ok()
            .map(|i| &self.statements[i])
    }

    pub fn gac_by_statement(&self) -> BTreeMap<StatementId, f64> {
        self.statements.iter().map(|s| (s.statement, s.gac)).collect()
    }
}

/// Per-statement, per-group vote counts.
pub fn group_stats(
    matrix: &VoteMatrix,
    assignment: &[usize],
    k: usize,
) -> Result<Vec<Vec<VoteCounts>>, ConsensusError> {
    if assignment.len() != matrix.n_participants() {
        return Err(ConsensusError::ShapeMismatch {
            assignment: assignment.len(),
            rows: matrix.n_participants(),
        });
    }
    if k == 0 {
        return Err(ConsensusError::NoGroups);
    }
    let mut stats = vec![vec![VoteCounts::default(); k]; matrix.n_statements()];
    for (r, c, v) in matrix.entries() {
        stats[c][assignment[r]].add(v);
    }
    Ok(stats)
}

pub fn compute_report(
    matrix: &VoteMatrix,
    groups: &OpinionGroups,
    policy: PassPolicy,
) -> Result<ConsensusReport, ConsensusError> {
    compute_report_from_assignment(matrix, &groups.assignment, groups.k, policy)
}

pub fn compute_report_from_assignment(
    matrix: &VoteMatrix,
    assignment: &[usize],
    k: usize,
    policy: PassPolicy,
) -> Result<ConsensusReport, ConsensusError> {
    let stats = group_stats(matrix, assignment, k)?;
    let mut statements: Vec<StatementConsensus> = matrix
        .col_ids()
        .iter()
        .zip(stats)
        .map(|(&statement, per_group)| {
            let mut overall = VoteCounts::default();
            for g in &per_group {
                overall.agree += g.agree;
                overall.disagree += g.disagree;
                overall.pass += g.pass;
            }
            let (pi, adjusted_pi) =
                match polarization_index(overall.agree, overall.disagree, overall.pass) {
                    Ok((p, a)) => (Some(p), Some(a)),
                    Err(_) => (None, None),
                };
            let repness = per_group
                .iter()
                .map(|g| {
                    let rest = overall.minus(g);
                    Repness {
                        agree: representativeness(g, &rest, Vote::Agree),
                        disagree: representativeness(g, &rest, Vote::Disagree),
                        pass: representativeness(g, &rest, Vote::Pass),
                    }
                })
                .collect();
            StatementConsensus {
                statement,
                gac: gac(&per_group, policy).expect("k >= 1"),
                pi,
                adjusted_pi,
                overall,
                groups: per_group,
                repness,
            }
        })
        .collect();
    statements.sort_by_key(|s| s.statement);
    let gacs: Vec<f64> = statements.iter().map(|s| s.gac).collect();
    let pis: Vec<f64> = statements.iter().filter_map(|s| s.pi).collect();
    let adj: Vec<f64> = statements.iter().filter_map(|s| s.adjusted_pi).collect();
    let summary = ReportSummary {
        gac: summarize(&gacs)?,
        pi: summarize(&pis).ok(),
        adjusted_pi: summarize(&adj).ok(),
    };
    Ok(ConsensusReport {
        n_groups: k,
        pass_policy: policy,
        statements,
        summary,
    })
}

/// Mean, median (average of the middle pair for even counts), min, max.
pub fn summarize(values: &[f64]) -> Result<Summary, ConsensusError> {
    if values.is_empty() {
        return Err(ConsensusError::EmptyReport);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    Ok(Summary {
        mean: sorted.iter().sum::<f64>() / n as f64,
        median,
        min: sorted[0],
        max: sorted[n - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentativeStatement {
    pub statement: StatementId,
    pub vote: Vote,
    pub repness: f64,
    pub group_counts: VoteCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentativeList {
    pub group: usize,
    pub statements: Vec<RepresentativeStatement>,
    /// No statement reached the in-group seen threshold.
    pub low_data: bool,
}

/// Top `n` statements for `group` by their largest repness over vote kinds,
/// among statements seen at least `min_seen` times inside the group. Ties go
/// to the lower statement id.
pub fn top_representative_statements(
    report: &ConsensusReport,
    group: usize,
    n: usize,
    min_seen: u32,
) -> RepresentativeList {
    let mut eligible: Vec<RepresentativeStatement> = report
        .statements
        .iter()
        .filter_map(|s| {
            let counts = *s.groups.get(group)?;
            if counts.seen() < min_seen {
                return None;
            }
            let (vote, repness) = s.repness[group].max();
            Some(RepresentativeStatement {
                statement: s.statement,
                vote,
                repness,
                group_counts: counts,
            })
        })
        .collect();
    let low_data = eligible.is_empty();
    eligible.sort_by(|a, b| {
        b.repness
            .total_cmp(&a.repness)
            .then(a.statement.cmp(&b.statement))
    });
    eligible.truncate(n);
    RepresentativeList {
        group,
        statements: eligible,
        low_data,
    }
}

/// CSV with one row per statement: id, text, scores, then
/// agree/disagree/pass/seen for each group.
pub fn report_csv(report: &ConsensusReport, texts: &BTreeMap<StatementId, String>) -> String {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "statement_id".to_string(),
        "text".into(),
        "gac".into(),
        "pi".into(),
        "adjusted_pi".into(),
    ];
    for g in 0..report.n_groups {
        for field in ["agree", "disagree", "pass", "seen"] {
            header.push(format!("g{g}_{field}"));
        }
    }
    wtr.write_record(&header).expect("in-memory write");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in &report.statements {
        let mut row = vec![
            s.statement.to_string(),
            texts.get(&s.statement).cloned().unwrap_or_default(),
            s.gac.to_string(),
            opt(s.pi),
            opt(s.adjusted_pi),
        ];
        for g in &s.groups {
            row.extend([g.agree, g.disagree, g.pass, g.seen()].map(|v| v.to_string()));
        }
        wtr.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(wtr.into_inner().expect("flush")).expect("utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn smoothed_agree_probability() {
        let p = PassPolicy::CountAsSeen;
        assert_eq!(estimate_agree_prob(&VoteCounts::new(0, 0, 0), p), 0.5);
        assert!(close(estimate_agree_prob(&VoteCounts::new(3, 1, 0), p), 4.0 / 6.0));
        assert!(close(estimate_agree_prob(&VoteCounts::new(10, 0, 0), p), 11.0 / 12.0));
    }

    #[test]
    fn pass_policy_changes_seen() {
        let c = VoteCounts::new(2, 0, 2);
        assert!(close(estimate_agree_prob(&c, PassPolicy::CountAsSeen), 3.0 / 6.0));
        assert!(close(estimate_agree_prob(&c, PassPolicy::ExcludeFromSeen), 3.0 / 4.0));
    }

    #[test]
    fn gac_examples() {
        let p = PassPolicy::CountAsSeen;
        let v = gac(&[VoteCounts::new(3, 1, 0), VoteCounts::new(2, 0, 2)], p).unwrap();
        assert!(close(v, 1.0 / 3.0));
        let v = gac(&[VoteCounts::default(), VoteCounts::default()], p).unwrap();
        assert_eq!(v, 0.25);
        let v = gac(&[VoteCounts::new(4, 0, 0)], p).unwrap();
        assert!(close(v, 5.0 / 6.0));
        assert_eq!(gac(&[], p), Err(ConsensusError::NoGroups));
    }

    #[test]
    fn polarization_examples() {
        assert_eq!(polarization_index(10, 10, 0).unwrap(), (1.0, 1.0));
        assert_eq!(polarization_index(10, 0, 0).unwrap(), (0.0, 0.0));
        assert_eq!(polarization_index(6, 2, 2).unwrap(), (0.6, 0.48));
        assert_eq!(polarization_index(0, 0, 0), Err(ConsensusError::NoVotes));
    }

    #[test]
    fn repness_examples() {
        let same = VoteCounts::new(3, 2, 1);
        assert_eq!(representativeness(&same, &same, Vote::Agree), 1.0);
        let g = VoteCounts::new(9, 1, 0);
        let rest = VoteCounts::new(1, 9, 0);
        assert!(close(representativeness(&g, &rest, Vote::Agree), 5.0));
        let g = VoteCounts::new(5, 0, 0);
        let unseen = VoteCounts::default();
        assert!(close(
            representativeness(&g, &unseen, Vote::Agree),
            (6.0 / 7.0) / 0.5
        ));
    }

    #[test]
    fn summarize_examples() {
        let s = summarize(&[0.2, 0.4, 0.9]).unwrap();
        assert!(close(s.mean, 0.5));
        assert_eq!((s.median, s.min, s.max), (0.4, 0.2, 0.9));
        let s = summarize(&[0.7]).unwrap();
        assert_eq!((s.mean, s.median, s.min, s.max), (0.7, 0.7, 0.7, 0.7));
        let s = summarize(&[0.1, 0.3, 0.5, 0.9]).unwrap();
        assert!(close(s.median, 0.4));
        assert_eq!(summarize(&[]), Err(ConsensusError::EmptyReport));
    }

    fn report_with(ratios: &[(u32, VoteCounts, VoteCounts)]) -> ConsensusReport {
        let statements = ratios
            .iter()
            .map(|(id, g, rest)| {
                let mut overall = *g;
                overall.agree += rest.agree;
                overall.disagree += rest.disagree;
                overall.pass += rest.pass;
                let rep = |a: &VoteCounts, b: &VoteCounts| Repness {
                    agree: representativeness(a, b, Vote::Agree),
                    disagree: representativeness(a, b, Vote::Disagree),
                    pass: representativeness(a, b, Vote::Pass),
                };
                StatementConsensus {
                    statement: StatementId(*id),
                    gac: 0.5,
                    pi: None,
                    adjusted_pi: None,
                    overall,
                    groups: vec![*g, *rest],
                    repness: vec![rep(g, rest), rep(rest, g)],
                }
            })
            .collect();
        ConsensusReport {
            n_groups: 2,
            pass_policy: PassPolicy::CountAsSeen,
            statements,
            summary: ReportSummary {
                gac: summarize(&[0.5]).unwrap(),
                pi: None,
                adjusted_pi: None,
            },
        }
    }

    #[test]
    fn top_representative_tie_break_by_id() {
        let c = VoteCounts::new(4, 4, 4);
        let report = report_with(&[(3, c, c), (1, c, c), (2, c, c)]);
        let top = top_representative_statements(&report, 0, 2, 10);
        let ids: Vec<u32> = top.statements.iter().map(|s| s.statement.0).collect();
        assert_eq!(ids, vec![1, 2]);
        assert!(!top.low_data);
    }

    #[test]
    fn top_representative_dominant_first() {
        let even = VoteCounts::new(5, 5, 0);
        let report = report_with(&[
            (0, VoteCounts::new(6, 4, 0), VoteCounts::new(5, 5, 0)),
            (1, even, even),
            (2, VoteCounts::new(9, 1, 0), VoteCounts::new(1, 9, 0)),
        ]);
        let top = top_representative_statements(&report, 0, 3, 10);
        assert_eq!(top.statements[0].statement, StatementId(2));
        assert!(close(top.statements[0].repness, 5.0));
        assert_eq!(top.statements[0].vote, Vote::Agree);
    }

    #[test]
    fn top_representative_low_data() {
        let c = VoteCounts::new(3, 3, 3);
        let report = report_with(&[(0, c, c)]);
        let top = top_representative_statements(&report, 0, 5, 10);
        assert!(top.statements.is_empty());
        assert!(top.low_data);
    }

    #[test]
    fn report_from_matrix() {
        use crate::opinion::VoteMatrix;
        let a = Some(Vote::Agree);
        let d = Some(Vote::Disagree);
        let m = VoteMatrix::from_dense(
            vec!["a".into(), "b".into(), "c".into()],
            vec![StatementId(0), StatementId(1)],
            &[vec![a, d], vec![a, None], vec![d, Some(Vote::Pass)]],
        )
        .unwrap();
        let r = compute_report_from_assignment(&m, &[0, 0, 1], 2, PassPolicy::CountAsSeen).unwrap();
        let s0 = r.get(StatementId(0)).unwrap();
        assert_eq!(s0.groups, vec![VoteCounts::new(2, 0, 0), VoteCounts::new(0, 1, 0)]);
        assert!(close(s0.gac, (3.0 / 4.0) * (1.0 / 3.0)));
        assert_eq!(s0.overall, VoteCounts::new(2, 1, 0));
        let csv = report_csv(&r, &BTreeMap::new());
        assert!(csv.starts_with("statement_id,text,gac,pi,adjusted_pi,g0_agree,"));
        assert_eq!(csv.lines().count(), 3);
    }
}
