//! From scored statements to a constitution.
//!
//! Operators tag statements with the ideas they express and merge
//! near-duplicates; statements are then taken in descending GAC order until
//! the next one would push the count of distinct ideas past the budget.
//! Selected statements are rewritten into the "Choose the response that…"
//! template, with every step recorded in the principle's provenance.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::StatementId;

pub const TEMPLATE_PREFIX: &str = "Choose the response that";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConstitutionError {
    #[error("statement {0} is already part of a merge")]
    AlreadyMerged(StatementId),
    #[error("unknown or non-accepted statement {0}")]
    UnknownStatement(StatementId),
    #[error("a merge needs at least two distinct sources")]
    TooFewSources,
    #[error("text is empty")]
    EmptyText,
    #[error("no candidate statements")]
    EmptyCandidates,
    #[error("constitution has no principles")]
    EmptyConstitution,
    #[error("statements without idea tags: {0:?}")]
    UntaggedStatements(Vec<StatementId>),
    #[error("principles still need operator wording: {0:?}")]
    UnresolvedPrinciples(Vec<StatementId>),
    #[error("malformed constitution text at line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LedgerSource {
    Operator,
    #[default]
    Default,
}

/// Idea tags per statement.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IdeaLedger {
    pub tags: BTreeMap<StatementId, BTreeSet<String>>,
    pub source: LedgerSource,
}

impl IdeaLedger {
    pub fn operator(tags: BTreeMap<StatementId, BTreeSet<String>>) -> Self {
        IdeaLedger {
            tags,
            source: LedgerSource::Operator,
        }
    }

    /// One auto-tag per statement, equal to its id.
    pub fn default_for(ids: impl IntoIterator<Item = StatementId>) -> Self {
        IdeaLedger {
            tags: ids
                .into_iter()
                .map(|id| (id, BTreeSet::from([default_tag(id)])))
                .collect(),
            source: LedgerSource::Default,
        }
    }

    /// Fills in the default tag for any id not already tagged.
    pub fn with_defaults(mut self, ids: impl IntoIterator<Item = StatementId>) -> Self {
        for id in ids {
            self.tags
                .entry(id)
                .or_insert_with(|| BTreeSet::from([default_tag(id)]));
        }
        self
    }

    pub fn tags_for(&self, id: StatementId) -> Option<&BTreeSet<String>> {
        self.tags.get(&id).filter(|t| !t.is_empty())
    }
}

fn default_tag(id: StatementId) -> String {
    format!("s{id}")
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MergeRecord {
    pub sources: Vec<StatementId>,
    pub merged_text: String,
    #[serde(default)]
    pub rationale: String,
}

impl MergeRecord {
    /// Lowest source id; identifies the merged candidate.
    pub fn lead(&self) -> StatementId {
        *self.sources.iter().min().expect("merge has sources")
    }
}

/// Validates and records a merge of accepted statements.
pub fn merge_statements(
    accepted: &BTreeSet<StatementId>,
    existing: &[MergeRecord],
    sources: &[StatementId],
    merged_text: &str,
    rationale: &str,
) -> Result<MergeRecord, ConstitutionError> {
    let unique: BTreeSet<StatementId> = sources.iter().copied().collect();
    if unique.len() < 2 || unique.len() != sources.len() {
        return Err(ConstitutionError::TooFewSources);
    }
    if merged_text.trim().is_empty() {
        return Err(ConstitutionError::EmptyText);
    }
    for &s in sources {
        if !accepted.contains(&s) {
            return Err(ConstitutionError::UnknownStatement(s));
        }
        if existing.iter().any(|m| m.sources.contains(&s)) {
            return Err(ConstitutionError::AlreadyMerged(s));
        }
    }
    Ok(MergeRecord {
        sources: sources.to_vec(),
        merged_text: merged_text.trim().to_string(),
        rationale: rationale.to_string(),
    })
}

/// A unit of selection: a single statement or a merge of several.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Statement id, or the lowest source id for a merge.
    pub key: StatementId,
    pub sources: Vec<StatementId>,
    pub text: String,
    /// For merges, the largest source GAC; votes are never pooled.
    pub gac: f64,
    pub tags: BTreeSet<String>,
    pub merge: Option<MergeRecord>,
}

/// Builds selection candidates from per-statement GAC and text. Statements
/// absorbed into a merge are replaced by the merged candidate.
pub fn build_candidates(
    gacs: &BTreeMap<StatementId, f64>,
    texts: &BTreeMap<StatementId, String>,
    ledger: &IdeaLedger,
    merges: &[MergeRecord],
) -> Result<Vec<Candidate>, ConstitutionError> {
    let mut merged: BTreeSet<StatementId> = BTreeSet::new();
    for m in merges {
        for &s in &m.sources {
            if !gacs.contains_key(&s) {
                return Err(ConstitutionError::UnknownStatement(s));
            }
            if !merged.insert(s) {
                return Err(ConstitutionError::AlreadyMerged(s));
            }
        }
    }
    let untagged: Vec<StatementId> = gacs
        .keys()
        .filter(|id| ledger.tags_for(**id).is_none())
        .copied()
        .collect();
    if !untagged.is_empty() {
        return Err(ConstitutionError::UntaggedStatements(untagged));
    }

    let mut out = Vec::new();
    for (&id, &gac) in gacs {
        if merged.contains(&id) {
            continue;
        }
        out.push(Candidate {
            key: id,
            sources: vec![id],
            text: texts.get(&id).cloned().unwrap_or_default(),
            gac,
            tags: ledger.tags_for(id).cloned().unwrap_or_default(),
            merge: None,
        });
    }
    for m in merges {
        let mut sources = m.sources.clone();
        sources.sort();
        let gac = sources
            .iter()
            .map(|s| gacs[s])
            .fold(f64::NEG_INFINITY, f64::max);
        let tags = sources
            .iter()
            .flat_map(|s| ledger.tags_for(*s).into_iter().flatten().cloned())
            .collect();
        out.push(Candidate {
            key: m.lead(),
            sources,
            text: m.merged_text.clone(),
            gac,
            tags,
            merge: Some(m.clone()),
        });
    }
    out.sort_by_key(|c| c.key);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// In rank order.
    pub selected: Vec<Candidate>,
    /// GAC of the last included candidate.
    pub effective_threshold: Option<f64>,
    pub ideas_used: BTreeSet<String>,
    /// First candidate that would have exceeded the budget.
    pub stopped_at: Option<StatementId>,
}

/// Ranks candidates by descending GAC (ties: ascending key) and takes the
/// longest prefix whose distinct idea tags fit within `budget`.
pub fn select_statements(
    candidates: &[Candidate],
    budget: usize,
) -> Result<Selection, ConstitutionError> {
    if candidates.is_empty() {
        return Err(ConstitutionError::EmptyCandidates);
    }
    let mut ranked: Vec<&Candidate> = candidates.iter().collect();
    ranked.sort_by(|a, b| b.gac.total_cmp(&a.gac).then(a.key.cmp(&b.key)));
    let mut ideas: BTreeSet<String> = BTreeSet::new();
    let mut selected = Vec::new();
    let mut stopped_at = None;
    for c in ranked {
        let new = c.tags.iter().filter(|t| !ideas.contains(*t)).count();
        if ideas.len() + new > budget {
            stopped_at = Some(c.key);
            break;
        }
        ideas.extend(c.tags.iter().cloned());
        selected.push(c.clone());
    }
    Ok(Selection {
        effective_threshold: selected.last().map(|c| c.gac),
        selected,
        ideas_used: ideas,
        stopped_at,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RewriteRule {
    AlreadyTemplated,
    /// "The AI should be X" → "… that is most X".
    MostAdjective,
    /// "The AI should be A and be B" → "… that most acts as A and as B."
    MostActsAs,
    /// "The AI should not be X" → "… that is least X".
    LeastAdjective,
    /// "The AI should not X" → "… that least X".
    Least,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TemplateDraft {
    Rewritten { text: String, rule: RewriteRule },
    NeedsOperator,
}

/// Rule-assisted rewrite into the principle template. Only the shapes
/// "(The) AI should (not) …" are handled; anything else is left to the
/// operator.
pub fn to_principle(statement_text: &str) -> TemplateDraft {
    let t = statement_text.trim();
    if t.starts_with(TEMPLATE_PREFIX) {
        return TemplateDraft::Rewritten {
            text: statement_text.to_string(),
            rule: RewriteRule::AlreadyTemplated,
        };
    }
    let Some(rest) = strip_prefix_ci(t, "the ai ").or_else(|| strip_prefix_ci(t, "ai ")) else {
        return TemplateDraft::NeedsOperator;
    };
    let negative = strip_prefix_ci(rest, "should not ").or_else(|| strip_prefix_ci(rest, "shouldn't "))
        .or_else(|| strip_prefix_ci(rest, "shouldn’t "));
    let draft = |text: String, rule| TemplateDraft::Rewritten { text, rule };
    if let Some(pred) = negative {
        if pred.trim().is_empty() {
            return TemplateDraft::NeedsOperator;
        }
        return match strip_prefix_ci(pred, "be ") {
            Some(adj) if !adj.trim().is_empty() => draft(
                format!("{TEMPLATE_PREFIX} is least {adj}"),
                RewriteRule::LeastAdjective,
            ),
            _ => draft(format!("{TEMPLATE_PREFIX} least {pred}"), RewriteRule::Least),
        };
    }
    let Some(pred) = strip_prefix_ci(rest, "should be ") else {
        return TemplateDraft::NeedsOperator;
    };
    if pred.trim().is_empty() {
        return TemplateDraft::NeedsOperator;
    }
    let body = pred.trim_end_matches('.');
    let roles: Vec<&str> = body.split(" and be ").collect();
    if roles.len() > 1 && roles.iter().all(|r| !r.trim().is_empty()) {
        return draft(
            format!("{TEMPLATE_PREFIX} most acts as {}.", roles.join(" and as ")),
            RewriteRule::MostActsAs,
        );
    }
    draft(
        format!("{TEMPLATE_PREFIX} is most {pred}"),
        RewriteRule::MostAdjective,
    )
}

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let head = s.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &s[prefix.len()..])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TemplateOrigin {
    Rule(RewriteRule),
    /// Operator wording replaced the rule's suggestion (if any).
    OperatorOverride { suggested: Option<String> },
    /// No rule applies and no operator wording was supplied yet.
    Unresolved,
    /// Loaded from an existing constitution text.
    Imported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_statements: Vec<StatementId>,
    pub merges: Vec<MergeRecord>,
    pub idea_tags: BTreeSet<String>,
    pub source_text: String,
    pub template: TemplateOrigin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Principle {
    pub text: String,
    pub provenance: Provenance,
    pub gac_at_selection: f64,
}

impl Principle {
    pub fn is_templated(&self) -> bool {
        self.text.starts_with(TEMPLATE_PREFIX)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constitution {
    pub principles: Vec<Principle>,
    pub effective_threshold: f64,
    pub idea_budget: usize,
    pub total_ideas_used: usize,
}

/// Operator wording keyed by candidate key.
pub type PrincipleOverrides = BTreeMap<StatementId, String>;

/// Turns a selection into principles. Candidates with neither a matching
/// rewrite rule nor an override are kept with their statement text and an
/// `Unresolved` marker; [`export_constitution`] refuses those.
pub fn assemble_constitution(
    selection: &Selection,
    overrides: &PrincipleOverrides,
    idea_budget: usize,
) -> Result<Constitution, ConstitutionError> {
    let Some(threshold) = selection.effective_threshold else {
        return Err(ConstitutionError::EmptyConstitution);
    };
    let principles = selection
        .selected
        .iter()
        .map(|c| {
            let draft = to_principle(&c.text);
            let (text, template) = match (overrides.get(&c.key), draft) {
                (Some(op), TemplateDraft::Rewritten { text, .. }) => (
                    op.clone(),
                    TemplateOrigin::OperatorOverride {
                        suggested: Some(text),
                    },
                ),
                (Some(op), TemplateDraft::NeedsOperator) => (
                    op.clone(),
                    TemplateOrigin::OperatorOverride { suggested: None },
                ),
                (None, TemplateDraft::Rewritten { text, rule }) => {
                    (text, TemplateOrigin::Rule(rule))
                }
                (None, TemplateDraft::NeedsOperator) => {
                    (c.text.clone(), TemplateOrigin::Unresolved)
                }
            };
            Principle {
                text,
                provenance: Provenance {
                    source_statements: c.sources.clone(),
                    merges: c.merge.iter().cloned().collect(),
                    idea_tags: c.tags.clone(),
                    source_text: c.text.clone(),
                    template,
                },
                gac_at_selection: c.gac,
            }
        })
        .collect();
    Ok(Constitution {
        principles,
        effective_threshold: threshold,
        idea_budget,
        total_ideas_used: selection.ideas_used.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExportFormat {
    PlainText,
    Json,
}

/// Numbered plain-text list (one principle per line, no trailing newline)
/// or JSON with full provenance.
pub fn export_constitution(
    constitution: &Constitution,
    format: ExportFormat,
) -> Result<String, ConstitutionError> {
    if constitution.principles.is_empty() {
        return Err(ConstitutionError::EmptyConstitution);
    }
    let unresolved: Vec<StatementId> = constitution
        .principles
        .iter()
        .filter(|p| p.provenance.template == TemplateOrigin::Unresolved)
        .filter_map(|p| p.provenance.source_statements.first().copied())
        .collect();
    if !unresolved.is_empty() {
        return Err(ConstitutionError::UnresolvedPrinciples(unresolved));
    }
    Ok(match format {
        ExportFormat::PlainText => constitution
            .principles
            .iter()
            .enumerate()
            .map(|(i, p)| format!("{}. {}", i + 1, p.text))
            .collect::<Vec<_>>()
            .join("\n"),
        ExportFormat::Json => {
            serde_json::to_string_pretty(constitution).expect("constitution serializes")
        }
    })
}

impl Constitution {
    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    /// Parses a numbered list ("1. …" per line). Principles carry
    /// `Imported` provenance and zero scores.
    pub fn from_plain_text(text: &str) -> Result<Self, ConstitutionError> {
        let mut principles = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let expected = format!("{}. ", principles.len() + 1);
            let Some(body) = line.strip_prefix(&expected) else {
                return Err(ConstitutionError::Parse {
                    line: i + 1,
                    message: format!("expected item to start with {expected:?}"),
                });
            };
            principles.push(Principle {
                text: body.to_string(),
                provenance: Provenance {
                    source_statements: Vec::new(),
                    merges: Vec::new(),
                    idea_tags: BTreeSet::new(),
                    source_text: body.to_string(),
                    template: TemplateOrigin::Imported,
                },
                gac_at_selection: 0.0,
            });
        }
        if principles.is_empty() {
            return Err(ConstitutionError::EmptyConstitution);
        }
        let n = principles.len();
        Ok(Constitution {
            principles,
            effective_threshold: 0.0,
            idea_budget: n,
            total_ideas_used: 0,
        })
    }
}
