//! Event-sourced conversation model.
//!
//! A conversation is a sequence of [`ConversationEvent`]s numbered from 1
//! without gaps. [`ConversationState`] is the fold of that sequence; it is
//! never mutated any other way, so replaying an exported log always
//! reproduces the same state. Timestamps are carried for operators and never
//! read by the fold.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constitution::MergeRecord;
use crate::opinion::VoteMatrix;
use crate::service::ScreenerConfig;

/// Opaque participant token. No names or demographics are ever stored.
pub type ParticipantId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StatementId(pub u32);

impl StatementId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for StatementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Vote {
    Agree,
    Disagree,
    Pass,
}

impl Vote {
    pub const ALL: [Vote; 3] = [Vote::Agree, Vote::Disagree, Vote::Pass];

    /// Canonical numeric encoding: Agree = +1, Disagree = -1, Pass = 0.
    pub fn value(self) -> i8 {
        match self {
            Vote::Agree => 1,
            Vote::Disagree => -1,
            Vote::Pass => 0,
        }
    }

    pub fn from_value(value: i8) -> Option<Vote> {
        match value {
            1 => Some(Vote::Agree),
            -1 => Some(Vote::Disagree),
            0 => Some(Vote::Pass),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    Seed,
    Participant(ParticipantId),
    RewriteOf(StatementId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RejectReason {
    Duplicate,
    Nonsense,
    HatefulOffensive,
    Irrelevant,
    Unintelligible,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModerationStatus {
    Pending,
    Accepted,
    Rejected(RejectReason),
    /// Replaced by the referenced (Accepted) statement.
    Rewritten(StatementId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModerationDecision {
    Accept,
    Reject(RejectReason),
    Rewrite(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub id: StatementId,
    pub text: String,
    pub origin: Origin,
    pub created_seq: u64,
    pub moderation: ModerationStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub participant: ParticipantId,
    pub statement: StatementId,
    pub vote: Vote,
    pub seq: u64,
}

fn default_min_votes() -> usize {
    30
}

fn default_idea_budget() -> usize {
    95
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationConfig {
    #[serde(default = "default_min_votes")]
    pub min_votes_to_submit: usize,
    #[serde(default)]
    pub seed_statements: Vec<String>,
    #[serde(default)]
    pub screener: Option<ScreenerConfig>,
    #[serde(default = "default_idea_budget")]
    pub idea_budget: usize,
    #[serde(default)]
    pub prng_seed: u64,
}

impl Default for ConversationConfig {
    fn default() -> Self {
        ConversationConfig {
            min_votes_to_submit: default_min_votes(),
            seed_statements: Vec::new(),
            screener: None,
            idea_budget: default_idea_budget(),
            prng_seed: 0,
        }
    }
}

impl ConversationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.idea_budget == 0 {
            return Err("idea_budget must be at least 1".into());
        }
        if let Some(i) = self.seed_statements.iter().position(|s| s.trim().is_empty()) {
            return Err(format!("seed statement {i} is empty"));
        }
        if let Some(screener) = &self.screener {
            screener.validate()?;
        }
        Ok(())
    }
}

/// One record of the append-only log. Serialized field order is fixed:
/// `seq`, `ts`, `kind`, `payload`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationEvent {
    pub seq: u64,
    /// Wall-clock milliseconds; informational only.
    pub ts: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventBody {
    ConversationCreated {
        config: ConversationConfig,
    },
    /// Seeds enter Accepted; participant submissions enter Pending.
    StatementSubmitted {
        id: StatementId,
        text: String,
        origin: Origin,
    },
    StatementModerated {
        statement: StatementId,
        decision: ModerationDecision,
    },
    VoteCast {
        participant: ParticipantId,
        statement: StatementId,
        vote: Vote,
    },
    ScreenerPassed {
        participant: ParticipantId,
    },
    IdeaTagged {
        statement: StatementId,
        tags: BTreeSet<String>,
    },
    StatementsMerged {
        record: MergeRecord,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::ConversationCreated { .. } => "ConversationCreated",
            EventBody::StatementSubmitted { .. } => "StatementSubmitted",
            EventBody::StatementModerated { .. } => "StatementModerated",
            EventBody::VoteCast { .. } => "VoteCast",
            EventBody::ScreenerPassed { .. } => "ScreenerPassed",
            EventBody::IdeaTagged { .. } => "IdeaTagged",
            EventBody::StatementsMerged { .. } => "StatementsMerged",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("sequence gap: expected seq {expected}, got {found}")]
    SequenceGap { expected: u64, found: u64 },
    #[error("unknown statement {0}")]
    UnknownStatement(StatementId),
    #[error("unknown participant {0:?}")]
    UnknownParticipant(ParticipantId),
    #[error("invalid transition: {0}")]
    InvalidTransition(String),
}

fn invalid(msg: impl Into<String>) -> ModelError {
    ModelError::InvalidTransition(msg.into())
}

/// Fold of a conversation's event log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConversationState {
    last_seq: u64,
    config: Option<ConversationConfig>,
    statements: Vec<Statement>,
    votes: BTreeMap<(ParticipantId, StatementId), VoteRecord>,
    vote_counts: BTreeMap<ParticipantId, usize>,
    participants: BTreeSet<ParticipantId>,
    screened: BTreeSet<ParticipantId>,
    accepted: usize,
    idea_tags: BTreeMap<StatementId, BTreeSet<String>>,
    merges: Vec<MergeRecord>,
}

impl ConversationState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Folds a complete log from the empty state.
    pub fn fold<'a, I>(events: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = &'a ConversationEvent>,
    {
        let mut state = ConversationState::new();
        for event in events {
            state.apply_in_place(event)?;
        }
        Ok(state)
    }

    /// Returns the state after `event`; `self` is left untouched.
    pub fn apply_event(&self, event: &ConversationEvent) -> Result<Self, ModelError> {
        let mut next = self.clone();
        next.apply_in_place(event)?;
        Ok(next)
    }

    /// Applies `event` in place. On error the state is unchanged.
    pub fn apply_in_place(&mut self, event: &ConversationEvent) -> Result<(), ModelError> {
        let expected = self.last_seq + 1;
        if event.seq != expected {
            return Err(ModelError::SequenceGap {
                expected,
                found: event.seq,
            });
        }
        self.validate(&event.body)?;
        self.commit(event.seq, &event.body);
        self.last_seq = event.seq;
        Ok(())
    }

    fn validate(&self, body: &EventBody) -> Result<(), ModelError> {
        let config = match (&self.config, body) {
            (None, EventBody::ConversationCreated { config }) => {
                return config.validate().map_err(ModelError::InvalidTransition);
            }
            (Some(_), EventBody::ConversationCreated { .. }) => {
                return Err(invalid("conversation already created"));
            }
            (None, _) => return Err(invalid("conversation not created")),
            (Some(config), _) => config,
        };
        match body {
            EventBody::ConversationCreated { .. } => unreachable!(),
            EventBody::StatementSubmitted { id, text, origin } => {
                if id.index() != self.statements.len() {
                    return Err(invalid(format!(
                        "statement id {id} out of order (next is {})",
                        self.statements.len()
                    )));
                }
                if text.trim().is_empty() {
                    return Err(invalid("statement text is empty"));
                }
                match origin {
                    Origin::Seed => Ok(()),
                    Origin::Participant(p) => {
                        if config.screener.is_some() && !self.screened.contains(p) {
                            return Err(invalid(format!("participant {p:?} not screened")));
                        }
                        let remaining = self.votes_remaining(p);
                        if remaining > 0 {
                            return Err(invalid(format!(
                                "participant {p:?} needs {remaining} more votes to submit"
                            )));
                        }
                        Ok(())
                    }
                    Origin::RewriteOf(_) => {
                        Err(invalid("rewrites are created by moderation, not submission"))
                    }
                }
            }
            EventBody::StatementModerated {
                statement,
                decision,
            } => {
                let s = self.statement(*statement)?;
                if s.moderation != ModerationStatus::Pending {
                    return Err(invalid(format!("statement {statement} already moderated")));
                }
                if let ModerationDecision::Rewrite(text) = decision {
                    if text.trim().is_empty() {
                        return Err(invalid("rewrite text is empty"));
                    }
                }
                Ok(())
            }
            EventBody::VoteCast {
                participant,
                statement,
                ..
            } => {
                let s = self.statement(*statement)?;
                if s.moderation != ModerationStatus::Accepted {
                    return Err(invalid(format!("statement {statement} is not open for voting")));
                }
                if config.screener.is_some() && !self.screened.contains(participant) {
                    return Err(invalid(format!("participant {participant:?} not screened")));
                }
                Ok(())
            }
            EventBody::ScreenerPassed { .. } => {
                if config.screener.is_none() {
                    return Err(invalid("no screener configured"));
                }
                Ok(())
            }
            EventBody::IdeaTagged { statement, tags } => {
                self.require_accepted(*statement)?;
                if tags.is_empty() || tags.iter().any(|t| t.trim().is_empty()) {
                    return Err(invalid("idea tags must be non-empty"));
                }
                Ok(())
            }
            EventBody::StatementsMerged { record } => {
                if record.sources.len() < 2 {
                    return Err(invalid("a merge needs at least two sources"));
                }
                if record.merged_text.trim().is_empty() {
                    return Err(invalid("merged text is empty"));
                }
                let unique: BTreeSet<_> = record.sources.iter().collect();
                if unique.len() != record.sources.len() {
                    return Err(invalid("merge lists a source twice"));
                }
                for source in &record.sources {
                    self.require_accepted(*source)?;
                    if self.merged_into(*source).is_some() {
                        return Err(invalid(format!("statement {source} already merged")));
                    }
                }
                Ok(())
            }
        }
    }

    fn commit(&mut self, seq: u64, body: &EventBody) {
        match body {
            EventBody::ConversationCreated { config } => {
                self.config = Some(config.clone());
            }
            EventBody::StatementSubmitted { id, text, origin } => {
                let moderation = match origin {
                    Origin::Seed => ModerationStatus::Accepted,
                    _ => ModerationStatus::Pending,
                };
                if moderation == ModerationStatus::Accepted {
                    self.accepted += 1;
                }
                if let Origin::Participant(p) = origin {
                    self.participants.insert(p.clone());
                }
                self.statements.push(Statement {
                    id: *id,
                    text: text.clone(),
                    origin: origin.clone(),
                    created_seq: seq,
                    moderation,
                });
            }
            EventBody::StatementModerated {
                statement,
                decision,
            } => {
                let status = match decision {
                    ModerationDecision::Accept => {
                        self.accepted += 1;
                        ModerationStatus::Accepted
                    }
                    ModerationDecision::Reject(reason) => ModerationStatus::Rejected(*reason),
                    ModerationDecision::Rewrite(text) => {
                        let new_id = StatementId(self.statements.len() as u32);
                        self.statements.push(Statement {
                            id: new_id,
                            text: text.clone(),
                            origin: Origin::RewriteOf(*statement),
                            created_seq: seq,
                            moderation: ModerationStatus::Accepted,
                        });
                        self.accepted += 1;
                        ModerationStatus::Rewritten(new_id)
                    }
                };
                self.statements[statement.index()].moderation = status;
            }
            EventBody::VoteCast {
                participant,
                statement,
                vote,
            } => {
                let record = VoteRecord {
                    participant: participant.clone(),
                    statement: *statement,
                    vote: *vote,
                    seq,
                };
                let key = (participant.clone(), *statement);
                if self.votes.insert(key, record).is_none() {
                    *self.vote_counts.entry(participant.clone()).or_default() += 1;
                }
                self.participants.insert(participant.clone());
            }
            EventBody::ScreenerPassed { participant } => {
                self.screened.insert(participant.clone());
                self.participants.insert(participant.clone());
            }
            EventBody::IdeaTagged { statement, tags } => {
                self.idea_tags.insert(*statement, tags.clone());
            }
            EventBody::StatementsMerged { record } => {
                self.merges.push(record.clone());
            }
        }
    }

    fn require_accepted(&self, id: StatementId) -> Result<&Statement, ModelError> {
        let s = self.statement(id)?;
        if s.moderation != ModerationStatus::Accepted {
            return Err(invalid(format!("statement {id} is not accepted")));
        }
        Ok(s)
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn config(&self) -> Option<&ConversationConfig> {
        self.config.as_ref()
    }

    pub fn statements(&self) -> &[Statement] {
        &self.statements
    }

    pub fn statement(&self, id: StatementId) -> Result<&Statement, ModelError> {
        self.statements
            .get(id.index())
            .ok_or(ModelError::UnknownStatement(id))
    }

    pub fn accepted_statements(&self) -> impl Iterator<Item = &Statement> {
        self.statements
            .iter()
            .filter(|s| s.moderation == ModerationStatus::Accepted)
    }

    pub fn accepted_count(&self) -> usize {
        self.accepted
    }

    pub fn pending_statements(&self) -> impl Iterator<Item = &Statement> {
        self.statements
            .iter()
            .filter(|s| s.moderation == ModerationStatus::Pending)
    }

    /// Effective votes keyed by (participant, statement); the highest-seq
    /// record for each pair.
    pub fn votes(&self) -> &BTreeMap<(ParticipantId, StatementId), VoteRecord> {
        &self.votes
    }

    pub fn effective_vote(&self, participant: &str, statement: StatementId) -> Option<Vote> {
        self.votes
            .get(&(participant.to_string(), statement))
            .map(|r| r.vote)
    }

    pub fn participants(&self) -> &BTreeSet<ParticipantId> {
        &self.participants
    }

    pub fn is_screened(&self, participant: &str) -> bool {
        self.screened.contains(participant)
    }

    pub fn vote_count(&self, participant: &str) -> usize {
        self.vote_counts.get(participant).copied().unwrap_or(0)
    }

    pub fn idea_tags(&self) -> &BTreeMap<StatementId, BTreeSet<String>> {
        &self.idea_tags
    }

    pub fn merges(&self) -> &[MergeRecord] {
        &self.merges
    }

    pub fn merged_into(&self, statement: StatementId) -> Option<&MergeRecord> {
        self.merges.iter().find(|m| m.sources.contains(&statement))
    }

    /// Votes the participant still needs before submitting a statement.
    /// Does not require the participant to be known.
    pub fn votes_remaining(&self, participant: &str) -> usize {
        let gate = self
            .config
            .as_ref()
            .map_or(0, |c| c.min_votes_to_submit)
            .min(self.accepted);
        gate.saturating_sub(self.vote_count(participant))
    }

    /// True iff the participant's effective vote count reaches
    /// `min(min_votes_to_submit, accepted statements)`.
    pub fn can_submit_statement(&self, participant: &str) -> Result<bool, ModelError> {
        if !self.participants.contains(participant) {
            return Err(ModelError::UnknownParticipant(participant.to_string()));
        }
        Ok(self.votes_remaining(participant) == 0)
    }

    /// Exact-text duplicate among non-rejected statements (case and
    /// surrounding whitespace ignored).
    pub fn duplicate_of(&self, id: StatementId) -> Option<StatementId> {
        let target = self.statements.get(id.index())?;
        let norm = normalize_text(&target.text);
        self.statements[..id.index()]
            .iter()
            .find(|s| {
                matches!(
                    s.moderation,
                    ModerationStatus::Accepted | ModerationStatus::Pending
                ) && normalize_text(&s.text) == norm
            })
            .map(|s| s.id)
    }

    /// Participants with at least one effective vote as rows, Accepted
    /// statements as columns. Unvoted cells are missing, distinct from Pass.
    pub fn build_vote_matrix(&self) -> VoteMatrix {
        let col_ids: Vec<StatementId> = self.accepted_statements().map(|s| s.id).collect();
        let col_of: BTreeMap<StatementId, usize> =
            col_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let mut rows: BTreeMap<&ParticipantId, Vec<(usize, Vote)>> = BTreeMap::new();
        for ((participant, statement), record) in &self.votes {
            if let Some(&col) = col_of.get(statement) {
                rows.entry(participant).or_default().push((col, record.vote));
            }
        }
        let mut row_ids = Vec::with_capacity(rows.len());
        let mut entries = Vec::with_capacity(rows.len());
        for (participant, mut cells) in rows {
            cells.sort_by_key(|(c, _)| *c);
            row_ids.push(participant.clone());
            entries.push(cells);
        }
        VoteMatrix::from_rows(row_ids, col_ids, entries)
            .expect("fold produces in-bounds, duplicate-free cells")
    }
}

fn normalize_text(text: &str) -> String {
    text.trim().to_lowercase()
}

/// Writes events as line-delimited JSON.
pub fn write_event_log<W: Write>(mut out: W, events: &[ConversationEvent]) -> std::io::Result<()> {
    for event in events {
        serde_json::to_writer(&mut out, event)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Debug, Error)]
pub enum LogReadError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads a line-delimited JSON event log; blank lines are skipped.
pub fn read_event_log<R: BufRead>(input: R) -> Result<Vec<ConversationEvent>, LogReadError> {
    let mut events = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|source| LogReadError::Parse {
            line: i + 1,
            source,
        })?;
        events.push(event);
    }
    Ok(events)
}
