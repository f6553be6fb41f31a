//! Live deliberation loop over the event-sourced model.
//!
//! Every write goes through [`Conversation::append`], which validates the
//! event against the current fold before it reaches the log. Analytics are
//! recomputed on demand and cached by the sequence number they describe.

pub mod http;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::{
    compute_report, top_representative_statements, ConsensusReport, PassPolicy,
    RepresentativeList, DEFAULT_REPNESS_MIN_SEEN,
};
use crate::constitution::{
    assemble_constitution, build_candidates, export_constitution, merge_statements,
    select_statements, Constitution, ConstitutionError, ExportFormat, IdeaLedger,
    PrincipleOverrides,
};
use crate::model::{
    read_event_log, write_event_log, ConversationConfig, ConversationEvent, ConversationState,
    EventBody, ModelError, ModerationDecision, ModerationStatus, Origin, ParticipantId, Statement,
    StatementId, Vote,
};
use crate::opinion::{cluster, project_2d, OpinionError, OpinionGroups, Projection, DEFAULT_K_CANDIDATES};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenerQuestion {
    pub prompt: String,
    pub options: Vec<String>,
    pub required_option_indices: BTreeSet<usize>,
}

/// Entry questions; a participant passes only by choosing a required
/// option on every question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenerConfig {
    pub questions: Vec<ScreenerQuestion>,
}

/// An answer given either as the option index or the option text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScreenerAnswer {
    Index(usize),
    Text(String),
}

impl ScreenerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.questions.is_empty() {
            return Err("screener has no questions".into());
        }
        for (i, q) in self.questions.iter().enumerate() {
            if q.options.len() < 2 {
                return Err(format!("screener question {i} needs at least two options"));
            }
            if q.required_option_indices.is_empty() {
                return Err(format!("screener question {i} has no required option"));
            }
            if let Some(bad) = q.required_option_indices.iter().find(|&&j| j >= q.options.len()) {
                return Err(format!("screener question {i}: option {bad} out of range"));
            }
        }
        Ok(())
    }

    pub fn passes(&self, answers: &[ScreenerAnswer]) -> bool {
        answers.len() == self.questions.len()
            && self.questions.iter().zip(answers).all(|(q, a)| {
                let idx = match a {
                    ScreenerAnswer::Index(i) => Some(*i),
                    ScreenerAnswer::Text(t) => q.options.iter().position(|o| o == t),
                };
                idx.is_some_and(|i| q.required_option_indices.contains(&i))
            })
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown conversation {0:?}")]
    UnknownConversation(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("no screener configured; participation is open")]
    NoScreenerConfigured,
    #[error("participant {0:?} has not passed the screener")]
    NotScreened(ParticipantId),
    #[error("unknown statement {0}")]
    UnknownStatement(StatementId),
    #[error("statement {0} is not open for voting")]
    NotVotable(StatementId),
    #[error("submission gate not met: {votes_remaining} more votes needed")]
    GateNotMet { votes_remaining: usize },
    #[error("text is empty")]
    EmptyText,
    #[error("statement {0} is not pending moderation")]
    NotPending(StatementId),
    #[error("not enough data for analytics")]
    LowData,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Constitution(#[from] ConstitutionError),
    #[error("storage error: {0}")]
    Io(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownConversation(_) => "UnknownConversation",
            ServiceError::InvalidConfig(_) => "InvalidConfig",
            ServiceError::NoScreenerConfigured => "NoScreenerConfigured",
            ServiceError::NotScreened(_) => "NotScreened",
            ServiceError::UnknownStatement(_) => "UnknownStatement",
            ServiceError::NotVotable(_) => "NotVotable",
            ServiceError::GateNotMet { .. } => "GateNotMet",
            ServiceError::EmptyText => "EmptyText",
            ServiceError::NotPending(_) => "NotPending",
            ServiceError::LowData => "LowData",
            ServiceError::InvalidRequest(_) => "InvalidRequest",
            ServiceError::Model(_) => "InvalidTransition",
            ServiceError::Constitution(_) => "ConstitutionError",
            ServiceError::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExportKind {
    Events,
    VotesCSV,
    ReportJSON,
    ConstitutionText,
    ConstitutionJSON,
}

impl std::str::FromStr for ExportKind {
    type Err = ServiceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "Events" => ExportKind::Events,
            "VotesCSV" => ExportKind::VotesCSV,
            "ReportJSON" => ExportKind::ReportJSON,
            "ConstitutionText" => ExportKind::ConstitutionText,
            "ConstitutionJSON" => ExportKind::ConstitutionJSON,
            other => return Err(ServiceError::InvalidRequest(format!("unknown export {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub content_type: &'static str,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenOutcome {
    pub participant: ParticipantId,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateStatus {
    pub participant: ParticipantId,
    pub votes: usize,
    pub votes_remaining: usize,
    pub can_submit: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteAck {
    pub seq: u64,
    pub statement: StatementId,
    pub vote: Vote,
    #[serde(flatten)]
    pub gate: GateStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitAck {
    pub seq: u64,
    pub statement: StatementId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModerationAck {
    pub seq: u64,
    pub statement: StatementId,
    pub status: ModerationStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueItem {
    pub statement: Statement,
    /// Earlier statement with the same normalized text, if any.
    pub duplicate_of: Option<StatementId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotCounts {
    pub participants: usize,
    pub voters: usize,
    pub statements_accepted: usize,
    pub statements_pending: usize,
    pub votes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsSnapshot {
    pub as_of_seq: u64,
    pub counts: SnapshotCounts,
    /// Fewer voters than the largest candidate group count; only `counts`
    /// is populated.
    pub low_data: bool,
    pub projection: Option<Projection>,
    pub groups: Option<OpinionGroups>,
    pub report: Option<ConsensusReport>,
    pub representative: Vec<RepresentativeList>,
    pub constitution_draft: Option<Constitution>,
    pub warnings: Vec<String>,
}

/// Top representative statements kept per group in snapshots.
pub const SNAPSHOT_REPRESENTATIVE: usize = 5;

/// Pure function of the folded state.
pub fn compute_snapshot(state: &ConversationState) -> AnalyticsSnapshot {
    let matrix = state.build_vote_matrix();
    let counts = SnapshotCounts {
        participants: state.participants().len(),
        voters: matrix.n_participants(),
        statements_accepted: state.accepted_count(),
        statements_pending: state.pending_statements().count(),
        votes: state.votes().len(),
    };
    let mut snapshot = AnalyticsSnapshot {
        as_of_seq: state.last_seq(),
        counts,
        low_data: true,
        projection: None,
        groups: None,
        report: None,
        representative: Vec::new(),
        constitution_draft: None,
        warnings: Vec::new(),
    };
    if matrix.n_participants() < *DEFAULT_K_CANDIDATES.end() || matrix.n_statements() == 0 {
        return snapshot;
    }
    let seed = state.config().map_or(0, |c| c.prng_seed);
    let projection = match project_2d(&matrix) {
        Ok(p) => p,
        Err(OpinionError::DegenerateMatrix(msg)) => {
            snapshot.warnings.push(format!("degenerate geometry: {msg}"));
            Projection::degenerate(matrix.n_participants(), matrix.n_statements())
        }
        Err(e) => {
            snapshot.warnings.push(e.to_string());
            return snapshot;
        }
    };
    let groups = match cluster(&projection, DEFAULT_K_CANDIDATES, seed) {
        Ok(g) => g,
        Err(e) => {
            snapshot.warnings.push(e.to_string());
            return snapshot;
        }
    };
    if groups.zero_variance {
        snapshot
            .warnings
            .push("degenerate geometry: participants are not separable".into());
    }
    let report = match compute_report(&matrix, &groups, PassPolicy::default()) {
        Ok(r) => r,
        Err(e) => {
            snapshot.warnings.push(e.to_string());
            return snapshot;
        }
    };
    snapshot.low_data = false;
    snapshot.representative = (0..groups.k)
        .map(|g| {
            top_representative_statements(&report, g, SNAPSHOT_REPRESENTATIVE, DEFAULT_REPNESS_MIN_SEEN)
        })
        .collect();
    match draft_constitution(state, &report, &PrincipleOverrides::new()) {
        Ok(c) => snapshot.constitution_draft = Some(c),
        Err(e) => snapshot.warnings.push(format!("constitution draft: {e}")),
    }
    snapshot.projection = Some(projection);
    snapshot.groups = Some(groups);
    snapshot.report = Some(report);
    snapshot
}

/// Runs selection and templating with the tags and merges recorded in the
/// log. Untagged statements get the default one-tag-per-statement ledger
/// only when no operator tags exist at all.
pub fn draft_constitution(
    state: &ConversationState,
    report: &ConsensusReport,
    overrides: &PrincipleOverrides,
) -> Result<Constitution, ConstitutionError> {
    let gacs = report.gac_by_statement();
    let ledger = if state.idea_tags().is_empty() {
        IdeaLedger::default_for(gacs.keys().copied())
    } else {
        IdeaLedger::operator(state.idea_tags().clone())
    };
    let budget = state.config().map_or(95, |c| c.idea_budget);
    build_constitution(state, report, &ledger, state.merges(), overrides, budget)
}

pub fn build_constitution(
    state: &ConversationState,
    report: &ConsensusReport,
    ledger: &IdeaLedger,
    merges: &[crate::constitution::MergeRecord],
    overrides: &PrincipleOverrides,
    budget: usize,
) -> Result<Constitution, ConstitutionError> {
    let gacs = report.gac_by_statement();
    let texts: BTreeMap<StatementId, String> = state
        .accepted_statements()
        .map(|s| (s.id, s.text.clone()))
        .collect();
    let candidates = build_candidates(&gacs, &texts, ledger, merges)?;
    let selection = select_statements(&candidates, budget)?;
    assemble_constitution(&selection, overrides, budget)
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Opaque random token, e.g. for conversation or participant ids.
pub fn random_token(prefix: &str) -> String {
    format!("{prefix}{:016x}", rand::random::<u64>())
}

/// One conversation: its log, the fold, and the snapshot cache.
pub struct Conversation {
    id: String,
    events: Vec<ConversationEvent>,
    state: Arc<ConversationState>,
    cache: Option<Arc<AnalyticsSnapshot>>,
    sink: Option<BufWriter<File>>,
}

impl std::fmt::Debug for Conversation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Conversation")
            .field("id", &self.id)
            .field("last_seq", &self.state.last_seq())
            .finish()
    }
}

impl Conversation {
    /// Starts a log with the config and one Accepted statement per seed.
    pub fn create(id: impl Into<String>, config: ConversationConfig) -> Result<Self, ServiceError> {
        config.validate().map_err(ServiceError::InvalidConfig)?;
        let mut conv = Conversation {
            id: id.into(),
            events: Vec::new(),
            state: Arc::default(),
            cache: None,
            sink: None,
        };
        let seeds = config.seed_statements.clone();
        conv.append(EventBody::ConversationCreated { config })?;
        for text in seeds {
            let id = StatementId(conv.state.statements().len() as u32);
            conv.append(EventBody::StatementSubmitted {
                id,
                text,
                origin: Origin::Seed,
            })?;
        }
        Ok(conv)
    }

    /// Rebuilds a conversation by folding an existing log.
    pub fn from_events(
        id: impl Into<String>,
        events: Vec<ConversationEvent>,
    ) -> Result<Self, ServiceError> {
        let state = ConversationState::fold(&events)?;
        if state.config().is_none() {
            return Err(ServiceError::InvalidRequest("event log is empty".into()));
        }
        Ok(Conversation {
            id: id.into(),
            events,
            state: Arc::new(state),
            cache: None,
            sink: None,
        })
    }

    /// Persists the log to `path` (rewriting it) and appends every later
    /// event to it.
    pub fn attach_log(&mut self, path: &Path) -> Result<(), ServiceError> {
        let mut out = BufWriter::new(File::create(path)?);
        write_event_log(&mut out, &self.events)?;
        out.flush()?;
        self.sink = Some(out);
        Ok(())
    }

    fn resume_log(&mut self, path: &Path) -> Result<(), ServiceError> {
        let file = OpenOptions::new().append(true).open(path)?;
        self.sink = Some(BufWriter::new(file));
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn events(&self) -> &[ConversationEvent] {
        &self.events
    }

    pub fn state(&self) -> &ConversationState {
        &self.state
    }

    pub fn shared_state(&self) -> Arc<ConversationState> {
        Arc::clone(&self.state)
    }

    fn config(&self) -> &ConversationConfig {
        self.state.config().expect("conversation created")
    }

    /// Validates `body` against the fold and appends it.
    pub fn append(&mut self, body: EventBody) -> Result<&ConversationEvent, ServiceError> {
        let event = ConversationEvent {
            seq: self.state.last_seq() + 1,
            ts: now_ms(),
            body,
        };
        Arc::make_mut(&mut self.state).apply_in_place(&event)?;
        if let Some(sink) = &mut self.sink {
            write_event_log(&mut *sink, std::slice::from_ref(&event))?;
            sink.flush()?;
        }
        self.events.push(event);
        Ok(self.events.last().expect("just pushed"))
    }

    fn require_screened(&self, participant: &str) -> Result<(), ServiceError> {
        if self.config().screener.is_some() && !self.state.is_screened(participant) {
            return Err(ServiceError::NotScreened(participant.to_string()));
        }
        Ok(())
    }

    /// Scores the answers. A pass is recorded as an event; a failure leaves
    /// no trace. A participant id is minted when none is given.
    pub fn screen_participant(
        &mut self,
        participant: Option<ParticipantId>,
        answers: &[ScreenerAnswer],
    ) -> Result<ScreenOutcome, ServiceError> {
        let screener = self
            .config()
            .screener
            .clone()
            .ok_or(ServiceError::NoScreenerConfigured)?;
        let participant = participant.unwrap_or_else(|| random_token("p"));
        if participant.trim().is_empty() {
            return Err(ServiceError::InvalidRequest("participant id is empty".into()));
        }
        let passed = screener.passes(answers);
        if passed && !self.state.is_screened(&participant) {
            self.append(EventBody::ScreenerPassed {
                participant: participant.clone(),
            })?;
        }
        Ok(ScreenOutcome {
            participant,
            passed,
        })
    }

    /// Uniform draw among Accepted statements the participant has not voted
    /// on. The generator is seeded from the conversation seed, the
    /// participant id and their vote count, so identical calls repeat.
    pub fn next_statement(&self, participant: &str) -> Result<Option<Statement>, ServiceError> {
        self.require_screened(participant)?;
        let unseen: Vec<&Statement> = self
            .state
            .accepted_statements()
            .filter(|s| self.state.effective_vote(participant, s.id).is_none())
            .collect();
        if unseen.is_empty() {
            return Ok(None);
        }
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.config().prng_seed.to_le_bytes());
        seed[8..16].copy_from_slice(&fnv1a(participant.as_bytes()).to_le_bytes());
        seed[16..24].copy_from_slice(&(self.state.vote_count(participant) as u64).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(seed);
        Ok(Some(unseen[rng.gen_range(0..unseen.len())].clone()))
    }

    pub fn gate_status(&self, participant: &str) -> GateStatus {
        let remaining = self.state.votes_remaining(participant);
        GateStatus {
            participant: participant.to_string(),
            votes: self.state.vote_count(participant),
            votes_remaining: remaining,
            can_submit: remaining == 0,
        }
    }

    pub fn cast_vote(
        &mut self,
        participant: &str,
        statement: StatementId,
        vote: Vote,
    ) -> Result<VoteAck, ServiceError> {
        if participant.trim().is_empty() {
            return Err(ServiceError::InvalidRequest("participant id is empty".into()));
        }
        let s = self
            .state
            .statement(statement)
            .map_err(|_| ServiceError::UnknownStatement(statement))?;
        if s.moderation != ModerationStatus::Accepted {
            return Err(ServiceError::NotVotable(statement));
        }
        self.require_screened(participant)?;
        let seq = self
            .append(EventBody::VoteCast {
                participant: participant.to_string(),
                statement,
                vote,
            })?
            .seq;
        Ok(VoteAck {
            seq,
            statement,
            vote,
            gate: self.gate_status(participant),
        })
    }

    pub fn submit_statement(&mut self, participant: &str, text: &str) -> Result<SubmitAck, ServiceError> {
        if text.trim().is_empty() {
            return Err(ServiceError::EmptyText);
        }
        self.require_screened(participant)?;
        let votes_remaining = self.state.votes_remaining(participant);
        if votes_remaining > 0 {
            return Err(ServiceError::GateNotMet { votes_remaining });
        }
        let id = StatementId(self.state.statements().len() as u32);
        let seq = self
            .append(EventBody::StatementSubmitted {
                id,
                text: text.trim().to_string(),
                origin: Origin::Participant(participant.to_string()),
            })?
            .seq;
        Ok(SubmitAck { seq, statement: id })
    }

    pub fn moderate(
        &mut self,
        statement: StatementId,
        decision: ModerationDecision,
    ) -> Result<ModerationAck, ServiceError> {
        let s = self
            .state
            .statement(statement)
            .map_err(|_| ServiceError::UnknownStatement(statement))?;
        if s.moderation != ModerationStatus::Pending {
            return Err(ServiceError::NotPending(statement));
        }
        if matches!(&decision, ModerationDecision::Rewrite(t) if t.trim().is_empty()) {
            return Err(ServiceError::EmptyText);
        }
        let seq = self
            .append(EventBody::StatementModerated { statement, decision })?
            .seq;
        Ok(ModerationAck {
            seq,
            statement,
            status: self.state.statement(statement)?.moderation.clone(),
        })
    }

    pub fn moderation_queue(&self) -> Vec<QueueItem> {
        self.state
            .pending_statements()
            .map(|s| QueueItem {
                statement: s.clone(),
                duplicate_of: self.state.duplicate_of(s.id),
            })
            .collect()
    }

    pub fn tag_idea(&mut self, statement: StatementId, tags: BTreeSet<String>) -> Result<u64, ServiceError> {
        Ok(self.append(EventBody::IdeaTagged { statement, tags })?.seq)
    }

    pub fn merge(
        &mut self,
        sources: &[StatementId],
        merged_text: &str,
        rationale: &str,
    ) -> Result<u64, ServiceError> {
        let accepted: BTreeSet<StatementId> = self.state.accepted_statements().map(|s| s.id).collect();
        let record = merge_statements(&accepted, self.state.merges(), sources, merged_text, rationale)?;
        Ok(self.append(EventBody::StatementsMerged { record })?.seq)
    }

    /// Snapshot at the head seq, cached until the next event.
    pub fn analytics_snapshot(&mut self) -> Arc<AnalyticsSnapshot> {
        if let Some(hit) = self.cached_snapshot() {
            return hit;
        }
        let snap = Arc::new(compute_snapshot(&self.state));
        self.cache = Some(Arc::clone(&snap));
        snap
    }

    fn cached_snapshot(&self) -> Option<Arc<AnalyticsSnapshot>> {
        self.cache
            .as_ref()
            .filter(|s| s.as_of_seq == self.state.last_seq())
            .cloned()
    }

    fn store_snapshot(&mut self, snap: Arc<AnalyticsSnapshot>) {
        if snap.as_of_seq == self.state.last_seq() {
            self.cache = Some(snap);
        }
    }

    pub fn export(&mut self, what: ExportKind) -> Result<Document, ServiceError> {
        match what {
            ExportKind::Events => Ok(Document {
                content_type: "application/x-ndjson",
                body: events_jsonl(&self.events),
            }),
            ExportKind::VotesCSV => Ok(Document {
                content_type: "text/csv",
                body: votes_csv(&self.state),
            }),
            _ => {
                let snap = self.analytics_snapshot();
                export_from_snapshot(&snap, what)
            }
        }
    }
}

pub fn events_jsonl(events: &[ConversationEvent]) -> String {
    let mut buf = Vec::new();
    write_event_log(&mut buf, events).expect("writing to memory");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

/// One row per effective vote: `participant_id,statement_id,vote,seq`
/// with votes encoded 1 / -1 / 0.
pub fn votes_csv(state: &ConversationState) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["participant_id", "statement_id", "vote", "seq"])
        .expect("writing to memory");
    for r in state.votes().values() {
        w.write_record([
            r.participant.clone(),
            r.statement.to_string(),
            r.vote.value().to_string(),
            r.seq.to_string(),
        ])
        .expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("CSV is UTF-8")
}

fn export_from_snapshot(snap: &AnalyticsSnapshot, what: ExportKind) -> Result<Document, ServiceError> {
    match what {
        ExportKind::ReportJSON => {
            let report = snap.report.as_ref().ok_or(ServiceError::LowData)?;
            Ok(Document {
                content_type: "application/json",
                body: serde_json::to_string_pretty(report).expect("report serializes"),
            })
        }
        ExportKind::ConstitutionText | ExportKind::ConstitutionJSON => {
            let c = snap.constitution_draft.as_ref().ok_or(ServiceError::LowData)?;
            let (format, content_type) = if what == ExportKind::ConstitutionText {
                (ExportFormat::PlainText, "text/plain")
            } else {
                (ExportFormat::Json, "application/json")
            };
            Ok(Document {
                content_type,
                body: export_constitution(c, format)?,
            })
        }
        ExportKind::Events | ExportKind::VotesCSV => unreachable!("handled by the caller"),
    }
}

/// All conversations of one service instance. Each conversation has a
/// single writer (its mutex); snapshots are computed outside the lock.
#[derive(Debug, Default)]
pub struct Store {
    data_dir: Option<PathBuf>,
    conversations: RwLock<BTreeMap<String, Arc<Mutex<Conversation>>>>,
}

impl Store {
    pub fn in_memory() -> Self {
        Store::default()
    }

    /// Opens `dir`, replaying every `<id>.jsonl` log found there.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut map = BTreeMap::new();
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| ServiceError::Io(format!("bad log name {}", path.display())))?
                .to_string();
            let events = read_event_log(BufReader::new(File::open(&path)?))
                .map_err(|e| ServiceError::Io(format!("{}: {e}", path.display())))?;
            let mut conv = Conversation::from_events(id.clone(), events)?;
            conv.resume_log(&path)?;
            map.insert(id, Arc::new(Mutex::new(conv)));
        }
        Ok(Store {
            data_dir: Some(dir),
            conversations: RwLock::new(map),
        })
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.data_dir.as_deref()
    }

    fn insert(&self, mut conv: Conversation) -> Result<String, ServiceError> {
        let id = conv.id().to_string();
        if let Some(dir) = &self.data_dir {
            conv.attach_log(&dir.join(format!("{id}.jsonl")))?;
        }
        let mut map = self.conversations.write().expect("store lock");
        if map.contains_key(&id) {
            return Err(ServiceError::InvalidRequest(format!("conversation {id:?} exists")));
        }
        map.insert(id.clone(), Arc::new(Mutex::new(conv)));
        Ok(id)
    }

    pub fn create(&self, config: ConversationConfig) -> Result<String, ServiceError> {
        self.insert(Conversation::create(random_token("c"), config)?)
    }

    /// Adds a conversation from an existing log, e.g. an export or an
    /// import. A fresh id is minted when `id` is `None`.
    pub fn load_events(
        &self,
        id: Option<String>,
        events: Vec<ConversationEvent>,
    ) -> Result<String, ServiceError> {
        let id = id.unwrap_or_else(|| random_token("c"));
        self.insert(Conversation::from_events(id, events)?)
    }

    pub fn ids(&self) -> Vec<String> {
        self.conversations.read().expect("store lock").keys().cloned().collect()
    }

    pub fn get(&self, id: &str) -> Result<Arc<Mutex<Conversation>>, ServiceError> {
        self.conversations
            .read()
            .expect("store lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownConversation(id.to_string()))
    }

    /// Runs `f` with the conversation's writer lock held.
    pub fn with<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut Conversation) -> Result<T, ServiceError>,
    ) -> Result<T, ServiceError> {
        let conv = self.get(id)?;
        let mut guard = conv.lock().expect("conversation lock");
        f(&mut guard)
    }

    /// Snapshot at the current head; computed without holding the writer
    /// lock and cached if no event arrived meanwhile.
    pub fn snapshot(&self, id: &str) -> Result<Arc<AnalyticsSnapshot>, ServiceError> {
        let conv = self.get(id)?;
        let state = {
            let guard = conv.lock().expect("conversation lock");
            if let Some(hit) = guard.cached_snapshot() {
                return Ok(hit);
            }
            guard.shared_state()
        };
        let snap = Arc::new(compute_snapshot(&state));
        conv.lock().expect("conversation lock").store_snapshot(Arc::clone(&snap));
        Ok(snap)
    }

    pub fn export(&self, id: &str, what: ExportKind) -> Result<Document, ServiceError> {
        match what {
            ExportKind::Events | ExportKind::VotesCSV => self.with(id, |c| c.export(what)),
            _ => export_from_snapshot(&*self.snapshot(id)?, what),
        }
    }
}
