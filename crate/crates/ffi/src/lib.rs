//! C ABI over the deliberation engine.
//!
//! Conversations are opaque handles. Every fallible call returns an
//! [`AgoraStatus`]; on failure [`agora_last_error_message`] describes the
//! most recent error on the calling thread. Strings handed out by the
//! library must be released with [`agora_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use agora::consensus::{gac, polarization_index, PassPolicy, VoteCounts};
use agora::elo::{elo_report, read_records_csv, EloError};
use agora::model::{read_event_log, ModerationDecision};
use agora::service::{Conversation, ExportKind, ServiceError};
use agora::{ConversationConfig, StatementId, Vote};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgoraStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    InvalidConfig = 4,
    NoScreenerConfigured = 5,
    NotScreened = 6,
    UnknownStatement = 7,
    NotVotable = 8,
    GateNotMet = 9,
    EmptyText = 10,
    NotPending = 11,
    LowData = 12,
    InvalidTransition = 13,
    ConstitutionError = 14,
    EloError = 15,
    Io = 16,
    Panic = 17,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgoraExport {
    Events = 0,
    VotesCsv = 1,
    ReportJson = 2,
    ConstitutionText = 3,
    ConstitutionJson = 4,
}

/// Opaque conversation handle.
pub struct AgoraConversation {
    inner: Conversation,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let c = CString::new(message.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(AgoraStatus, String);

impl From<ServiceError> for Failure {
    fn from(e: ServiceError) -> Self {
        let status = match &e {
            ServiceError::UnknownConversation(_) | ServiceError::InvalidRequest(_) => {
                AgoraStatus::InvalidArgument
            }
            ServiceError::InvalidConfig(_) => AgoraStatus::InvalidConfig,
            ServiceError::NoScreenerConfigured => AgoraStatus::NoScreenerConfigured,
            ServiceError::NotScreened(_) => AgoraStatus::NotScreened,
            ServiceError::UnknownStatement(_) => AgoraStatus::UnknownStatement,
            ServiceError::NotVotable(_) => AgoraStatus::NotVotable,
            ServiceError::GateNotMet { .. } => AgoraStatus::GateNotMet,
            ServiceError::EmptyText => AgoraStatus::EmptyText,
            ServiceError::NotPending(_) => AgoraStatus::NotPending,
            ServiceError::LowData => AgoraStatus::LowData,
            ServiceError::Model(_) => AgoraStatus::InvalidTransition,
            ServiceError::Constitution(_) => AgoraStatus::ConstitutionError,
            ServiceError::Io(_) => AgoraStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

impl From<EloError> for Failure {
    fn from(e: EloError) -> Self {
        Failure(AgoraStatus::EloError, e.to_string())
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(AgoraStatus::InvalidArgument, message.into())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AgoraStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AgoraStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AgoraStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(AgoraStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(AgoraStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn handle<'a>(p: *mut AgoraConversation) -> Result<&'a mut Conversation, Failure> {
    p.as_mut()
        .map(|h| &mut h.inner)
        .ok_or_else(|| Failure(AgoraStatus::NullPointer, "conversation handle is null".into()))
}

fn out_ptr<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(AgoraStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .expect("nul bytes removed")
        .into_raw()
}

/// Library version as a static NUL-terminated string. Do not free.
#[no_mangle]
pub extern "C" fn agora_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy of the last error message on this thread, or NULL if none.
/// Free with `agora_string_free`.
#[no_mangle]
pub extern "C" fn agora_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| {
        e.borrow()
            .as_ref()
            .map_or(ptr::null_mut(), |m| m.clone().into_raw())
    })
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn agora_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a conversation from a JSON config (empty string for defaults).
///
/// # Safety
/// `config_json` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn agora_conversation_new(
    config_json: *const c_char,
    out: *mut *mut AgoraConversation,
) -> AgoraStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let text = str_arg(config_json, "config_json")?;
        let config: ConversationConfig = if text.trim().is_empty() {
            ConversationConfig::default()
        } else {
            serde_json::from_str(text).map_err(|e| Failure(AgoraStatus::InvalidConfig, e.to_string()))?
        };
        let inner = Conversation::create("ffi", config)?;
        *out = Box::into_raw(Box::new(AgoraConversation { inner }));
        Ok(())
    })
}

/// Rebuilds a conversation from a line-delimited JSON event log.
///
/// # Safety
/// `events_jsonl` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn agora_conversation_from_events(
    events_jsonl: *const c_char,
    out: *mut *mut AgoraConversation,
) -> AgoraStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let text = str_arg(events_jsonl, "events_jsonl")?;
        let events = read_event_log(text.as_bytes()).map_err(|e| invalid(e.to_string()))?;
        let inner = Conversation::from_events("ffi", events)?;
        *out = Box::into_raw(Box::new(AgoraConversation { inner }));
        Ok(())
    })
}

/// Destroys a handle. NULL is ignored.
///
/// # Safety
/// `conv` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn agora_conversation_free(conv: *mut AgoraConversation) {
    if !conv.is_null() {
        drop(Box::from_raw(conv));
    }
}

/// Records a vote (+1 agree, -1 disagree, 0 pass). On success writes the
/// votes still needed before the participant may submit.
///
/// # Safety
/// `conv` must be a live handle; strings valid; `out_votes_remaining`
/// writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn agora_cast_vote(
    conv: *mut AgoraConversation,
    participant: *const c_char,
    statement: u32,
    vote: i8,
    out_votes_remaining: *mut usize,
) -> AgoraStatus {
    guard(|| {
        let conv = handle(conv)?;
        let participant = str_arg(participant, "participant")?;
        let vote = Vote::from_value(vote).ok_or_else(|| invalid(format!("vote value {vote}")))?;
        let ack = conv.cast_vote(participant, StatementId(statement), vote)?;
        if !out_votes_remaining.is_null() {
            *out_votes_remaining = ack.gate.votes_remaining;
        }
        Ok(())
    })
}

/// Submits a participant statement for moderation; writes its id.
///
/// # Safety
/// `conv` must be a live handle; strings valid; `out_statement` writable.
#[no_mangle]
pub unsafe extern "C" fn agora_submit_statement(
    conv: *mut AgoraConversation,
    participant: *const c_char,
    text: *const c_char,
    out_statement: *mut u32,
) -> AgoraStatus {
    guard(|| {
        let conv = handle(conv)?;
        out_ptr(out_statement, "out_statement")?;
        let ack = conv.submit_statement(str_arg(participant, "participant")?, str_arg(text, "text")?)?;
        *out_statement = ack.statement.0;
        Ok(())
    })
}

/// Applies a moderation decision given as JSON: `"Accept"`,
/// `{"Reject": "Duplicate"}` or `{"Rewrite": "new text"}`.
///
/// # Safety
/// `conv` must be a live handle; `decision_json` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn agora_moderate(
    conv: *mut AgoraConversation,
    statement: u32,
    decision_json: *const c_char,
) -> AgoraStatus {
    guard(|| {
        let conv = handle(conv)?;
        let decision: ModerationDecision = serde_json::from_str(str_arg(decision_json, "decision_json")?)
            .map_err(|e| invalid(e.to_string()))?;
        conv.moderate(StatementId(statement), decision)?;
        Ok(())
    })
}

/// Picks the next statement for a participant. `*out_found` is false when
/// they have voted on everything.
///
/// # Safety
/// `conv` must be a live handle; `participant` valid; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn agora_next_statement(
    conv: *mut AgoraConversation,
    participant: *const c_char,
    out_found: *mut bool,
    out_statement: *mut u32,
) -> AgoraStatus {
    guard(|| {
        let conv = handle(conv)?;
        out_ptr(out_found, "out_found")?;
        out_ptr(out_statement, "out_statement")?;
        let next = conv.next_statement(str_arg(participant, "participant")?)?;
        *out_found = next.is_some();
        *out_statement = next.map_or(0, |s| s.id.0);
        Ok(())
    })
}

/// Analytics snapshot at the current head as JSON.
///
/// # Safety
/// `conv` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn agora_analytics_json(
    conv: *mut AgoraConversation,
    out: *mut *mut c_char,
) -> AgoraStatus {
    guard(|| {
        let conv = handle(conv)?;
        out_ptr(out, "out")?;
        let snap = conv.analytics_snapshot();
        *out = into_c_string(serde_json::to_string(snap.as_ref()).expect("snapshot serializes"));
        Ok(())
    })
}

/// Renders one of the export documents.
///
/// # Safety
/// `conv` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn agora_export(
    conv: *mut AgoraConversation,
    what: AgoraExport,
    out: *mut *mut c_char,
) -> AgoraStatus {
    guard(|| {
        let conv = handle(conv)?;
        out_ptr(out, "out")?;
        let kind = match what {
            AgoraExport::Events => ExportKind::Events,
            AgoraExport::VotesCsv => ExportKind::VotesCSV,
            AgoraExport::ReportJson => ExportKind::ReportJSON,
            AgoraExport::ConstitutionText => ExportKind::ConstitutionText,
            AgoraExport::ConstitutionJson => ExportKind::ConstitutionJSON,
        };
        *out = into_c_string(conv.export(kind)?.body);
        Ok(())
    })
}

/// Group-aware consensus of one statement from per-group counts. Passes
/// count as seen.
///
/// # Safety
/// The three arrays must each hold `n_groups` elements.
#[no_mangle]
pub unsafe extern "C" fn agora_gac(
    agree: *const u32,
    disagree: *const u32,
    pass: *const u32,
    n_groups: usize,
    out: *mut f64,
) -> AgoraStatus {
    guard(|| {
        out_ptr(out, "out")?;
        if n_groups == 0 {
            return Err(invalid("n_groups is 0"));
        }
        if agree.is_null() || disagree.is_null() || pass.is_null() {
            return Err(Failure(AgoraStatus::NullPointer, "count array is null".into()));
        }
        let (a, d, p) = (
            std::slice::from_raw_parts(agree, n_groups),
            std::slice::from_raw_parts(disagree, n_groups),
            std::slice::from_raw_parts(pass, n_groups),
        );
        let groups: Vec<VoteCounts> = (0..n_groups).map(|g| VoteCounts::new(a[g], d[g], p[g])).collect();
        *out = gac(&groups, PassPolicy::CountAsSeen).map_err(|e| invalid(e.to_string()))?;
        Ok(())
    })
}

/// Polarization index and its pass-adjusted form. Fails when no votes.
///
/// # Safety
/// Outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn agora_polarization(
    agree: u32,
    disagree: u32,
    pass: u32,
    out_pi: *mut f64,
    out_adjusted: *mut f64,
) -> AgoraStatus {
    guard(|| {
        out_ptr(out_pi, "out_pi")?;
        out_ptr(out_adjusted, "out_adjusted")?;
        let (pi, adj) =
            polarization_index(agree, disagree, pass).map_err(|e| invalid(e.to_string()))?;
        *out_pi = pi;
        *out_adjusted = adj;
        Ok(())
    })
}

/// Fits Elo ratings from CSV records and returns the JSON report.
///
/// # Safety
/// Strings must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn agora_elo_report_json(
    records_csv: *const c_char,
    anchor: *const c_char,
    n_resamples: usize,
    seed: u64,
    out: *mut *mut c_char,
) -> AgoraStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let records = read_records_csv(str_arg(records_csv, "records_csv")?.as_bytes())?;
        let report = elo_report(&records, str_arg(anchor, "anchor")?, n_resamples, seed)?;
        *out = into_c_string(serde_json::to_string(&report).expect("report serializes"));
        Ok(())
    })
}
