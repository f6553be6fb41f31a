//! Deliberation engine for wiki-survey style public input.
//!
//! Participants vote Agree / Disagree / Pass on short statements and
//! contribute statements of their own. Everything is stored as an
//! append-only event log ([`model`]); analytics are pure functions of that
//! log:
//!
//! * [`opinion`] projects the vote matrix to two dimensions and clusters
//!   participants into opinion groups,
//! * [`consensus`] scores statements by group-aware consensus, polarization
//!   and per-group representativeness,
//! * [`constitution`] turns the best-scoring statements into a numbered list
//!   of "Choose the response that…" principles with full provenance,
//! * [`elo`] fits Elo ratings with bootstrap intervals from pairwise
//!   preference records.
//!
//! [`service`] exposes the live loop over HTTP; [`import`], [`synth`] and
//! [`figures`] back the command-line tool.

pub mod consensus;
pub mod constitution;
pub mod elo;
pub mod figures;
pub mod import;
mod linalg;
pub mod model;
pub mod opinion;
pub mod service;
pub mod synth;

pub use consensus::{ConsensusReport, PassPolicy, VoteCounts};
pub use constitution::{Constitution, IdeaLedger, MergeRecord, Principle};
pub use model::{
    ConversationConfig, ConversationEvent, ConversationState, EventBody, ModelError, Origin,
    ParticipantId, StatementId, Vote,
};
pub use opinion::{OpinionGroups, Projection, VoteMatrix};
pub use service::{AnalyticsSnapshot, Conversation, ScreenerConfig, ServiceError};
