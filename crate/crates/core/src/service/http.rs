//! HTTP+JSON routes. Errors come back as
//! `{"error": <code>, "message": <text>}` with a matching status.

use std::collections::BTreeSet;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use super::{ExportKind, ScreenerAnswer, ServiceError, Store};
use crate::model::{ConversationConfig, ModerationDecision, ParticipantId, StatementId, Vote};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::UnknownConversation(_) | ServiceError::UnknownStatement(_) => {
                StatusCode::NOT_FOUND
            }
            ServiceError::InvalidConfig(_)
            | ServiceError::EmptyText
            | ServiceError::InvalidRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotScreened(_) | ServiceError::GateNotMet { .. } => StatusCode::FORBIDDEN,
            ServiceError::NoScreenerConfigured
            | ServiceError::NotVotable(_)
            | ServiceError::NotPending(_)
            | ServiceError::Model(_) => StatusCode::CONFLICT,
            ServiceError::LowData | ServiceError::Constitution(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ServiceError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = json!({ "error": self.code(), "message": self.to_string() });
        if let ServiceError::GateNotMet { votes_remaining } = &self {
            body["votes_remaining"] = json!(votes_remaining);
        }
        (status, Json(body)).into_response()
    }
}

type AppState = Arc<Store>;
type ApiResult<T> = Result<T, ServiceError>;

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/conversations", post(create))
        .route("/conversations/{id}/screener", post(screen))
        .route("/conversations/{id}/next-statement", get(next_statement))
        .route("/conversations/{id}/votes", post(vote))
        .route("/conversations/{id}/statements", post(submit))
        .route("/conversations/{id}/gate", get(gate))
        .route("/conversations/{id}/moderation/queue", get(queue))
        .route("/conversations/{id}/moderation/{sid}", post(moderate))
        .route("/conversations/{id}/ideas", post(tag_idea))
        .route("/conversations/{id}/merges", post(merge))
        .route("/conversations/{id}/analytics", get(analytics))
        .route("/conversations/{id}/export", get(export))
        .with_state(store)
}

async fn create(
    State(store): State<AppState>,
    Json(config): Json<ConversationConfig>,
) -> ApiResult<impl IntoResponse> {
    let id = store.create(config)?;
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))))
}

#[derive(Deserialize)]
struct ScreenRequest {
    participant: Option<ParticipantId>,
    answers: Vec<ScreenerAnswer>,
}

async fn screen(
    State(store): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<ScreenRequest>,
) -> ApiResult<impl IntoResponse> {
    let out = store.with(&id, |c| c.screen_participant(req.participant, &req.answers))?;
    Ok(Json(out))
}

#[derive(Deserialize)]
struct ParticipantQuery {
    participant: ParticipantId,
}

async fn next_statement(
    State(store): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ParticipantQuery>,
) -> ApiResult<impl IntoResponse> {
    let s = store.with(&id, |c| c.next_statement(&q.participant))?;
    Ok(Json(json!({ "statement": s })))
}

async fn gate(
    State(store): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ParticipantQuery>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(store.with(&id, |c| Ok(c.gate_status(&q.participant)))?))
}

#[derive(Deserialize)]
struct VoteRequest {
    participant: ParticipantId,
    statement: StatementId,
    vote: Vote,
}

async fn vote(
    State(store): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<VoteRequest>,
) -> ApiResult<impl IntoResponse> {
    let ack = store.with(&id, |c| c.cast_vote(&req.participant, req.statement, req.vote))?;
    Ok(Json(ack))
}

#[derive(Deserialize)]
struct SubmitRequest {
    participant: ParticipantId,
    text: String,
}

async fn submit(
    State(store): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<SubmitRequest>,
) -> ApiResult<impl IntoResponse> {
    let ack = store.with(&id, |c| c.submit_statement(&req.participant, &req.text))?;
    Ok((StatusCode::CREATED, Json(ack)))
}

async fn queue(State(store): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(store.with(&id, |c| Ok(c.moderation_queue()))?))
}

async fn moderate(
    State(store): State<AppState>,
    Path((id, sid)): Path<(String, u32)>,
    Json(decision): Json<ModerationDecision>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(store.with(&id, |c| c.moderate(StatementId(sid), decision))?))
}

#[derive(Deserialize)]
struct TagRequest {
    statement: StatementId,
    tags: BTreeSet<String>,
}

async fn tag_idea(
    State(store): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<TagRequest>,
) -> ApiResult<impl IntoResponse> {
    let seq = store.with(&id, |c| c.tag_idea(req.statement, req.tags))?;
    Ok(Json(json!({ "seq": seq })))
}

#[derive(Deserialize)]
struct MergeRequest {
    sources: Vec<StatementId>,
    merged_text: String,
    #[serde(default)]
    rationale: String,
}

async fn merge(
    State(store): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<MergeRequest>,
) -> ApiResult<impl IntoResponse> {
    let seq = store.with(&id, |c| c.merge(&req.sources, &req.merged_text, &req.rationale))?;
    Ok(Json(json!({ "seq": seq })))
}

async fn analytics(
    State(store): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    let snap = store.snapshot(&id)?;
    Ok(Json(snap.as_ref().clone()))
}

#[derive(Deserialize)]
struct ExportQuery {
    what: String,
}

async fn export(
    State(store): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ExportQuery>,
) -> ApiResult<impl IntoResponse> {
    let what: ExportKind = q.what.parse()?;
    let doc = store.export(&id, what)?;
    Ok(([(header::CONTENT_TYPE, doc.content_type)], doc.body))
}
