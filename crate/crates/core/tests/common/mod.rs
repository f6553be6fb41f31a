//! Shared helpers for the integration suites. Each test binary uses a
//! different subset.
#![allow(dead_code)]

use std::sync::Arc;

use agora::model::{ModerationDecision, RejectReason, StatementId, Vote};
use agora::service::{http, Store};
use agora::ConversationConfig;
use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tower::ServiceExt;

/// Brute-force group-aware consensus: the product over groups of
/// `(agree + 1) / (agree + disagree + pass + 2)`, carried as one exact
/// fraction and divided once at the end.
pub fn gac_oracle(groups: &[(u32, u32, u32)]) -> f64 {
    let mut num: u128 = 1;
    let mut den: u128 = 1;
    for &(a, d, p) in groups {
        num *= u128::from(a) + 1;
        den *= u128::from(a + d + p) + 2;
    }
    num as f64 / den as f64
}

/// Drives a conversation with a reproducible mix of votes, submissions,
/// moderation decisions and idea tags until its log holds `target` events.
pub fn random_session(store: &Store, seed: u64, target: usize) -> String {
    let config = ConversationConfig {
        min_votes_to_submit: 4,
        seed_statements: (0..8).map(|i| format!("Seed statement number {i}")).collect(),
        prng_seed: seed,
        ..ConversationConfig::default()
    };
    let id = store.create(config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let participants: Vec<String> = (0..12).map(|i| format!("p{i:02}")).collect();
    let mut submitted = 0;
    loop {
        let len = store.with(&id, |c| Ok(c.events().len())).unwrap();
        if len >= target {
            break;
        }
        let p = &participants[rng.gen_range(0..participants.len())];
        let roll = rng.gen_range(0..100);
        store
            .with(&id, |c| {
                let state = c.state();
                let pending: Vec<StatementId> = state.pending_statements().map(|s| s.id).collect();
                let accepted: Vec<StatementId> = state.accepted_statements().map(|s| s.id).collect();
                if roll < 8 && c.gate_status(p).can_submit {
                    submitted += 1;
                    c.submit_statement(p, &format!("Submitted idea {submitted} from {p}"))?;
                } else if roll < 18 && !pending.is_empty() {
                    let s = pending[rng.gen_range(0..pending.len())];
                    let decision = match rng.gen_range(0..4) {
                        0 => ModerationDecision::Reject(RejectReason::Irrelevant),
                        1 => ModerationDecision::Rewrite(format!("Rewritten statement {}", s.0)),
                        _ => ModerationDecision::Accept,
                    };
                    c.moderate(s, decision)?;
                } else if roll < 21 {
                    let s = accepted[rng.gen_range(0..accepted.len())];
                    let tag = format!("idea-{}", rng.gen_range(0..6));
                    c.tag_idea(s, [tag].into())?;
                } else {
                    let s = accepted[rng.gen_range(0..accepted.len())];
                    let vote = Vote::ALL[rng.gen_range(0..3)];
                    c.cast_vote(p, s, vote)?;
                }
                Ok(())
            })
            .unwrap();
    }
    id
}

pub fn app() -> (Arc<Store>, axum::Router) {
    let store = Arc::new(Store::in_memory());
    let router = http::router(Arc::clone(&store));
    (store, router)
}

/// Sends one request; the response body is parsed as JSON when possible
/// and otherwise returned as a JSON string.
pub async fn call(router: &axum::Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = router.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let text = String::from_utf8(bytes.to_vec()).unwrap();
    let value = serde_json::from_str(&text).unwrap_or(Value::String(text));
    (status, value)
}

/// Minimum within-cluster SSE over every labelling of `points` into at
/// most `k` groups (`k^n` labellings; fine for n = 8).
pub fn exhaustive_sse(points: &[[f64; 2]], k: usize) -> f64 {
    let n = points.len();
    let total = (k as u64).pow(n as u32);
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; n];
    for code in 0..total {
        let mut c = code;
        for l in labels.iter_mut() {
            *l = (c % k as u64) as usize;
            c /= k as u64;
        }
        let mut sum = vec![[0.0f64; 2]; k];
        let mut cnt = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            sum[l][0] += p[0];
            sum[l][1] += p[1];
            cnt[l] += 1;
        }
        let sse: f64 = points
            .iter()
            .zip(&labels)
            .map(|(p, &l)| {
                let m = [sum[l][0] / cnt[l] as f64, sum[l][1] / cnt[l] as f64];
                (p[0] - m[0]).powi(2) + (p[1] - m[1]).powi(2)
            })
            .sum();
        best = best.min(sse);
    }
    best
}

/// Eight points on a half-unit grid, so repeated points and tied optima
/// show up regularly.
pub fn eight_points(rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    (0..8)
        .map(|_| [rng.gen_range(-6..=6) as f64 * 0.5, rng.gen_range(-6..=6) as f64 * 0.5])
        .collect()
}
