//! The HTTP+JSON surface, exercised in-process.

mod common;

use axum::http::{Method, StatusCode};
use common::{app, call};
use serde_json::{json, Value};

async fn conversation(router: &axum::Router, config: Value) -> String {
    let (status, body) = call(router, Method::POST, "/conversations", Some(config)).await;
    assert_eq!(status, StatusCode::CREATED);
    body["id"].as_str().unwrap().to_string()
}

fn vote(p: &str, s: u32, v: &str) -> Option<Value> {
    Some(json!({ "participant": p, "statement": s, "vote": v }))
}

#[tokio::test]
async fn voting_loop_and_exports() {
    let (_store, router) = app();
    let seeds: Vec<String> = (0..4).map(|i| format!("The AI should be kind {i}")).collect();
    let id = conversation(&router, json!({ "seed_statements": seeds, "min_votes_to_submit": 3 })).await;
    let base = format!("/conversations/{id}");

    let (status, body) = call(&router, Method::GET, &format!("{base}/next-statement?participant=ann"), None).await;
    assert_eq!(status, StatusCode::OK);
    let first = body["statement"]["id"].as_u64().unwrap();
    assert_eq!(body["statement"]["moderation"], "Accepted");

    let (status, ack) = call(&router, Method::POST, &format!("{base}/votes"), vote("ann", first as u32, "Agree")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ack["votes"], 1);
    assert_eq!(ack["votes_remaining"], 2);
    assert_eq!(ack["can_submit"], false);

    let (status, err) = call(&router, Method::POST, &format!("{base}/votes"), vote("ann", 99, "Agree")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"], "UnknownStatement");

    let (status, _) = call(&router, Method::POST, &format!("{base}/votes"), vote("ann", 0, "Maybe")).await;
    assert!(status.is_client_error());

    for s in 0..4 {
        call(&router, Method::POST, &format!("{base}/votes"), vote("ann", s, "Disagree")).await;
    }
    let (_, gate) = call(&router, Method::GET, &format!("{base}/gate?participant=ann"), None).await;
    assert_eq!(gate, json!({ "participant": "ann", "votes": 4, "votes_remaining": 0, "can_submit": true }));
    let (_, none) = call(&router, Method::GET, &format!("{base}/next-statement?participant=ann"), None).await;
    assert_eq!(none["statement"], Value::Null);

    let (status, _) = call(
        &router,
        Method::POST,
        &format!("{base}/statements"),
        Some(json!({ "participant": "ann", "text": "   " })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, sub) = call(
        &router,
        Method::POST,
        &format!("{base}/statements"),
        Some(json!({ "participant": "ann", "text": "The AI should be patient" })),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    let sid = sub["statement"].as_u64().unwrap();

    let (_, queue) = call(&router, Method::GET, &format!("{base}/moderation/queue"), None).await;
    assert_eq!(queue.as_array().unwrap().len(), 1);
    assert_eq!(queue[0]["statement"]["text"], "The AI should be patient");
    let (status, _) = call(&router, Method::POST, &format!("{base}/votes"), vote("bob", sid as u32, "Agree")).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, m) = call(&router, Method::POST, &format!("{base}/moderation/{sid}"), Some(json!("Accept"))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(m["status"], "Accepted");
    let (status, again) = call(&router, Method::POST, &format!("{base}/moderation/{sid}"), Some(json!("Accept"))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(again["error"], "NotPending");
    let (status, _) = call(
        &router,
        Method::POST,
        &format!("{base}/moderation/0"),
        Some(json!({ "Reject": "Nonsense" })),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, analytics) = call(&router, Method::GET, &format!("{base}/analytics"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(analytics["low_data"], true);
    assert_eq!(analytics["counts"]["statements_accepted"], 5);

    let (status, csv) = call(&router, Method::GET, &format!("{base}/export?what=VotesCSV"), None).await;
    assert_eq!(status, StatusCode::OK);
    let csv = csv.as_str().unwrap();
    assert!(csv.starts_with("participant_id,statement_id,vote,seq\n"));
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(2) == Some("-1")));

    let (status, log) = call(&router, Method::GET, &format!("{base}/export?what=Events"), None).await;
    assert_eq!(status, StatusCode::OK);
    let first_line = log.as_str().unwrap().lines().next().unwrap();
    let at = |k: &str| first_line.find(&format!("\"{k}\":")).unwrap();
    assert!(first_line.starts_with("{\"seq\":1,"));
    assert!(at("seq") < at("ts") && at("ts") < at("kind") && at("kind") < at("payload"));

    let (status, err) = call(&router, Method::GET, &format!("{base}/export?what=ReportJSON"), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["error"], "LowData");
    let (status, _) = call(&router, Method::GET, &format!("{base}/export?what=Pdf"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn screener_over_http() {
    let (_store, router) = app();
    let config = json!({
        "seed_statements": ["one", "two"],
        "screener": { "questions": [
            { "prompt": "q1", "options": ["x", "y"], "required_option_indices": [1] }
        ]}
    });
    let id = conversation(&router, config).await;
    let base = format!("/conversations/{id}");
    let (status, err) = call(&router, Method::POST, &format!("{base}/votes"), vote("eve", 0, "Agree")).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(err["error"], "NotScreened");

    let (_, out) = call(&router, Method::POST, &format!("{base}/screener"), Some(json!({ "participant": "eve", "answers": ["x"] }))).await;
    assert_eq!(out["passed"], false);
    let (_, out) = call(&router, Method::POST, &format!("{base}/screener"), Some(json!({ "participant": "eve", "answers": [1] }))).await;
    assert_eq!(out["passed"], true);
    let (status, _) = call(&router, Method::POST, &format!("{base}/votes"), vote("eve", 0, "Agree")).await;
    assert_eq!(status, StatusCode::OK);

    let (_, minted) = call(&router, Method::POST, &format!("{base}/screener"), Some(json!({ "answers": ["y"] }))).await;
    assert!(minted["participant"].as_str().unwrap().len() > 4);

    let open = conversation(&router, json!({})).await;
    let (status, err) = call(&router, Method::POST, &format!("/conversations/{open}/screener"), Some(json!({ "answers": [] }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "NoScreenerConfigured");
}

#[tokio::test]
async fn errors_for_bad_requests() {
    let (_store, router) = app();
    let (status, err) = call(&router, Method::GET, "/conversations/nope/analytics", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"], "UnknownConversation");
    let (status, err) = call(&router, Method::POST, "/conversations", Some(json!({ "idea_budget": 0 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["error"], "InvalidConfig");
    let (status, _) = call(&router, Method::POST, "/conversations", Some(json!({ "seed_statements": [""] }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn curation_routes_feed_the_draft() {
    let (_store, router) = app();
    let seeds = ["The AI should be honest", "The AI should be kind", "AI should be clear", "The AI should be brief"];
    let id = conversation(&router, json!({ "seed_statements": seeds, "idea_budget": 2 })).await;
    let base = format!("/conversations/{id}");
    for p in 0..8 {
        for s in 0..4 {
            let v = if s == 3 && p % 2 == 0 { "Disagree" } else { "Agree" };
            call(&router, Method::POST, &format!("{base}/votes"), vote(&format!("p{p}"), s, v)).await;
        }
    }
    for (s, tag) in [(0, "honesty"), (1, "kindness"), (2, "clarity"), (3, "clarity")] {
        let (status, _) = call(&router, Method::POST, &format!("{base}/ideas"), Some(json!({ "statement": s, "tags": [tag] }))).await;
        assert_eq!(status, StatusCode::OK);
    }
    let merge = json!({ "sources": [2, 3], "merged_text": "The AI should be clear and brief" });
    let (status, _) = call(&router, Method::POST, &format!("{base}/merges"), Some(merge.clone())).await;
    assert_eq!(status, StatusCode::OK);
    let (status, err) = call(&router, Method::POST, &format!("{base}/merges"), Some(merge)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["error"], "ConstitutionError");

    let (_, snap) = call(&router, Method::GET, &format!("{base}/analytics"), None).await;
    assert_eq!(snap["low_data"], false);
    let draft = &snap["constitution_draft"];
    assert_eq!(draft["idea_budget"], 2);
    assert!(draft["total_ideas_used"].as_u64().unwrap() <= 2);

    let (status, text) = call(&router, Method::GET, &format!("{base}/export?what=ConstitutionText"), None).await;
    assert_eq!(status, StatusCode::OK);
    for line in text.as_str().unwrap().lines() {
        assert!(line.contains(". Choose the response that "), "{line}");
    }
    let (status, report) = call(&router, Method::GET, &format!("{base}/export?what=ReportJSON"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report["statements"].as_array().unwrap().len(), 4);
}
