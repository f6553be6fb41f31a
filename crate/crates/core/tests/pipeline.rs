//! End-to-end flows through the service layer, importer and constitution
//! pipeline.

use std::collections::BTreeSet;

use agora::constitution::{export_constitution, ExportFormat, TemplateOrigin, TEMPLATE_PREFIX};
use agora::import::{import_votes, ImportSpec};
use agora::model::{ModerationDecision, ModerationStatus, Origin, RejectReason, StatementId, Vote};
use agora::opinion::{cluster, project_2d};
use agora::service::{
    build_constitution, compute_snapshot, votes_csv, Conversation, ExportKind, ScreenerAnswer,
    ScreenerConfig, ServiceError, Store,
};
use agora::synth::{assignment_accuracy, generate, SynthParams};
use agora::{Constitution, ConversationConfig, ConversationState, IdeaLedger};

const PUBLIC_CONSTITUTION: &str = include_str!("fixtures/public_constitution.txt");
const SEEDS: &str = include_str!("fixtures/seed_statements.txt");

#[test]
fn public_constitution_round_trips_byte_identically() {
    let c = Constitution::from_plain_text(PUBLIC_CONSTITUTION).unwrap();
    assert_eq!(c.principles.len(), 75);
    assert!(c.principles.iter().all(|p| p.provenance.template == TemplateOrigin::Imported));
    assert_eq!(export_constitution(&c, ExportFormat::PlainText).unwrap(), PUBLIC_CONSTITUTION);
    let json = export_constitution(&c, ExportFormat::Json).unwrap();
    assert_eq!(Constitution::from_json(&json).unwrap(), c);
    // Several lines use other wordings; they are kept as written.
    assert!(c.principles.iter().filter(|p| !p.is_templated()).count() >= 3);
}

#[test]
fn seed_statements_start_accepted() {
    let seeds: Vec<String> = SEEDS.lines().map(str::to_string).collect();
    assert_eq!(seeds.len(), 21);
    let conv = Conversation::create(
        "seeds",
        ConversationConfig {
            seed_statements: seeds.clone(),
            ..ConversationConfig::default()
        },
    )
    .unwrap();
    let accepted: Vec<_> = conv.state().accepted_statements().collect();
    assert_eq!(accepted.len(), 21);
    for (s, text) in accepted.iter().zip(&seeds) {
        assert_eq!(s.origin, Origin::Seed);
        assert_eq!(&s.text, text);
    }
    assert_eq!(conv.gate_status("new").votes_remaining, 21);
}

#[test]
fn empty_seed_list_and_open_gate() {
    let mut conv = Conversation::create(
        "open",
        ConversationConfig {
            min_votes_to_submit: 0,
            ..ConversationConfig::default()
        },
    )
    .unwrap();
    assert_eq!(conv.state().statements().len(), 0);
    assert_eq!(conv.submit_statement("p", "An idea").unwrap().statement, StatementId(0));
}

fn screener() -> ScreenerConfig {
    serde_json::from_value(serde_json::json!({
        "questions": [
            {
                "prompt": "Topics discussed recently",
                "options": ["The economy", "Generative AI/Chat GPT", "TikTok", "2024 Elections", "None of the above"],
                "required_option_indices": [1]
            },
            {
                "prompt": "News read recently",
                "options": ["Generative AI/Chat GPT", "Food", "The U.S. economy", "Social Media", "Music", "None of the above"],
                "required_option_indices": [0]
            }
        ]
    }))
    .unwrap()
}

#[test]
fn screener_admits_only_required_answers() {
    let mut conv = Conversation::create(
        "screened",
        ConversationConfig {
            seed_statements: vec!["s".into()],
            screener: Some(screener()),
            ..ConversationConfig::default()
        },
    )
    .unwrap();
    let ai = || ScreenerAnswer::Text("Generative AI/Chat GPT".into());
    let ok = conv.screen_participant(Some("a".into()), &[ai(), ai()]).unwrap();
    assert!(ok.passed);
    let no = conv
        .screen_participant(Some("b".into()), &[ai(), ScreenerAnswer::Text("Food".into())])
        .unwrap();
    assert!(!no.passed);
    assert!(conv.cast_vote("a", StatementId(0), Vote::Agree).is_ok());
    assert!(matches!(
        conv.cast_vote("b", StatementId(0), Vote::Agree),
        Err(ServiceError::NotScreened(_))
    ));
    assert!(matches!(conv.next_statement("b"), Err(ServiceError::NotScreened(_))));
    let minted = conv.screen_participant(None, &[ScreenerAnswer::Index(1), ScreenerAnswer::Index(0)]).unwrap();
    assert!(minted.passed && !minted.participant.is_empty());

    let mut open = Conversation::create("open", ConversationConfig::default()).unwrap();
    assert!(matches!(
        open.screen_participant(None, &[]),
        Err(ServiceError::NoScreenerConfigured)
    ));
}

#[test]
fn moderation_examples() {
    let mut conv = Conversation::create(
        "mod",
        ConversationConfig {
            min_votes_to_submit: 0,
            ..ConversationConfig::default()
        },
    )
    .unwrap();
    let harass = conv.submit_statement("p", "Never sexually harass").unwrap().statement;
    let report = conv.submit_statement("p", "The AI should report illegal activity").unwrap().statement;
    let dup = conv.submit_statement("q", "never sexually harass ").unwrap().statement;
    let queue = conv.moderation_queue();
    assert_eq!(queue.len(), 3);
    assert_eq!(queue[2].duplicate_of, Some(harass));

    conv.moderate(harass, ModerationDecision::Rewrite("The AI should never sexually harass users.".into()))
        .unwrap();
    conv.moderate(report, ModerationDecision::Reject(RejectReason::Irrelevant)).unwrap();
    conv.moderate(dup, ModerationDecision::Reject(RejectReason::Duplicate)).unwrap();
    let state = conv.state();
    let ModerationStatus::Rewritten(new) = state.statement(harass).unwrap().moderation else {
        panic!("expected a rewrite");
    };
    let replacement = state.statement(new).unwrap();
    assert_eq!(replacement.moderation, ModerationStatus::Accepted);
    assert_eq!(replacement.origin, Origin::RewriteOf(harass));
    assert!(matches!(
        conv.cast_vote("p", report, Vote::Agree),
        Err(ServiceError::NotVotable(_))
    ));
    assert!(matches!(
        conv.moderate(report, ModerationDecision::Accept),
        Err(ServiceError::NotPending(_))
    ));
}

#[test]
fn next_statement_is_uniform_and_repeatable() {
    let config = ConversationConfig {
        seed_statements: (0..10).map(|i| format!("statement {i}")).collect(),
        prng_seed: 2024,
        ..ConversationConfig::default()
    };
    let mut conv = Conversation::create("route", config).unwrap();
    let draws = 10_000;
    let mut counts = [0usize; 10];
    for i in 0..draws {
        let s = conv.next_statement(&format!("participant-{i}")).unwrap().unwrap();
        counts[s.id.index()] += 1;
    }
    let expected = draws as f64 / 10.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 9 degrees of freedom, upper 0.1% point.
    assert!(chi2 < 27.877, "chi-square {chi2:.2} for {counts:?}");
    for c in counts {
        assert!((c as f64 / draws as f64 - 0.1).abs() <= 0.05, "{counts:?}");
    }

    let first = conv.next_statement("alice").unwrap().unwrap().id;
    assert_eq!(conv.next_statement("alice").unwrap().unwrap().id, first);
    for s in 0..10 {
        conv.cast_vote("alice", StatementId(s), Vote::Pass).unwrap();
    }
    assert_eq!(conv.next_statement("alice").unwrap(), None);
}

fn synth(blocs: usize, noise: f64, seed: u64) -> SynthParams {
    SynthParams {
        participants: 90,
        statements: 24,
        blocs,
        noise,
        seed,
    }
}

#[test]
fn planted_blocs_are_recovered() {
    for (blocs, noise) in [(2, 0.1), (3, 0.02)] {
        let pop = generate(&synth(blocs, noise, 5)).unwrap();
        let state = ConversationState::fold(&pop.events).unwrap();
        let matrix = state.build_vote_matrix();
        let groups = cluster(&project_2d(&matrix).unwrap(), 2..=5, 5).unwrap();
        let truth: Vec<usize> = matrix.row_ids().iter().map(|p| pop.labels[p]).collect();
        assert_eq!(groups.k, blocs);
        let acc = assignment_accuracy(&truth, &groups.assignment, blocs);
        assert!(acc >= 0.95, "{blocs} blocs: accuracy {acc}");
    }
}

#[test]
fn import_of_exported_votes_reproduces_them() {
    let pop = generate(&synth(2, 0.2, 9)).unwrap();
    let state = ConversationState::fold(&pop.events).unwrap();
    let csv = votes_csv(&state);
    let (events, summary) = import_votes(csv.as_bytes(), &ImportSpec::default(), ConversationConfig::default()).unwrap();
    assert_eq!(summary.effective_votes, state.votes().len());
    let imported = ConversationState::fold(&events).unwrap();
    let triples = |s: &ConversationState| -> BTreeSet<(String, StatementId, Vote)> {
        s.votes().values().map(|r| (r.participant.clone(), r.statement, r.vote)).collect()
    };
    assert_eq!(triples(&imported), triples(&state));
    assert_eq!(votes_csv(&imported), votes_csv(&ConversationState::fold(&events).unwrap()));

    let flipped = ImportSpec {
        sign_flip: true,
        ..ImportSpec::default()
    };
    let (events, _) = import_votes(csv.as_bytes(), &flipped, ConversationConfig::default()).unwrap();
    let flipped_state = ConversationState::fold(&events).unwrap();
    for r in state.votes().values() {
        let v = flipped_state.effective_vote(&r.participant, r.statement).unwrap();
        assert_eq!(v.value(), -r.vote.value());
    }
}

/// Two opposed blocs that nonetheless share a few statements.
fn curated_conversation() -> Conversation {
    let seeds = [
        "The AI should be respectful",
        "The AI should be honest",
        "The AI should not be threatening or aggressive",
        "The AI should prioritize individual liberty",
        "The AI should prioritize the collective good",
        "Choose the response that is most friendly",
        "AI should be easily understandable",
        "The ai should give clear and concise answers",
    ];
    let mut conv = Conversation::create(
        "curated",
        ConversationConfig {
            seed_statements: seeds.iter().map(|s| s.to_string()).collect(),
            idea_budget: 4,
            prng_seed: 3,
            ..ConversationConfig::default()
        },
    )
    .unwrap();
    for i in 0..12 {
        let p = format!("p{i:02}");
        let bloc = i % 2;
        for s in 0..8u32 {
            let vote = match (s, bloc) {
                (3, 0) | (4, 1) => Vote::Agree,
                (3, _) | (4, _) => Vote::Disagree,
                (5, 1) if i == 1 => Vote::Pass,
                _ => Vote::Agree,
            };
            conv.cast_vote(&p, StatementId(s), vote).unwrap();
        }
    }
    conv
}

#[test]
fn constitution_from_live_conversation() {
    let mut conv = curated_conversation();
    let tags = [
        (0, "respect"),
        (1, "honesty"),
        (2, "non-aggression"),
        (3, "liberty"),
        (4, "collective"),
        (5, "friendliness"),
        (6, "clarity"),
        (7, "clarity"),
    ];
    for (s, t) in tags {
        conv.tag_idea(StatementId(s), [t.to_string()].into()).unwrap();
    }
    conv.merge(
        &[StatementId(6), StatementId(7)],
        "The AI should be easily understandable and give clear and concise answers.",
        "same idea",
    )
    .unwrap();
    let snap = conv.analytics_snapshot();
    assert!(!snap.low_data);
    assert_eq!(snap.groups.as_ref().unwrap().k, 2);
    let report = snap.report.as_ref().unwrap();
    let polarized = report.get(StatementId(3)).unwrap().gac;
    assert!(report.statements.iter().filter(|s| s.statement.0 != 3 && s.statement.0 != 4).all(|s| s.gac > polarized));

    let draft = snap.constitution_draft.clone().unwrap();
    assert_eq!(draft.idea_budget, 4);
    assert!(draft.total_ideas_used <= 4);
    assert!(draft.principles.iter().all(|p| p.provenance.template != TemplateOrigin::Unresolved));
    let text = conv.export(ExportKind::ConstitutionText).unwrap().body;
    assert_eq!(text.lines().count(), draft.principles.len());
    for (i, line) in text.lines().enumerate() {
        assert!(line.starts_with(&format!("{}. {TEMPLATE_PREFIX}", i + 1)), "{line}");
    }
    assert!(draft
        .principles
        .iter()
        .all(|p| p.gac_at_selection >= draft.effective_threshold));
    let merged = draft.principles.iter().find(|p| p.provenance.source_statements.len() == 2);
    if let Some(m) = merged {
        assert_eq!(m.provenance.merges.len(), 1);
        assert!(m.text.starts_with(TEMPLATE_PREFIX));
    }
    let json = conv.export(ExportKind::ConstitutionJSON).unwrap().body;
    assert_eq!(Constitution::from_json(&json).unwrap(), draft);
}

#[test]
fn unresolved_principles_block_export_until_overridden() {
    let conv = curated_conversation();
    let state = conv.state();
    let snap = compute_snapshot(state);
    let report = snap.report.unwrap();
    let ledger = IdeaLedger::default_for(report.gac_by_statement().keys().copied());
    let mut overrides = Default::default();
    let c = build_constitution(state, &report, &ledger, &[], &overrides, 8).unwrap();
    // "The AI should prioritize ..." has no rule.
    assert!(export_constitution(&c, ExportFormat::PlainText).is_err());
    for p in &c.principles {
        if p.provenance.template == TemplateOrigin::Unresolved {
            let key = p.provenance.source_statements[0];
            overrides.insert(key, format!("{TEMPLATE_PREFIX} best reflects statement {}", key.0));
        }
    }
    let c = build_constitution(state, &report, &ledger, &[], &overrides, 8).unwrap();
    let text = export_constitution(&c, ExportFormat::PlainText).unwrap();
    assert_eq!(text.lines().count(), 8);
}

#[test]
fn persisted_store_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (id, snap) = {
        let store = Store::open(dir.path()).unwrap();
        let id = store.create(ConversationConfig {
            seed_statements: (0..6).map(|i| format!("s{i}")).collect(),
            ..ConversationConfig::default()
        })
        .unwrap();
        for p in 0..7 {
            for s in 0..6 {
                let v = if (p + s) % 3 == 0 { Vote::Disagree } else { Vote::Agree };
                store.with(&id, |c| c.cast_vote(&format!("p{p}"), StatementId(s), v)).unwrap();
            }
        }
        let snap = serde_json::to_string(&*store.snapshot(&id).unwrap()).unwrap();
        (id, snap)
    };
    let store = Store::open(dir.path()).unwrap();
    assert_eq!(store.ids(), vec![id.clone()]);
    assert_eq!(serde_json::to_string(&*store.snapshot(&id).unwrap()).unwrap(), snap);
    store.with(&id, |c| c.cast_vote("late", StatementId(0), Vote::Pass)).unwrap();
    let reopened = Store::open(dir.path()).unwrap();
    assert_eq!(
        reopened.with(&id, |c| Ok(c.state().vote_count("late"))).unwrap(),
        1
    );
}
