//! Synthetic populations with planted opinion blocs.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ConversationConfig, ConversationEvent, EventBody, Origin, ParticipantId, StatementId, Vote};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub participants: usize,
    pub statements: usize,
    pub blocs: usize,
    /// Probability that each vote is flipped away from its bloc's stance.
    pub noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPopulation {
    pub events: Vec<ConversationEvent>,
    /// Planted bloc per participant.
    pub labels: BTreeMap<ParticipantId, usize>,
    /// Stance (+1 agree, −1 disagree) per bloc and statement.
    pub stances: Vec<Vec<i8>>,
}

/// Participant `i` joins bloc `i % blocs`. Each bloc has a fixed stance per
/// statement; with exactly two blocs the second is the negation of the
/// first, otherwise stances are drawn independently. Every participant
/// votes on every statement, and each vote is flipped (Agree ↔ Disagree)
/// with probability `noise`.
pub fn generate(params: &SynthParams) -> Result<SynthPopulation, SynthError> {
    let bad = |m: &str| Err(SynthError::InvalidParams(m.to_string()));
    if params.blocs == 0 {
        return bad("blocs must be at least 1");
    }
    if !(0.0..=1.0).contains(&params.noise) {
        return bad("noise must lie in [0, 1]");
    }
    if params.participants == 0 || params.statements == 0 {
        return bad("need at least one participant and one statement");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut stances: Vec<Vec<i8>> = Vec::with_capacity(params.blocs);
    for b in 0..params.blocs {
        let row = if b == 1 && params.blocs == 2 {
            stances[0].iter().map(|s| -s).collect()
        } else {
            (0..params.statements)
                .map(|_| if rng.gen_bool(0.5) { 1 } else { -1 })
                .collect()
        };
        stances.push(row);
    }

    let width = params.participants.to_string().len();
    let mut events = Vec::new();
    let mut push = |body: EventBody| {
        let seq = events.len() as u64 + 1;
        events.push(ConversationEvent { seq, ts: 0, body });
    };
    push(EventBody::ConversationCreated {
        config: ConversationConfig {
            prng_seed: params.seed,
            ..ConversationConfig::default()
        },
    });
    for s in 0..params.statements {
        push(EventBody::StatementSubmitted {
            id: StatementId(s as u32),
            text: format!("Synthetic statement {s}"),
            origin: Origin::Seed,
        });
    }
    let mut labels = BTreeMap::new();
    for i in 0..params.participants {
        let bloc = i % params.blocs;
        let id = format!("p{i:0width$}");
        for (s, &stance) in stances[bloc].iter().enumerate() {
            let flip = rng.gen_bool(params.noise);
            let vote = if (stance > 0) != flip { Vote::Agree } else { Vote::Disagree };
            push(EventBody::VoteCast {
                participant: id.clone(),
                statement: StatementId(s as u32),
                vote,
            });
        }
        labels.insert(id, bloc);
    }
    Ok(SynthPopulation {
        events,
        labels,
        stances,
    })
}

/// Fraction of participants whose group matches their bloc under the best
/// one-to-one relabeling (exhaustive over permutations, so keep `k` small).
pub fn assignment_accuracy(truth: &[usize], predicted: &[usize], k: usize) -> f64 {
    assert_eq!(truth.len(), predicted.len());
    if truth.is_empty() {
        return 1.0;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0;
    loop {
        let hits = truth
            .iter()
            .zip(predicted)
            .filter(|(t, p)| perm.get(**p) == Some(*t))
            .count();
        best = best.max(hits);
        if !next_permutation(&mut perm) {
            break;
        }
    }
    best as f64 / truth.len() as f64
}

fn next_permutation(v: &mut [usize]) -> bool {
    let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else {
        return false;
    };
    let j = (i..v.len()).rev().find(|&j| v[j] > v[i - 1]).expect("pivot exists");
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}
