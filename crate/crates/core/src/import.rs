//! External vote CSVs to an event log.
//!
//! Statements are created first (as seeds, since they were already
//! moderated upstream), then one vote event per row in file order.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    ConversationConfig, ConversationEvent, ConversationState, EventBody, ModelError, Origin,
    ParticipantId, StatementId, Vote,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub participant: String,
    pub statement: String,
    pub vote: String,
    /// Optional column holding statement text.
    #[serde(default)]
    pub text: Option<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            participant: "participant_id".into(),
            statement: "statement_id".into(),
            vote: "vote".into(),
            text: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteEncoding {
    pub agree_value: String,
    pub disagree_value: String,
    pub pass_value: String,
}

impl Default for VoteEncoding {
    fn default() -> Self {
        VoteEncoding {
            agree_value: "1".into(),
            disagree_value: "-1".into(),
            pass_value: "0".into(),
        }
    }
}

fn same_value(a: &str, b: &str) -> bool {
    let (a, b) = (a.trim(), b.trim());
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

impl VoteEncoding {
    pub fn validate(&self) -> Result<(), ImportError> {
        let v = [&self.agree_value, &self.disagree_value, &self.pass_value];
        for i in 0..3 {
            for j in i + 1..3 {
                if same_value(v[i], v[j]) {
                    return Err(ImportError::EncodingCollision(v[i].clone()));
                }
            }
        }
        Ok(())
    }

    pub fn decode(&self, raw: &str) -> Option<Vote> {
        [
            (&self.agree_value, Vote::Agree),
            (&self.disagree_value, Vote::Disagree),
            (&self.pass_value, Vote::Pass),
        ]
        .into_iter()
        .find(|(v, _)| same_value(v, raw))
        .map(|(_, vote)| vote)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportSpec {
    pub column_map: ColumnMap,
    pub vote_encoding: VoteEncoding,
    /// Swap Agree and Disagree after decoding, for files whose sign
    /// convention is inverted.
    pub sign_flip: bool,
}

#[derive(Debug, Error)]
pub enum ImportError {
    #[error("vote encoding uses {0:?} for more than one vote")]
    EncodingCollision(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("import produced an invalid log: {0}")]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportSummary {
    pub rows: usize,
    pub statements: usize,
    pub participants: usize,
    pub effective_votes: usize,
    /// Raw statement key to assigned id.
    pub statement_ids: BTreeMap<String, StatementId>,
}

/// Parses `input` and synthesizes a complete event log. Timestamps are 0 so
/// the result depends only on the file.
///
/// When the raw statement keys are exactly the integers `0..n`, they are
/// kept as ids; otherwise ids follow numeric order (if all keys are
/// integers) or first appearance.
pub fn import_votes<R: Read>(
    input: R,
    spec: &ImportSpec,
    config: ConversationConfig,
) -> Result<(Vec<ConversationEvent>, ImportSummary), ImportError> {
    spec.vote_encoding.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers().map_err(|e| ImportError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ImportError::Parse {
                line: 1,
                message: format!("missing column {name:?}"),
            })
    };
    let cmap = &spec.column_map;
    let (pc, sc, vc) = (col(&cmap.participant)?, col(&cmap.statement)?, col(&cmap.vote)?);
    let tc = cmap.text.as_deref().map(col).transpose()?;

    let mut rows: Vec<(ParticipantId, String, Vote)> = Vec::new();
    let mut order: Vec<String> = Vec::new();
    let mut texts: BTreeMap<String, String> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| ImportError::Parse {
            line,
            message: e.to_string(),
        })?;
        let field = |c: usize| {
            record
                .get(c)
                .filter(|v| !v.is_empty())
                .ok_or_else(|| ImportError::Parse {
                    line,
                    message: format!("empty field in column {}", c + 1),
                })
        };
        let participant = field(pc)?.to_string();
        let statement = field(sc)?.to_string();
        let raw_vote = field(vc)?;
        let mut vote = spec
            .vote_encoding
            .decode(raw_vote)
            .ok_or_else(|| ImportError::Parse {
                line,
                message: format!("unrecognized vote value {raw_vote:?}"),
            })?;
        if spec.sign_flip {
            vote = match vote {
                Vote::Agree => Vote::Disagree,
                Vote::Disagree => Vote::Agree,
                Vote::Pass => Vote::Pass,
            };
        }
        if !texts.contains_key(&statement) {
            order.push(statement.clone());
            let text = match tc {
                Some(c) => record.get(c).unwrap_or_default().to_string(),
                None => String::new(),
            };
            texts.insert(statement.clone(), text);
        }
        rows.push((participant, statement, vote));
    }

    let numeric: Option<Vec<(u64, String)>> = order
        .iter()
        .map(|s| s.parse::<u64>().ok().map(|n| (n, s.clone())))
        .collect();
    let ordered: Vec<String> = match numeric {
        Some(mut v) => {
            v.sort();
            v.into_iter().map(|(_, s)| s).collect()
        }
        None => order,
    };
    let statement_ids: BTreeMap<String, StatementId> = ordered
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), StatementId(i as u32)))
        .collect();

    let mut events = Vec::with_capacity(1 + ordered.len() + rows.len());
    let mut push = |body: EventBody| {
        let seq = events.len() as u64 + 1;
        events.push(ConversationEvent { seq, ts: 0, body });
    };
    push(EventBody::ConversationCreated {
        config: ConversationConfig {
            seed_statements: Vec::new(),
            ..config
        },
    });
    for key in &ordered {
        let text = texts[key].trim();
        push(EventBody::StatementSubmitted {
            id: statement_ids[key],
            text: if text.is_empty() {
                format!("statement {key}")
            } else {
                text.to_string()
            },
            origin: Origin::Seed,
        });
    }
    let participants: BTreeSet<&str> = rows.iter().map(|(p, _, _)| p.as_str()).collect();
    let n_participants = participants.len();
    for (participant, statement, vote) in &rows {
        push(EventBody::VoteCast {
            participant: participant.clone(),
            statement: statement_ids[statement],
            vote: *vote,
        });
    }
    let state = ConversationState::fold(&events)?;
    let summary = ImportSummary {
        rows: rows.len(),
        statements: ordered.len(),
        participants: n_participants,
        effective_votes: state.votes().len(),
        statement_ids,
    };
    Ok((events, summary))
}
