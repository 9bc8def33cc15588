//! JSON formats for training examples and candidate parses.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ParseCandidate, TrainingExample};
use crate::kb::{parse_proposition, Proposition};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {message}")]
pub struct DataError {
    pub line: usize,
    pub message: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetRecord {
    prop: String,
    value: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupRecord {
    link: String,
    value: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExampleRecord {
    target: TargetRecord,
    groups: Vec<GroupRecord>,
    #[serde(default = "one")]
    weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CandidateRecord {
    id: String,
    score: f64,
    #[serde(default)]
    assume: Vec<String>,
    #[serde(default)]
    ask: Vec<String>,
}

fn props(texts: &[String]) -> Result<Vec<Proposition>, String> {
    texts
        .iter()
        .map(|t| parse_proposition(t).map_err(|e| format!("{t}: {}", e.message)))
        .collect()
}

fn example(rec: ExampleRecord) -> Result<TrainingExample, String> {
    let target = parse_proposition(&rec.target.prop).map_err(|e| e.message)?;
    if rec.groups.is_empty() {
        return Err("an example needs at least one group".into());
    }
    if !(rec.weight.is_finite() && rec.weight >= 0.0) {
        return Err(format!("weight {} must be finite and nonnegative", rec.weight));
    }
    Ok(TrainingExample {
        target,
        value: rec.target.value,
        groups: rec.groups.into_iter().map(|g| (g.link, g.value)).collect(),
        weight: rec.weight,
    })
}

fn candidate(rec: CandidateRecord) -> Result<ParseCandidate, String> {
    if !(rec.score.is_finite() && rec.score >= 0.0) {
        return Err(format!("score {} must be finite and nonnegative", rec.score));
    }
    if rec.assume.is_empty() && rec.ask.is_empty() {
        return Err(format!("candidate {} has an empty logical form", rec.id));
    }
    Ok(ParseCandidate {
        id: rec.id,
        score: rec.score,
        assume: props(&rec.assume)?,
        ask: props(&rec.ask)?,
    })
}

fn jsonl<R, T>(text: &str, convert: impl Fn(R) -> Result<T, String>) -> Result<Vec<T>, DataError>
where
    R: for<'de> Deserialize<'de>,
{
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| DataError { line: i + 1, message };
        let rec: R = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        out.push(convert(rec).map_err(err)?);
    }
    Ok(out)
}

/// One JSON object per line; blank lines are skipped.
pub fn parse_training_data(text: &str) -> Result<Vec<TrainingExample>, DataError> {
    jsonl(text, example)
}

pub fn training_data_to_jsonl(data: &[TrainingExample]) -> String {
    let mut s = String::new();
    for ex in data {
        let rec = ExampleRecord {
            target: TargetRecord {
                prop: ex.target.to_string(),
                value: ex.value,
            },
            groups: ex
                .groups
                .iter()
                .map(|(link, value)| GroupRecord {
                    link: link.clone(),
                    value: *value,
                })
                .collect(),
            weight: ex.weight,
        };
        s.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        s.push('\n');
    }
    s
}

/// Candidate parses, either one JSON object per line or a single JSON array.
/// In array form errors report line 1.
pub fn parse_candidates(text: &str) -> Result<Vec<ParseCandidate>, DataError> {
    if text.trim_start().starts_with('[') {
        let recs: Vec<CandidateRecord> = serde_json::from_str(text).map_err(|e| DataError {
            line: e.line(),
            message: e.to_string(),
        })?;
        recs.into_iter()
            .map(candidate)
            .collect::<Result<_, _>>()
            .map_err(|message| DataError { line: 1, message })
    } else {
        jsonl(text, candidate)
    }
}
