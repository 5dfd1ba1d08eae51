//! Extraction and validation of model JSON replies.

use std::collections::BTreeSet;
use std::fmt;

use indexmap::IndexMap;
use serde_json::{Map, Value};
use thiserror::Error;

use super::{Phase, ResponseSchema};
use crate::engine::RevisionRecord;
use crate::response::{Decision, TaskResponse};
use crate::task::TaskKind;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    NoJson,
    InvalidJson(String),
    MissingField(String),
    WrongType { field: String, expected: &'static str },
    ScoreOutOfRange { field: String, value: String },
    FractionalScore { field: String, value: String },
    UnknownDecision(String),
    UnknownSentenceId(String),
    GapKeysMismatch {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::NoJson => write!(f, "no JSON object found"),
            ParseErrorKind::InvalidJson(e) => write!(f, "invalid JSON: {e}"),
            ParseErrorKind::MissingField(name) => write!(f, "missing required field `{name}`"),
            ParseErrorKind::WrongType { field, expected } => {
                write!(f, "field `{field}` must be {expected}")
            }
            ParseErrorKind::ScoreOutOfRange { field, value } => {
                write!(f, "`{field}` = {value} is outside 0..=10")
            }
            ParseErrorKind::FractionalScore { field, value } => {
                write!(f, "`{field}` = {value} is not an integer")
            }
            ParseErrorKind::UnknownDecision(d) => {
                write!(f, "decision `{d}` is neither SUPPORT nor REFUTE")
            }
            ParseErrorKind::UnknownSentenceId(sid) => {
                write!(f, "selected sentence id `{sid}` is not in the policy")
            }
            ParseErrorKind::GapKeysMismatch {
                missing,
                unexpected,
            } => write!(
                f,
                "gap_analysis keys differ from active gaps (missing: {missing:?}, unexpected: {unexpected:?})"
            ),
        }
    }
}

/// A reply that failed validation, with the raw text kept for logging.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{kind}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub raw: String,
}

/// Gap analysis, plan and revised output of one revision round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedRevision {
    pub gap_scores: IndexMap<String, u8>,
    pub gap_explanations: IndexMap<String, String>,
    pub consolidated_explanation: String,
    pub output: TaskResponse,
}

impl ParsedRevision {
    pub fn into_record(self, iteration: usize) -> RevisionRecord {
        RevisionRecord {
            iteration,
            gap_scores: self.gap_scores,
            gap_explanations: self.gap_explanations,
            consolidated_explanation: self.consolidated_explanation,
            output: self.output,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Parsed {
    Initial(TaskResponse),
    Revision(ParsedRevision),
}

/// Byte ranges of balanced `{...}` spans, outermost only, in order.
fn balanced_objects(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut start = 0;
    while let Some(offset) = text[start..].find('{') {
        let open = start + offset;
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        let mut close = None;
        for (ix, &b) in bytes.iter().enumerate().skip(open) {
            if in_string {
                if escaped {
                    escaped = false;
                } else if b == b'\\' {
                    escaped = true;
                } else if b == b'"' {
                    in_string = false;
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        close = Some(ix);
                        break;
                    }
                }
                _ => {}
            }
        }
        match close {
            Some(end) => {
                spans.push((open, end + 1));
                start = end + 1;
            }
            None => start = open + 1,
        }
    }
    spans
}

/// First balanced top-level JSON object in `raw`, ignoring code fences and
/// surrounding prose.
pub fn extract_json_object(raw: &str) -> Result<Map<String, Value>, ParseErrorKind> {
    let spans = balanced_objects(raw);
    if spans.is_empty() {
        return Err(ParseErrorKind::NoJson);
    }
    let mut first_error = None;
    for (start, end) in spans {
        match serde_json::from_str::<Value>(&raw[start..end]) {
            Ok(Value::Object(map)) => return Ok(map),
            Ok(_) => {}
            Err(e) => {
                first_error.get_or_insert_with(|| e.to_string());
            }
        }
    }
    Err(ParseErrorKind::InvalidJson(
        first_error.unwrap_or_else(|| "not an object".into()),
    ))
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str) -> Result<&'a Value, ParseErrorKind> {
    obj.get(name)
        .ok_or_else(|| ParseErrorKind::MissingField(name.to_string()))
}

fn string_field(obj: &Map<String, Value>, name: &str) -> Result<String, ParseErrorKind> {
    field(obj, name)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| ParseErrorKind::WrongType {
            field: name.to_string(),
            expected: "a string",
        })
}

fn bool_field(obj: &Map<String, Value>, name: &str) -> Result<bool, ParseErrorKind> {
    field(obj, name)?
        .as_bool()
        .ok_or_else(|| ParseErrorKind::WrongType {
            field: name.to_string(),
            expected: "a boolean",
        })
}

/// Integer in 0..=10. Integral floats such as `7.0` are accepted; anything
/// with a fractional part is rejected.
pub(crate) fn score_value(value: &Value, name: &str) -> Result<u8, ParseErrorKind> {
    let Value::Number(n) = value else {
        return Err(ParseErrorKind::WrongType {
            field: name.to_string(),
            expected: "an integer between 0 and 10",
        });
    };
    let as_int = if let Some(i) = n.as_i64() {
        i
    } else {
        let f = n.as_f64().unwrap_or(f64::NAN);
        if f.fract() != 0.0 || !f.is_finite() {
            return Err(ParseErrorKind::FractionalScore {
                field: name.to_string(),
                value: n.to_string(),
            });
        }
        f as i64
    };
    if !(0..=10).contains(&as_int) {
        return Err(ParseErrorKind::ScoreOutOfRange {
            field: name.to_string(),
            value: n.to_string(),
        });
    }
    Ok(as_int as u8)
}

fn task_output(
    obj: &Map<String, Value>,
    schema: &ResponseSchema,
    prefix: &str,
) -> Result<TaskResponse, ParseErrorKind> {
    let key = |name: &str| format!("{prefix}{name}");
    match schema.task {
        TaskKind::Scifact => {
            let raw_decision = string_field(obj, &key("decision"))?;
            let decision = Decision::parse(&raw_decision)
                .ok_or(ParseErrorKind::UnknownDecision(raw_decision))?;
            Ok(TaskResponse::Scifact {
                decision,
                rationale: string_field(obj, &key("rationale"))?,
            })
        }
        TaskKind::Privacyqa => {
            let answerable = bool_field(obj, &key("answerable"))?;
            let ids_key = key("selected_sentence_ids");
            let ids = field(obj, &ids_key)?
                .as_array()
                .ok_or_else(|| ParseErrorKind::WrongType {
                    field: ids_key.clone(),
                    expected: "a list of sentence ids",
                })?;
            let mut selected = Vec::with_capacity(ids.len());
            for id in ids {
                let id = id.as_str().ok_or_else(|| ParseErrorKind::WrongType {
                    field: ids_key.clone(),
                    expected: "a list of sentence ids",
                })?;
                if let Some(allowed) = &schema.allowed_sids {
                    if !allowed.iter().any(|a| a == id) {
                        return Err(ParseErrorKind::UnknownSentenceId(id.to_string()));
                    }
                }
                selected.push(id.to_string());
            }
            Ok(TaskResponse::Privacyqa {
                answerable,
                selected_sentence_ids: selected,
            })
        }
        TaskKind::Esnli => {
            let score_key = key("entailment_score");
            Ok(TaskResponse::Esnli {
                entailment_score: score_value(field(obj, &score_key)?, &score_key)?,
                reason: string_field(obj, &key("reason"))?,
            })
        }
    }
}

type GapAnalysis = (IndexMap<String, u8>, IndexMap<String, String>);

fn gap_analysis(obj: &Map<String, Value>, gap_names: &[String]) -> Result<GapAnalysis, ParseErrorKind> {
    let analysis = field(obj, "gap_analysis")?
        .as_object()
        .ok_or_else(|| ParseErrorKind::WrongType {
            field: "gap_analysis".into(),
            expected: "an object keyed by gap name",
        })?;
    let expected: BTreeSet<&str> = gap_names.iter().map(String::as_str).collect();
    let found: BTreeSet<&str> = analysis.keys().map(String::as_str).collect();
    if expected != found {
        return Err(ParseErrorKind::GapKeysMismatch {
            missing: expected.difference(&found).map(|s| s.to_string()).collect(),
            unexpected: found.difference(&expected).map(|s| s.to_string()).collect(),
        });
    }
    let mut scores = IndexMap::new();
    let mut explanations = IndexMap::new();
    for name in gap_names {
        let entry = analysis[name.as_str()]
            .as_object()
            .ok_or_else(|| ParseErrorKind::WrongType {
                field: format!("gap_analysis.{name}"),
                expected: "an object with score and explanation",
            })?;
        let score_key = format!("gap_analysis.{name}.score");
        let score = score_value(
            entry
                .get("score")
                .ok_or_else(|| ParseErrorKind::MissingField(score_key.clone()))?,
            &score_key,
        )?;
        let explanation = entry
            .get("explanation")
            .ok_or_else(|| ParseErrorKind::MissingField(format!("gap_analysis.{name}.explanation")))?
            .as_str()
            .ok_or_else(|| ParseErrorKind::WrongType {
                field: format!("gap_analysis.{name}.explanation"),
                expected: "a string",
            })?;
        scores.insert(name.clone(), score);
        explanations.insert(name.clone(), explanation.to_string());
    }
    Ok((scores, explanations))
}

fn parse_object(obj: &Map<String, Value>, schema: &ResponseSchema) -> Result<Parsed, ParseErrorKind> {
    match schema.phase {
        Phase::Initial => Ok(Parsed::Initial(task_output(obj, schema, "")?)),
        Phase::Revision { reflection: true } => {
            let (gap_scores, gap_explanations) = gap_analysis(obj, &schema.gap_names)?;
            let consolidated_explanation = string_field(obj, "consolidated_explanation")?;
            let output = task_output(obj, schema, "revised_")?;
            Ok(Parsed::Revision(ParsedRevision {
                gap_scores,
                gap_explanations,
                consolidated_explanation,
                output,
            }))
        }
        Phase::Revision { reflection: false } => Ok(Parsed::Revision(ParsedRevision {
            gap_scores: IndexMap::new(),
            gap_explanations: IndexMap::new(),
            consolidated_explanation: String::new(),
            output: task_output(obj, schema, "revised_")?,
        })),
    }
}

/// Extracts the first JSON object from `raw` and validates it.
pub fn parse_response(raw: &str, schema: &ResponseSchema) -> Result<Parsed, ParseError> {
    extract_json_object(raw)
        .and_then(|obj| parse_object(&obj, schema))
        .map_err(|kind| ParseError {
            kind,
            raw: raw.to_string(),
        })
}

/// Validates an already-extracted object.
pub fn parse_value(value: &Value, schema: &ResponseSchema) -> Result<Parsed, ParseError> {
    let raw = value.to_string();
    match value {
        Value::Object(obj) => parse_object(obj, schema),
        _ => Err(ParseErrorKind::NoJson),
    }
    .map_err(|kind| ParseError { kind, raw })
}
