use serde::{Deserialize, Serialize};

use super::{AttributionError, Chunk, Origin};
use crate::backend::Backend;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentationMode {
    Llm,
    #[default]
    Rule,
}

/// Prompt used in `llm` mode; `{text}` is replaced by the rationale.
pub const SEGMENTATION_PROMPT: &str = "## Task

Split a rationale into reasoning chunks.

## Instructions

A reasoning chunk is a minimal, self-contained reasoning step. Split the rationale below into its reasoning chunks. Keep the original wording of each chunk. Do not add, merge, explain or reorder content. Output one chunk per line and nothing else.

## Rationale

{text}";

pub fn segmentation_prompt(text: &str) -> String {
    SEGMENTATION_PROMPT.replace("{text}", text)
}

/// Sentence boundaries, semicolons and ", and " clause joins.
pub fn rule_split(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        let boundary = matches!(c, '.' | '!' | '?')
            && chars.peek().is_none_or(|n| n.is_whitespace());
        if boundary || c == ';' {
            sentences.push(std::mem::take(&mut current));
        }
    }
    sentences.push(current);
    sentences
        .iter()
        .flat_map(|s| s.split(", and "))
        .map(|s| s.trim().trim_end_matches(';').trim().to_string())
        .filter(|s| s.chars().any(char::is_alphanumeric))
        .collect()
}

fn parse_lines(reply: &str) -> Vec<String> {
    reply
        .lines()
        .map(|line| {
            let t = line.trim();
            let t = t.trim_start_matches(['-', '*', '•']).trim_start();
            let digits = t.chars().take_while(char::is_ascii_digit).count();
            let rest = &t[digits..];
            if digits > 0 && (rest.starts_with(". ") || rest.starts_with(") ")) {
                rest[2..].trim().to_string()
            } else {
                t.to_string()
            }
        })
        .filter(|s| s.chars().any(char::is_alphanumeric))
        .collect()
}

/// Splits `text` into reasoning chunks. In `llm` mode a backend failure or
/// an empty reply falls back to the rule splitter.
pub fn segment_chunks(
    text: &str,
    origin: Origin,
    instance_id: &str,
    mode: SegmentationMode,
    backend: Option<&dyn Backend>,
) -> Result<Vec<Chunk>, AttributionError> {
    if text.trim().is_empty() {
        return Err(AttributionError::EmptyText);
    }
    let pieces = match (mode, backend) {
        (SegmentationMode::Llm, Some(b)) => match b.complete(&segmentation_prompt(text)) {
            Ok(reply) => {
                let lines = parse_lines(&reply);
                if lines.is_empty() {
                    log::warn!("empty segmentation reply for {instance_id}; using rule mode");
                    rule_split(text)
                } else {
                    lines
                }
            }
            Err(e) => {
                log::warn!("segmentation failed for {instance_id} ({e}); using rule mode");
                rule_split(text)
            }
        },
        (SegmentationMode::Llm, None) => {
            log::warn!("no backend for llm segmentation; using rule mode");
            rule_split(text)
        }
        (SegmentationMode::Rule, _) => rule_split(text),
    };
    let pieces = if pieces.is_empty() {
        vec![text.trim().to_string()]
    } else {
        pieces
    };
    Ok(pieces
        .into_iter()
        .map(|text| Chunk {
            text,
            origin: origin.clone(),
            instance_id: instance_id.to_string(),
        })
        .collect())
}
