//! Prompt rendering for the initial and revision phases of each task, and
//! the response schemas the replies are validated against.
//!
//! Rendering is deterministic: the same inputs always produce the same bytes.
//! Prior responses are embedded as a JSON array pretty-printed with two-space
//! indentation, in iteration order, starting with the initial response.

mod parse;

pub use parse::{
    extract_json_object, parse_response, parse_value, ParseError, ParseErrorKind, Parsed,
    ParsedRevision,
};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::TaskInstance;
use crate::engine::{RevisionRecord, RunHistory};
use crate::gaps::GapSet;
use crate::response::TaskResponse;
use crate::task::TaskKind;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("gap set is for `{gaps}` but the instance is a `{instance}` instance")]
    TaskMismatch { gaps: TaskKind, instance: TaskKind },
    #[error("revision requires at least one prior response")]
    EmptyHistory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "lowercase")]
pub enum Phase {
    Initial,
    Revision { reflection: bool },
}

/// What a reply must contain to be accepted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseSchema {
    pub task: TaskKind,
    pub phase: Phase,
    /// Exact key set required in `gap_analysis` (revision with reflection).
    pub gap_names: Vec<String>,
    /// Valid sentence ids for selection tasks.
    pub allowed_sids: Option<Vec<String>>,
}

impl ResponseSchema {
    pub fn new(instance: &TaskInstance, gaps: &GapSet, phase: Phase) -> Self {
        let allowed_sids = match instance {
            TaskInstance::Privacyqa(p) => {
                Some(p.policy_sentences.iter().map(|s| s.sid.clone()).collect())
            }
            _ => None,
        };
        ResponseSchema {
            task: instance.task(),
            phase,
            gap_names: gaps.names(),
            allowed_sids,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub text: String,
    pub expected_schema: ResponseSchema,
    pub token_estimate: usize,
}

/// Rough token count: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Marker that prefixes every enumerated gap entry, e.g. `(1) Coverage: ...`.
pub fn gap_list(gaps: &GapSet) -> String {
    gaps.gaps
        .iter()
        .enumerate()
        .map(|(ix, g)| format!("({}) {}: {}", ix + 1, g.name, g.description))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Number of enumerated gap entries in a rendered prompt.
pub fn count_gap_entries(prompt: &str, gaps: &GapSet) -> usize {
    prompt
        .lines()
        .filter(|line| {
            gaps.gaps.iter().enumerate().any(|(ix, g)| {
                line.starts_with(&format!("({}) {}: ", ix + 1, g.name))
            })
        })
        .count()
}

const JSON_WARNING: &str = "Important: Any deviation from this format (e.g., missing or extra commas, unquoted text, etc.) will make the output invalid. Only provide the valid JSON response, with no additional explanations or comments.";

const QUOTING_RULES: &str = "## Text Quoting Format

- When quoting sentences, segments, or phrases from the provided text in your rationale, always place the quoted text within single quotes (e.g., 'quoted text').
- If you abbreviate or omit parts of the quoted text, use three ellipsis dots (...) to indicate the omission.
- ! Do not combine text from multiple sentences into a single quote, even with ellipses. Each quote must be sourced from a single sentence only.";

const EQUAL_IMPORTANCE: &str = "Important: Each gap is equally important and should be addressed with the same level of attention. Do not prioritize one gap over another. Carefully consider each gap when performing your analysis and revision.";

const POLICY_PREAMBLE: &str = "Below is a JSON object containing a list of items. Each item is a sentence from a privacy policy and contains an id (the identifier) and the text of the sentence.";

fn json_block(body: &str) -> String {
    format!("```json\n{body}\n```")
}

fn output_format(verb: &str, template: &str) -> String {
    format!(
        "## Output Format\n\n{JSON_WARNING}\n\n{verb} in JSON format using the following template.\n\n{}",
        json_block(template)
    )
}

fn policy_json(instance: &crate::corpus::PrivacyQAInstance) -> String {
    let items: Vec<Value> = instance
        .policy_sentences
        .iter()
        .map(|s| json!({"id": s.sid, "text": s.text}))
        .collect();
    serde_json::to_string_pretty(&json!({ "sentences": items })).expect("policy serializes")
}

fn abstract_text(instance: &crate::corpus::ScifactInstance) -> String {
    instance.abstract_sentences.join(" ")
}

fn check_task(instance: &TaskInstance, gaps: &GapSet) -> Result<(), PromptError> {
    if instance.task() != gaps.task {
        return Err(PromptError::TaskMismatch {
            gaps: gaps.task,
            instance: instance.task(),
        });
    }
    Ok(())
}

fn bundle(text: String, schema: ResponseSchema) -> PromptBundle {
    PromptBundle {
        token_estimate: estimate_tokens(&text),
        text,
        expected_schema: schema,
    }
}

/// Renders the initial prompt. With `include_gaps = false` the gap block and
/// every reference to it are omitted.
pub fn render_initial(
    instance: &TaskInstance,
    gaps: &GapSet,
    include_gaps: bool,
) -> Result<PromptBundle, PromptError> {
    check_task(instance, gaps)?;
    let gap_block = gap_list(gaps);
    let mut sections: Vec<String> = Vec::new();
    match instance {
        TaskInstance::Scifact(sf) => {
            sections.push("## Task\n\nSupport or refute a claim.".into());
            sections.push(format!(
                "## Input\n\nText:\n\n{}\n\nClaim:\n\n{}",
                abstract_text(sf),
                sf.claim
            ));
            let instruction = if include_gaps {
                format!("## Instruction\n\nSUPPORT or REFUTE the claim based on the provided text. Then, write a rationale to justify the decision, while carefully avoid the following potential gaps.\n\n{gap_block}")
            } else {
                "## Instruction\n\nSUPPORT or REFUTE the claim based on the provided text. Then, write a rationale to justify the decision.".to_string()
            };
            sections.push(instruction);
            sections.push(QUOTING_RULES.into());
            sections.push(output_format(
                "Output your response",
                "{\n  \"decision\": \"...\",\n  \"rationale\": \"...\"\n}",
            ));
        }
        TaskInstance::Privacyqa(pq) => {
            sections.push("## Task\n\nExtractive sentence selection.".into());
            sections.push(format!(
                "## Input\n\nPrivacy Policy Text:\n\n{POLICY_PREAMBLE}\n\n{}\n\nUser Question:\n\n{}",
                policy_json(pq),
                pq.question
            ));
            let mut instruction = String::from(
                "## Instruction\n\n\
1. Answerability: Determine if the question is answerable based on the content given in the privacy policy text.\n   \
- If the question is answerable, return \"answerable\": true.\n   \
- If the question is not answerable, return \"answerable\": false.\n\
2. Sentence Selection:\n   \
- If the question is answerable, identify the subset of sentences that contains the contextually relevant information required to answer the question.\n      \
- Return only the id values of those sentences in a JSON list.\n   \
- If the question is unanswerable, return an empty list [].",
            );
            if include_gaps {
                instruction.push_str(&format!(
                    "\n3. Gap Avoidance: While performing the steps above, carefully avoid the following potential gaps:\n\n{gap_block}"
                ));
            }
            sections.push(instruction);
            sections.push(output_format(
                "Output your response",
                "{\n  \"answerable\": true or false,\n  \"selected_sentence_ids\": [\"id_0001\", \"id_0002\", ...]\n}",
            ));
        }
        TaskInstance::Esnli(es) => {
            sections.push("## Task\n\nNatural language inference.".into());
            sections.push(format!(
                "## Input\n\nContext:\n\n{}\n\nStatement:\n\n{}",
                es.context, es.statement
            ));
            let mut instruction = String::from(
                "## Instructions\n\n\
1. Entailment Score: Assign an entailment score between 0 and 10 to indicate how likely is that the statement is an entailment from the context. A score of 0 implies not at all likely (a contradiction) and a score of 10 implies certainty.\n\
2. Reason: Output the reason for the score in one or two sentences.",
            );
            if include_gaps {
                instruction.push_str(&format!(
                    "\n3. Gap Avoidance: While performing the steps above, carefully avoid the following potential gaps:\n\n{gap_block}"
                ));
            }
            sections.push(instruction);
            sections.push(output_format(
                "Output your response",
                "{\n  \"entailment_score\": X,\n  \"reason\": \"...\"\n}",
            ));
        }
    }
    Ok(bundle(
        sections.join("\n\n"),
        ResponseSchema::new(instance, gaps, Phase::Initial),
    ))
}

/// JSON form of a revision record in the model-facing schema.
pub fn revision_json(record: &RevisionRecord) -> Value {
    let mut map = serde_json::Map::new();
    if !record.gap_scores.is_empty() {
        let mut analysis = serde_json::Map::new();
        for (name, score) in &record.gap_scores {
            let explanation = record
                .gap_explanations
                .get(name)
                .cloned()
                .unwrap_or_default();
            analysis.insert(
                name.clone(),
                json!({"score": score, "explanation": explanation}),
            );
        }
        map.insert("gap_analysis".into(), Value::Object(analysis));
        map.insert(
            "consolidated_explanation".into(),
            json!(record.consolidated_explanation),
        );
    }
    map.extend(record.output.model_fields("revised_"));
    Value::Object(map)
}

/// The prior-response history embedded in revision prompts.
pub fn history_json(baseline: &TaskResponse, revisions: &[RevisionRecord]) -> String {
    let mut items = vec![Value::Object(baseline.model_fields(""))];
    items.extend(revisions.iter().map(revision_json));
    serde_json::to_string_pretty(&Value::Array(items)).expect("history serializes")
}

fn gap_analysis_template(gaps: &GapSet) -> String {
    let entries: Vec<String> = gaps
        .gaps
        .iter()
        .map(|g| {
            format!(
                "    {}: {{\"score\": X, \"explanation\": \"...\" }}",
                serde_json::to_string(&g.name).expect("string serializes")
            )
        })
        .collect();
    format!("  \"gap_analysis\": {{\n{}\n  }},", entries.join(",\n"))
}

fn revision_template(gaps: &GapSet, reflection: bool, revised_fields: &str) -> String {
    let mut out = String::from("{\n");
    if reflection {
        out.push_str(&gap_analysis_template(gaps));
        out.push_str("\n  \"consolidated_explanation\": \"...\",\n");
    }
    out.push_str(revised_fields);
    out.push_str("\n}");
    out
}

/// Wording that differs between the three revision prompts.
struct RevisionWording {
    noun: &'static str,
    rubric: [&'static str; 5],
    history_items: &'static str,
    compare_items: &'static str,
    recent: &'static str,
    previous: &'static str,
    revise_title: &'static str,
    revise_body: &'static str,
    revised_fields: &'static str,
}

fn wording(task: TaskKind) -> RevisionWording {
    match task {
        TaskKind::Scifact => RevisionWording {
            noun: "Rationale",
            rubric: [
                "0: Your rationale entirely fails to address the gap. No attempt is made to meet the criterion.",
                "1-3: Your rationale shows minimal effort to close the gap. The issue is prominent, with several major problems remaining.",
                "4-6: Your rationale attempts to address the gap, but inconsistently or insufficiently. Significant room for improvement remains.",
                "7-9: Your rationale mostly addresses the gap, with only minor or occasional lapses that could be refined.",
                "10: Your rationale has absolutely no room for improvement with respect to the gap.",
            ],
            history_items: "rationales, explanations, and scores",
            compare_items: "rationales, scores, and explanations",
            recent: "most recent rationale improves, regresses, or stagnates",
            previous: "If a previous rationale handled something better",
            revise_title: "Revise Decision and Rationale",
            revise_body: "revise your decision and rewrite your rationale to justify the decision, while improving it with respect to the gaps, if necessary.",
            revised_fields: "  \"revised_decision\": \"...\",\n  \"revised_rationale\": \"...\"",
        },
        TaskKind::Privacyqa => RevisionWording {
            noun: "Selections",
            rubric: [
                "0: Your selections entirely fail to address the gap. No attempt is made to meet the criterion.",
                "1-3: Your selections show minimal effort to close the gap. The issue is prominent, with several major problems remaining.",
                "4-6: Your selections attempt to address the gap, but inconsistently or insufficiently. Significant room for improvement remains.",
                "7-9: Your selections mostly address the gap, with only minor or occasional lapses that could be refined.",
                "10: Your selections have absolutely no room for improvement with respect to the gap.",
            ],
            history_items: "answerability decisions, selected sentence identifiers, and scores",
            compare_items: "decisions, selections, and explanations",
            recent: "most recent decision and selections improve, regress, or stagnate",
            previous: "If a previous decision and selections handled something better",
            revise_title: "Revise Decision and Selection",
            revise_body: "revise your answerability decision (true or false) and the list of selected sentence ids, improving the output with respect to the gaps, if necessary.",
            revised_fields: "  \"revised_answerable\": true or false,\n  \"revised_selected_sentence_ids\": [\"id_0001\", \"id_0002\", ...]",
        },
        TaskKind::Esnli => RevisionWording {
            noun: "Output",
            rubric: [
                "0: Your output entirely fails to address the gap. No attempt is made to meet the criterion.",
                "1-3: Your output shows minimal effort to close the gap. The issue is prominent, with several major problems remaining.",
                "4-6: Your output attempts to address the gap, but inconsistently or insufficiently. Significant room for improvement remains.",
                "7-9: Your output mostly addresses the gap, with only minor or occasional lapses that could be refined.",
                "10: Your output has absolutely no room for improvement with respect to the gap.",
            ],
            history_items: "entailment scores, reasons, and gap scores",
            compare_items: "entailment scores, reasons, and explanations",
            recent: "most recent output improves, regresses, or stagnates",
            previous: "If a previous output handled something better",
            revise_title: "Revise Entailment Score and Reason",
            revise_body: "revise your entailment score and the reason, improving the output with respect to the gaps, if necessary. The reason should be brief, within one or two sentences.",
            revised_fields: "  \"revised_entailment_score\": X,\n  \"revised_reason\": \"...\"",
        },
    }
}

fn reflective_steps(w: &RevisionWording, gap_count: usize) -> String {
    let rubric = w
        .rubric
        .iter()
        .map(|line| format!("      - {line}"))
        .collect::<Vec<_>>()
        .join("\n");
    let evaluating = w.noun.to_lowercase();
    format!(
        "Follow these steps:\n\n\
1. Gap Analysis Of Most Recent {noun}: For each of the {gap_count} gaps listed above:\n   \
- Assign a score between 0 and 10 using the following scale:\n{rubric}\n   \
- Write a short explanation evaluating your {evaluating} based on the gap. If applicable, identify specific improvements that could be made.\n\
2. Compare Current Analysis With Previous: Review the {compare} in your current and previous analyses. For each gap:\n   \
- Identify areas where your {recent} compared to earlier attempts.\n   \
- {previous}, try to retain or reintroduce that improvement.\n   \
- Avoid repeating flaws that were previously identified and addressed.\n\
3. Consolidate Across Iterations: Write a consolidated explanation of how you intend to integrate insights from previous iterations and your current analysis.\n\
4. {title}: Based on the insights from Steps 1, 2, and 3, {body}",
        noun = w.noun,
        compare = w.compare_items,
        recent = w.recent,
        previous = w.previous,
        title = w.revise_title,
        body = w.revise_body,
    )
}

fn revise_only_step(w: &RevisionWording) -> String {
    format!(
        "Follow these steps:\n\n1. {}: Based on the gap definitions above and your previous responses, {}",
        w.revise_title, w.revise_body
    )
}

/// Renders the revision prompt for the next round of `history`.
///
/// With `reflection = false` the prompt keeps the gap definitions but drops
/// the scoring, comparison and consolidation steps; the model only revises.
pub fn render_revision(
    instance: &TaskInstance,
    gaps: &GapSet,
    history: &RunHistory,
    reflection: bool,
) -> Result<PromptBundle, PromptError> {
    render_revision_parts(instance, gaps, &history.baseline, &history.revisions, reflection)
}

/// Same as [`render_revision`] from the baseline and prior revisions directly.
/// `baseline` is `None` when no response exists yet.
pub fn render_revision_from(
    instance: &TaskInstance,
    gaps: &GapSet,
    baseline: Option<&TaskResponse>,
    revisions: &[RevisionRecord],
    reflection: bool,
) -> Result<PromptBundle, PromptError> {
    let baseline = baseline.ok_or(PromptError::EmptyHistory)?;
    render_revision_parts(instance, gaps, baseline, revisions, reflection)
}

fn render_revision_parts(
    instance: &TaskInstance,
    gaps: &GapSet,
    baseline: &TaskResponse,
    revisions: &[RevisionRecord],
    reflection: bool,
) -> Result<PromptBundle, PromptError> {
    check_task(instance, gaps)?;
    let task = instance.task();
    let w = wording(task);
    let latest = revisions.last().map(|r| &r.output).unwrap_or(baseline);
    let history = history_json(baseline, revisions);
    let gap_count = gaps.len();

    let (history_title, history_intro) = if reflection {
        (
            "Your Previous Gap Analyses:",
            format!(
                "Here are the {} of your previous revisions in JSON format. Review and consider this history during revision.",
                w.history_items
            ),
        )
    } else {
        (
            "Your Previous Responses:",
            "Here are your previous responses in JSON format. Review and consider this history during revision.".to_string(),
        )
    };
    let history_block = format!("{history_title}\n\n{history_intro}\n\n{history}");

    let mut sections: Vec<String> = Vec::new();
    match (instance, latest) {
        (
            TaskInstance::Scifact(sf),
            TaskResponse::Scifact {
                decision,
                rationale,
            },
        ) => {
            sections.push("## Context\n\nYou earlier wrote a rationale for why a claim is supported or refuted by a given piece of text.".into());
            sections.push(if reflection {
                "## Task\n\nPerform gap analysis and revise decision and/or rationale.".into()
            } else {
                "## Task\n\nRevise decision and/or rationale.".into()
            });
            sections.push(format!(
                "## Input\n\nText:\n\n{}\n\nClaim:\n\n{}\n\n{history_block}\n\nYour Most Recent Decision:\n\n{}\n\nYour Most Recent Rationale:\n\n{}",
                abstract_text(sf),
                sf.claim,
                decision.as_upper(),
                rationale
            ));
        }
        (
            TaskInstance::Privacyqa(pq),
            TaskResponse::Privacyqa {
                answerable,
                selected_sentence_ids,
            },
        ) => {
            sections.push("## Context\n\nYou previously determined if a question is answerable based on a privacy policy, and selected a group of relevant sentences when the question was answerable.".into());
            sections.push(if reflection {
                "## Task\n\nPerform gap analysis and revise decision and/or selection.".into()
            } else {
                "## Task\n\nRevise decision and/or selection.".into()
            });
            sections.push(format!(
                "## Input\n\nPrivacy Policy Text:\n\n{POLICY_PREAMBLE}\n\n{}\n\nUser Question:\n\n{}\n\n{history_block}\n\nYour Most Recent Answerability Decision:\n\n{}\n\nYour Most Recent Sentence Selections:\n\n{}",
                policy_json(pq),
                pq.question,
                answerable,
                serde_json::to_string(selected_sentence_ids).expect("ids serialize")
            ));
        }
        (
            TaskInstance::Esnli(es),
            TaskResponse::Esnli {
                entailment_score,
                reason,
            },
        ) => {
            sections.push("## Context\n\nYou previously provided an entailment score for a statement with respect to a provided context, and provided a reason for the score.\n\nAn entailment score is a number between 0 and 10 to indicate how likely is that a statement is an entailment from a context. A score of 0 implies not at all likely (a contradiction) and a score of 10 implies certainty.".into());
            sections.push(if reflection {
                "## Task\n\nPerform gap analysis and revise entailment score and/or reason.".into()
            } else {
                "## Task\n\nRevise entailment score and/or reason.".into()
            });
            sections.push(format!(
                "## Input\n\nContext:\n\n{}\n\nStatement:\n\n{}\n\n{history_block}\n\nYour Most Recent Entailment Score:\n\n{}\n\nYour Most Recent Reason:\n\n{}",
                es.context, es.statement, entailment_score, reason
            ));
        }
        _ => {
            return Err(PromptError::TaskMismatch {
                gaps: latest.task(),
                instance: task,
            })
        }
    }

    let subject = match task {
        TaskKind::Scifact => "rationale",
        _ => "analysis",
    };
    sections.push(format!(
        "## Gaps\n\nCarefully consider the following {gap_count} gap definitions. These gaps may or may not be present in your {subject}. You will be asked to use them in a subsequent instruction.\n\n{}",
        gap_list(gaps)
    ));
    let steps = if reflection {
        reflective_steps(&w, gap_count)
    } else {
        revise_only_step(&w)
    };
    sections.push(format!("## Instructions\n\n{EQUAL_IMPORTANCE}\n\n{steps}"));
    if task == TaskKind::Scifact {
        sections.push(QUOTING_RULES.into());
    }
    sections.push(output_format(
        "Return your output",
        &revision_template(gaps, reflection, w.revised_fields),
    ));

    Ok(bundle(
        sections.join("\n\n"),
        ResponseSchema::new(instance, gaps, Phase::Revision { reflection }),
    ))
}

/// Pulls the embedded prior-response array back out of a revision prompt.
pub fn extract_history(prompt: &str) -> Option<Vec<Value>> {
    let marker = "Review and consider this history during revision.\n\n";
    let start = prompt.find(marker)? + marker.len();
    let rest = &prompt[start..];
    let mut stream = serde_json::Deserializer::from_str(rest).into_iter::<Value>();
    match stream.next()? {
        Ok(Value::Array(items)) => Some(items),
        _ => None,
    }
}

#[cfg(test)]
mod tests;
