//! Reasoning attribution: which model reasoning chunks entail or contradict
//! the human rationale chunks, and which pipeline stage aligns best.

mod scorer;
mod segment;

pub use scorer::{
    score_all, CassetteEntry, CassetteScorer, HttpScorer, MockScorer, NliScore, NliScorer,
    Relation, ScorePair, ScorerError, MAX_BATCH,
};
pub use segment::{
    rule_split, segment_chunks, segmentation_prompt, SegmentationMode, SEGMENTATION_PROMPT,
};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::RevisionRecord;
use crate::response::TaskResponse;

pub const DEFAULT_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AttributionError {
    #[error("cannot segment empty text")]
    EmptyText,
    #[error("no sources to compare")]
    NoSources,
    #[error(transparent)]
    Scorer(#[from] ScorerError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "gap", rename_all = "snake_case")]
pub enum Origin {
    Human,
    ModelReason,
    GapExplanation(String),
}

impl Origin {
    /// Breakdown key: `model_reason`, the gap name, or `human`.
    pub fn key(&self) -> String {
        match self {
            Origin::Human => "human".into(),
            Origin::ModelReason => "model_reason".into(),
            Origin::GapExplanation(g) => g.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub text: String,
    pub origin: Origin,
    pub instance_id: String,
}

impl Chunk {
    pub fn new(text: impl Into<String>, origin: Origin, instance_id: &str) -> Self {
        Chunk {
            text: text.into(),
            origin,
            instance_id: instance_id.to_string(),
        }
    }
}

/// Outcome for one human chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkAttribution {
    pub human: String,
    pub attributed: bool,
    /// Origin of the winning candidate when attributed.
    pub best_source: Option<Origin>,
    pub best_candidate: Option<String>,
    /// Highest `max(entailment, contradiction)` over candidates; 0 without
    /// candidates.
    pub best_score: f64,
    pub relation: Option<Relation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub instance_id: String,
    pub threshold: f64,
    pub chunks: Vec<ChunkAttribution>,
    /// Attributed human chunks over all human chunks.
    pub sample_rate: f64,
    /// Mean best score over human chunks.
    pub mean_strength: f64,
}

/// Scores every (candidate, human) pair with the candidate as premise. A
/// human chunk is attributed when its best score is strictly above
/// `threshold`; ties between candidates go to the earlier one.
pub fn attribute(
    human: &[Chunk],
    candidates: &[Chunk],
    scorer: &dyn NliScorer,
    threshold: f64,
) -> Result<AttributionResult, AttributionError> {
    let pairs: Vec<ScorePair> = human
        .iter()
        .flat_map(|h| candidates.iter().map(|c| ScorePair::new(&c.text, &h.text)))
        .collect();
    let scores = score_all(scorer, &pairs)?;
    let mut chunks = Vec::with_capacity(human.len());
    for (hi, h) in human.iter().enumerate() {
        let row = &scores[hi * candidates.len()..(hi + 1) * candidates.len()];
        let mut best: Option<(usize, f64)> = None;
        for (ci, s) in row.iter().enumerate() {
            if best.is_none_or(|(_, b)| s.strength() > b) {
                best = Some((ci, s.strength()));
            }
        }
        let best_score = best.map(|(_, s)| s).unwrap_or(0.0);
        let attributed = best_score > threshold;
        let winner = best.filter(|_| attributed).map(|(ci, _)| ci);
        chunks.push(ChunkAttribution {
            human: h.text.clone(),
            attributed,
            best_source: winner.map(|ci| candidates[ci].origin.clone()),
            best_candidate: winner.map(|ci| candidates[ci].text.clone()),
            best_score,
            relation: winner.map(|ci| row[ci].relation()),
        });
    }
    let n = chunks.len();
    let attributed = chunks.iter().filter(|c| c.attributed).count();
    let (sample_rate, mean_strength) = if n == 0 {
        (0.0, 0.0)
    } else {
        (
            attributed as f64 / n as f64,
            chunks.iter().map(|c| c.best_score).sum::<f64>() / n as f64,
        )
    };
    Ok(AttributionResult {
        instance_id: human
            .first()
            .map(|c| c.instance_id.clone())
            .unwrap_or_default(),
        threshold,
        chunks,
        sample_rate,
        mean_strength,
    })
}

/// Pipeline stages compared by best alignment, in pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineSource {
    BaselineNoGaps,
    GierInitial,
    GierFinal,
}

impl PipelineSource {
    pub const ALL: [PipelineSource; 3] = [
        PipelineSource::BaselineNoGaps,
        PipelineSource::GierInitial,
        PipelineSource::GierFinal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineSource::BaselineNoGaps => "baseline_no_gaps",
            PipelineSource::GierInitial => "gier_initial",
            PipelineSource::GierFinal => "gier_final",
        }
    }
}

/// Source with the highest mean strength; ties go to the earlier stage.
pub fn best_alignment(
    per_source: &[(PipelineSource, f64)],
) -> Result<PipelineSource, AttributionError> {
    let mut sorted = per_source.to_vec();
    sorted.sort_by_key(|(s, _)| *s);
    let mut best: Option<(PipelineSource, f64)> = None;
    for (source, score) in sorted {
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((source, score));
        }
    }
    best.map(|(s, _)| s).ok_or(AttributionError::NoSources)
}

/// Share of human chunks won by the model reason, by each gap explanation,
/// and left unattributed (`none`). Shares sum to 1 when there is at least
/// one chunk.
pub fn gap_attribution_breakdown(
    results: &[AttributionResult],
    gap_names: &[String],
) -> IndexMap<String, f64> {
    let mut counts: IndexMap<String, usize> = IndexMap::new();
    counts.insert("model_reason".into(), 0);
    for g in gap_names {
        counts.insert(g.clone(), 0);
    }
    counts.insert("none".into(), 0);
    let mut total = 0usize;
    for chunk in results.iter().flat_map(|r| &r.chunks) {
        total += 1;
        let key = match (&chunk.best_source, chunk.attributed) {
            (Some(origin), true) => origin.key(),
            _ => "none".into(),
        };
        *counts.entry(key).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .map(|(k, c)| (k, if total == 0 { 0.0 } else { c as f64 / total as f64 }))
        .collect()
}

/// Model reasoning text of an output, if the task has any.
fn reason_text(output: &TaskResponse) -> Option<&str> {
    output.explanation()
}

/// Candidate texts with their origins for a stage: the output's reason plus
/// the gap explanations of `records`.
pub fn candidate_texts(output: &TaskResponse, records: &[&RevisionRecord]) -> Vec<(String, Origin)> {
    let mut out = Vec::new();
    if let Some(reason) = reason_text(output) {
        out.push((reason.to_string(), Origin::ModelReason));
    }
    for record in records {
        for (gap, text) in &record.gap_explanations {
            if !text.trim().is_empty() {
                out.push((text.clone(), Origin::GapExplanation(gap.clone())));
            }
        }
    }
    out
}
