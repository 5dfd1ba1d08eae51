use std::collections::{BTreeSet, HashMap};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::metrics::tokenize;

/// Pairs per scorer request.
pub const MAX_BATCH: usize = 64;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ScorerError {
    #[error("scorer unreachable: {0}")]
    Unreachable(String),
    #[error("scorer returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed scorer response: {0}")]
    Malformed(String),
    #[error("scorer returned {got} scores for {expected} pairs")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid score triple {0:?}")]
    InvalidScore(NliScore),
    #[error("no recorded score for pair")]
    CassetteMiss,
}

/// Probabilities over the three NLI labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliScore {
    pub entailment: f64,
    pub neutral: f64,
    pub contradiction: f64,
}

impl NliScore {
    pub const NEUTRAL: NliScore = NliScore {
        entailment: 0.0,
        neutral: 1.0,
        contradiction: 0.0,
    };

    pub fn new(entailment: f64, neutral: f64, contradiction: f64) -> Self {
        NliScore {
            entailment,
            neutral,
            contradiction,
        }
    }

    /// Each probability in [0, 1], summing to 1 within 1e-6.
    pub fn is_valid(&self) -> bool {
        let parts = [self.entailment, self.neutral, self.contradiction];
        parts.iter().all(|p| (0.0..=1.0).contains(p))
            && (parts.iter().sum::<f64>() - 1.0).abs() <= 1e-6
    }

    /// `max(entailment, contradiction)`.
    pub fn strength(&self) -> f64 {
        self.entailment.max(self.contradiction)
    }

    pub fn relation(&self) -> Relation {
        if self.contradiction > self.entailment {
            Relation::Contradiction
        } else {
            Relation::Entailment
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Entailment,
    Contradiction,
}

/// Premise/hypothesis pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScorePair {
    pub premise: String,
    pub hypothesis: String,
}

impl ScorePair {
    pub fn new(premise: impl Into<String>, hypothesis: impl Into<String>) -> Self {
        ScorePair {
            premise: premise.into(),
            hypothesis: hypothesis.into(),
        }
    }
}

pub trait NliScorer: Send + Sync {
    /// One score per pair, in order. Called with at most [`MAX_BATCH`] pairs.
    fn score_batch(&self, pairs: &[ScorePair]) -> Result<Vec<NliScore>, ScorerError>;
}

impl<T: NliScorer + ?Sized> NliScorer for &T {
    fn score_batch(&self, pairs: &[ScorePair]) -> Result<Vec<NliScore>, ScorerError> {
        (**self).score_batch(pairs)
    }
}

impl<T: NliScorer + ?Sized> NliScorer for Box<T> {
    fn score_batch(&self, pairs: &[ScorePair]) -> Result<Vec<NliScore>, ScorerError> {
        (**self).score_batch(pairs)
    }
}

/// Scores any number of pairs in batches of at most `MAX_BATCH`.
pub fn score_all(scorer: &dyn NliScorer, pairs: &[ScorePair]) -> Result<Vec<NliScore>, ScorerError> {
    let mut out = Vec::with_capacity(pairs.len());
    for batch in pairs.chunks(MAX_BATCH) {
        let scores = scorer.score_batch(batch)?;
        if scores.len() != batch.len() {
            return Err(ScorerError::LengthMismatch {
                expected: batch.len(),
                got: scores.len(),
            });
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_valid()) {
            return Err(ScorerError::InvalidScore(*bad));
        }
        out.extend(scores);
    }
    Ok(out)
}

const NEGATIONS: [&str; 8] = ["not", "no", "never", "nobody", "nothing", "none", "cannot", "t"];

const ANTONYMS: [(&str, &str); 16] = [
    ("young", "old"),
    ("boy", "girl"),
    ("man", "woman"),
    ("men", "women"),
    ("sitting", "standing"),
    ("inside", "outside"),
    ("indoors", "outdoors"),
    ("day", "night"),
    ("asleep", "awake"),
    ("sleeping", "running"),
    ("empty", "full"),
    ("open", "closed"),
    ("up", "down"),
    ("wet", "dry"),
    ("alone", "together"),
    ("always", "never"),
];

/// Deterministic stand-in for an NLI model.
///
/// Checked in order: identical normalized text gives entailment 1.0; a
/// negation or antonym pair over otherwise overlapping text gives
/// contradiction 0.9; token Jaccard of at least 0.5 gives entailment 0.85;
/// anything else is neutral.
#[derive(Debug, Clone, Default)]
pub struct MockScorer;

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

impl MockScorer {
    pub fn score(&self, premise: &str, hypothesis: &str) -> NliScore {
        let p = tokenize(premise);
        let h = tokenize(hypothesis);
        if !p.is_empty() && p == h {
            return NliScore::new(1.0, 0.0, 0.0);
        }
        let ps: BTreeSet<String> = p.into_iter().collect();
        let hs: BTreeSet<String> = h.into_iter().collect();
        if contradicts(&ps, &hs) {
            return NliScore::new(0.0, 0.1, 0.9);
        }
        if jaccard(&ps, &hs) >= 0.5 {
            return NliScore::new(0.85, 0.15, 0.0);
        }
        NliScore::NEUTRAL
    }
}

fn contradicts(p: &BTreeSet<String>, h: &BTreeSet<String>) -> bool {
    let is_neg = |t: &String| NEGATIONS.contains(&t.as_str());
    let strip = |s: &BTreeSet<String>| -> BTreeSet<String> {
        s.iter().filter(|t| !is_neg(t)).cloned().collect()
    };
    let (pc, hc) = (strip(p), strip(h));
    let p_neg = p.iter().any(is_neg);
    let h_neg = h.iter().any(is_neg);
    if p_neg != h_neg && !pc.is_empty() && jaccard(&pc, &hc) >= 0.5 {
        return true;
    }
    ANTONYMS.iter().any(|(a, b)| {
        let swapped = |x: &BTreeSet<String>, y: &BTreeSet<String>| {
            x.contains(*a) && !x.contains(*b) && y.contains(*b) && !y.contains(*a)
        };
        if !(swapped(&pc, &hc) || swapped(&hc, &pc)) {
            return false;
        }
        let rest = |s: &BTreeSet<String>| -> BTreeSet<String> {
            s.iter().filter(|t| t.as_str() != *a && t.as_str() != *b).cloned().collect()
        };
        let (pr, hr) = (rest(&pc), rest(&hc));
        pr.is_empty() && hr.is_empty() || jaccard(&pr, &hr) >= 0.5
    })
}

impl NliScorer for MockScorer {
    fn score_batch(&self, pairs: &[ScorePair]) -> Result<Vec<NliScore>, ScorerError> {
        Ok(pairs.iter().map(|p| self.score(&p.premise, &p.hypothesis)).collect())
    }
}

/// Serves recorded scores; unknown pairs go to the fallback or fail.
#[derive(Default)]
pub struct CassetteScorer {
    scores: HashMap<ScorePair, NliScore>,
    fallback: Option<Box<dyn NliScorer>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub premise: String,
    pub hypothesis: String,
    pub score: NliScore,
}

impl CassetteScorer {
    pub fn new(entries: Vec<CassetteEntry>) -> Self {
        CassetteScorer {
            scores: entries
                .into_iter()
                .map(|e| (ScorePair::new(e.premise, e.hypothesis), e.score))
                .collect(),
            fallback: None,
        }
    }

    pub fn insert(&mut self, premise: &str, hypothesis: &str, score: NliScore) {
        self.scores.insert(ScorePair::new(premise, hypothesis), score);
    }

    pub fn with_fallback(mut self, fallback: Box<dyn NliScorer>) -> Self {
        self.fallback = Some(fallback);
        self
    }
}

impl NliScorer for CassetteScorer {
    fn score_batch(&self, pairs: &[ScorePair]) -> Result<Vec<NliScore>, ScorerError> {
        pairs
            .iter()
            .map(|p| match (self.scores.get(p), &self.fallback) {
                (Some(s), _) => Ok(*s),
                (None, Some(f)) => f
                    .score_batch(std::slice::from_ref(p))?
                    .pop()
                    .ok_or(ScorerError::LengthMismatch { expected: 1, got: 0 }),
                (None, None) => Err(ScorerError::CassetteMiss),
            })
            .collect()
    }
}

/// Client for the scorer service: `POST /score` and `GET /healthz`.
pub struct HttpScorer {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpScorer {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpScorer {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            agent,
        }
    }

    /// Ok when the service answers 200; returns the response body.
    pub fn healthz(&self) -> Result<String, ScorerError> {
        let url = format!("{}/healthz", self.endpoint);
        let mut resp = self
            .agent
            .get(&url)
            .call()
            .map_err(|e| ScorerError::Unreachable(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().unwrap_or_default();
        if status != 200 {
            return Err(ScorerError::Status { status, body });
        }
        Ok(body)
    }
}

impl NliScorer for HttpScorer {
    fn score_batch(&self, pairs: &[ScorePair]) -> Result<Vec<NliScore>, ScorerError> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let url = format!("{}/score", self.endpoint);
        let body = json!({ "pairs": pairs });
        let mut resp = self
            .agent
            .post(&url)
            .send_json(&body)
            .map_err(|e| ScorerError::Unreachable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ScorerError::Unreachable(e.to_string()))?;
        if status != 200 {
            return Err(ScorerError::Status { status, body: text });
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| ScorerError::Malformed(e.to_string()))?;
        let scores = value
            .get("scores")
            .cloned()
            .ok_or_else(|| ScorerError::Malformed("missing `scores`".into()))?;
        let scores: Vec<NliScore> =
            serde_json::from_value(scores).map_err(|e| ScorerError::Malformed(e.to_string()))?;
        if scores.len() != pairs.len() {
            return Err(ScorerError::LengthMismatch {
                expected: pairs.len(),
                got: scores.len(),
            });
        }
        Ok(scores)
    }
}
