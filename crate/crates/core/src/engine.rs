//! The GIER loop: an initial response, then rounds of gap analysis,
//! consolidation and revision.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{repair_prompt, Backend, BackendError};
use crate::corpus::TaskInstance;
use crate::gaps::GapSet;
use crate::prompting::{
    parse_response, render_initial, render_revision_from, ParseError, Parsed, PromptBundle,
    PromptError,
};
use crate::response::TaskResponse;
use crate::task::TaskKind;

pub const DEFAULT_ITERATIONS: usize = 5;
pub const ITERATION_CAP: usize = 10;
pub const DEFAULT_REPAIR_RETRIES: usize = 2;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("run config is for `{config}` but the instance is a `{instance}` instance")]
    TaskMismatch { config: TaskKind, instance: TaskKind },
    #[error("{iterations} iterations exceeds the cap of {cap}")]
    TooManyIterations { iterations: usize, cap: usize },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("reply still invalid after {attempts} attempts: {error}")]
    Unparseable { attempts: usize, error: ParseError },
}

fn default_iterations() -> usize {
    DEFAULT_ITERATIONS
}

fn default_true() -> bool {
    true
}

fn default_repair_retries() -> usize {
    DEFAULT_REPAIR_RETRIES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: TaskKind,
    pub gaps: GapSet,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_true")]
    pub include_gaps_in_baseline: bool,
    #[serde(default = "default_true")]
    pub reflection: bool,
    #[serde(default)]
    pub stop_on_plateau: bool,
    /// Repair attempts after an invalid reply.
    #[serde(default = "default_repair_retries")]
    pub max_retries: usize,
}

impl RunConfig {
    pub fn new(gaps: GapSet) -> Self {
        RunConfig {
            task: gaps.task,
            gaps,
            iterations: DEFAULT_ITERATIONS,
            include_gaps_in_baseline: true,
            reflection: true,
            stop_on_plateau: false,
            max_retries: DEFAULT_REPAIR_RETRIES,
        }
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn with_reflection(mut self, reflection: bool) -> Self {
        self.reflection = reflection;
        self
    }

    pub fn with_stop_on_plateau(mut self, stop: bool) -> Self {
        self.stop_on_plateau = stop;
        self
    }

    pub fn with_baseline_gaps(mut self, include: bool) -> Self {
        self.include_gaps_in_baseline = include;
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.iterations > ITERATION_CAP {
            return Err(EngineError::TooManyIterations {
                iterations: self.iterations,
                cap: ITERATION_CAP,
            });
        }
        Ok(())
    }

    fn check_instance(&self, instance: &TaskInstance) -> Result<(), EngineError> {
        self.validate()?;
        if instance.task() != self.task {
            return Err(EngineError::TaskMismatch {
                config: self.task,
                instance: instance.task(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionRecord {
    pub iteration: usize,
    pub gap_scores: IndexMap<String, u8>,
    pub gap_explanations: IndexMap<String, String>,
    pub consolidated_explanation: String,
    pub output: TaskResponse,
}

impl RevisionRecord {
    pub fn score_sum(&self) -> u32 {
        self.gap_scores.values().map(|&s| u32::from(s)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    Plateau,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlateauRule {
    IdenticalOutput,
    ScoreStall,
}

/// Backend requests made for one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallStats {
    pub calls: usize,
    pub revisions: usize,
    pub repair_retries: usize,
    /// Rounds abandoned after exhausting repairs or on a backend error.
    pub failed_rounds: usize,
}

impl CallStats {
    /// Calls expected from the other counters.
    pub fn expected_calls(&self) -> usize {
        1 + self.revisions + self.repair_retries + self.failed_rounds
    }

    pub fn add(&mut self, other: &CallStats) {
        self.calls += other.calls;
        self.revisions += other.revisions;
        self.repair_retries += other.repair_retries;
        self.failed_rounds += other.failed_rounds;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFailureInfo {
    pub iteration: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub instance_id: String,
    pub config: RunConfig,
    pub baseline: TaskResponse,
    pub revisions: Vec<RevisionRecord>,
    pub stop_reason: StopReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plateau_rule: Option<PlateauRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<RunFailureInfo>,
    pub calls: CallStats,
}

impl RunHistory {
    /// Output after the last completed round, or the baseline.
    pub fn latest(&self) -> &TaskResponse {
        self.revisions
            .last()
            .map(|r| &r.output)
            .unwrap_or(&self.baseline)
    }
}

/// The run could not produce a baseline.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct RunFailure {
    pub error: EngineError,
    pub calls: CallStats,
}

/// Sends `bundle`, re-asking with the repair suffix while the reply fails
/// validation.
fn request(
    bundle: &PromptBundle,
    backend: &dyn Backend,
    max_retries: usize,
    stats: &mut CallStats,
) -> Result<Parsed, EngineError> {
    let mut attempt = 0;
    loop {
        let prompt = repair_prompt(&bundle.text, attempt);
        stats.calls += 1;
        let raw = backend.complete(&prompt)?;
        match parse_response(&raw, &bundle.expected_schema) {
            Ok(parsed) => return Ok(parsed),
            Err(error) if attempt < max_retries => {
                log::warn!("invalid reply ({error}); repair attempt {}", attempt + 1);
                attempt += 1;
                stats.repair_retries += 1;
            }
            Err(error) => {
                return Err(EngineError::Unparseable {
                    attempts: attempt + 1,
                    error,
                })
            }
        }
    }
}

fn initial_response(
    instance: &TaskInstance,
    config: &RunConfig,
    backend: &dyn Backend,
    stats: &mut CallStats,
) -> Result<TaskResponse, EngineError> {
    config.check_instance(instance)?;
    let bundle = render_initial(instance, &config.gaps, config.include_gaps_in_baseline)?;
    match request(&bundle, backend, config.max_retries, stats)? {
        Parsed::Initial(response) => Ok(response),
        Parsed::Revision(_) => unreachable!("initial schema yields an initial response"),
    }
}

/// Initial response only, with the requests it took. With
/// `include_gaps_in_baseline = false` the prompt carries no gap definitions.
pub fn run_baseline(
    instance: &TaskInstance,
    config: &RunConfig,
    backend: &dyn Backend,
) -> Result<(TaskResponse, CallStats), RunFailure> {
    let mut calls = CallStats::default();
    match initial_response(instance, config, backend, &mut calls) {
        Ok(response) => Ok((response, calls)),
        Err(error) => Err(RunFailure { error, calls }),
    }
}

/// Baseline followed by up to `config.iterations` revision rounds.
///
/// A round that fails ends the run with [`StopReason::Failed`]; the rounds
/// before it are kept.
pub fn run_gier(
    instance: &TaskInstance,
    config: &RunConfig,
    backend: &dyn Backend,
) -> Result<RunHistory, RunFailure> {
    let mut calls = CallStats::default();
    let baseline = match initial_response(instance, config, backend, &mut calls) {
        Ok(b) => b,
        Err(error) => return Err(RunFailure { error, calls }),
    };
    let mut history = RunHistory {
        instance_id: instance.id().to_string(),
        config: config.clone(),
        baseline,
        revisions: Vec::new(),
        stop_reason: StopReason::MaxIterations,
        plateau_rule: None,
        failure: None,
        calls,
    };

    for iteration in 1..=config.iterations {
        match revise_once(instance, config, &mut history, backend) {
            Ok(()) => {}
            Err(error) => {
                log::warn!(
                    "instance {}: iteration {iteration} failed: {error}",
                    history.instance_id
                );
                history.calls.failed_rounds += 1;
                history.stop_reason = StopReason::Failed;
                history.failure = Some(RunFailureInfo {
                    iteration,
                    message: error.to_string(),
                });
                break;
            }
        }
        if config.stop_on_plateau {
            if let Some(rule) = plateau_rule(&history) {
                log::info!(
                    "instance {}: plateau ({rule:?}) after iteration {iteration}",
                    history.instance_id
                );
                history.stop_reason = StopReason::Plateau;
                history.plateau_rule = Some(rule);
                break;
            }
        }
    }
    Ok(history)
}

fn revise_once(
    instance: &TaskInstance,
    config: &RunConfig,
    history: &mut RunHistory,
    backend: &dyn Backend,
) -> Result<(), EngineError> {
    let bundle = render_revision_from(
        instance,
        &config.gaps,
        Some(&history.baseline),
        &history.revisions,
        config.reflection,
    )?;
    let iteration = history.revisions.len() + 1;
    match request(&bundle, backend, config.max_retries, &mut history.calls)? {
        Parsed::Revision(rev) => {
            history.revisions.push(rev.into_record(iteration));
            history.calls.revisions += 1;
            Ok(())
        }
        Parsed::Initial(_) => unreachable!("revision schema yields a revision"),
    }
}

/// Which plateau rule fires on `history`, if any. Needs two revisions.
pub fn plateau_rule(history: &RunHistory) -> Option<PlateauRule> {
    let revs = &history.revisions;
    let k = revs.len();
    if k < 2 {
        return None;
    }
    if revs[k - 1].output == revs[k - 2].output {
        return Some(PlateauRule::IdenticalOutput);
    }
    if k >= 3 && revs[k - 3..].iter().all(|r| !r.gap_scores.is_empty()) {
        let s: Vec<u32> = revs[k - 3..].iter().map(RevisionRecord::score_sum).collect();
        if s[1] <= s[0] && s[2] <= s[1] {
            return Some(PlateauRule::ScoreStall);
        }
    }
    None
}

pub fn check_plateau(history: &RunHistory) -> bool {
    plateau_rule(history).is_some()
}
