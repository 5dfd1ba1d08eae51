//! Experiment configuration: one JSON document per experiment.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use gier_core::attribution::{HttpScorer, MockScorer, NliScorer, SegmentationMode};
use gier_core::backend::{BackendConfig, BackendKind};
use gier_core::corpus::{load_corpus, TaskInstance};
use gier_core::engine::{RunConfig, DEFAULT_ITERATIONS, ITERATION_CAP};
use gier_core::gaps::{builtin_gapset, drop_gap, load_gapset, GapSet};
use gier_core::metrics::MetricOptions;
use gier_core::stats::{TestOptions, WilcoxonOptions, ZeroMethod, DEFAULT_LEVEL, DEFAULT_RESAMPLES};
use gier_core::TaskKind;

fn default_iterations() -> usize {
    DEFAULT_ITERATIONS
}

fn default_true() -> bool {
    true
}

fn default_resamples() -> usize {
    DEFAULT_RESAMPLES
}

fn default_level() -> f64 {
    DEFAULT_LEVEL
}

fn default_parallel() -> usize {
    1
}

fn default_threshold() -> f64 {
    gier_core::attribution::DEFAULT_THRESHOLD
}

fn default_scorer_timeout() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_true")]
    pub reflection: bool,
    #[serde(default = "default_true")]
    pub include_gaps_in_baseline: bool,
    #[serde(default)]
    pub stop_on_plateau: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            iterations: DEFAULT_ITERATIONS,
            reflection: true,
            include_gaps_in_baseline: true,
            stop_on_plateau: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Ablation {
    DropGap { gap: String },
    ReflectionDrop,
}

impl Ablation {
    pub fn slug(&self) -> String {
        match self {
            Ablation::DropGap { gap } => format!("drop-{}", gier_core::gaps::slugify(gap)),
            Ablation::ReflectionDrop => "reflection-drop".into(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Ablation::DropGap { gap } => format!("{gap} Drop"),
            Ablation::ReflectionDrop => "Reflection Drop".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScorerConfig {
    #[default]
    Mock,
    Http {
        endpoint: String,
        #[serde(default = "default_scorer_timeout")]
        timeout_secs: u64,
    },
}

impl ScorerConfig {
    pub fn build(&self) -> Box<dyn NliScorer> {
        match self {
            ScorerConfig::Mock => Box::new(MockScorer),
            ScorerConfig::Http {
                endpoint,
                timeout_secs,
            } => Box::new(HttpScorer::new(endpoint.clone(), Duration::from_secs(*timeout_secs))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributionSettings {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub segmentation: SegmentationMode,
    /// Candidates include every iteration's gap explanations, not only the
    /// stage's own.
    #[serde(default)]
    pub pool_all_iterations: bool,
    #[serde(default)]
    pub scorer: ScorerConfig,
}

impl Default for AttributionSettings {
    fn default() -> Self {
        AttributionSettings {
            threshold: default_threshold(),
            segmentation: SegmentationMode::Rule,
            pool_all_iterations: false,
            scorer: ScorerConfig::Mock,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsSettings {
    #[serde(default)]
    pub zero_method: ZeroMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub corpus: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_file: Option<PathBuf>,
    pub backend: BackendConfig,
    #[serde(default)]
    pub run: RunSettings,
    #[serde(default)]
    pub ablations: Vec<Ablation>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub stats: StatsSettings,
    #[serde(default)]
    pub attribution: AttributionSettings,
    #[serde(default)]
    pub metrics: MetricOptions,
    #[serde(default = "default_parallel")]
    pub parallel: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    /// Directory relative paths are resolved against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Command-line values that replace config fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub task: Option<TaskKind>,
    pub backend: Option<BackendKind>,
    pub transcript: Option<PathBuf>,
    pub parallel: Option<usize>,
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            serde_json::from_str(text).context("invalid experiment config")?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(t) = o.task {
            self.task = t;
        }
        if let Some(b) = o.backend {
            self.backend.kind = b;
        }
        if let Some(t) = &o.transcript {
            // given on the command line, so relative to the working directory
            self.backend.transcript = Some(absolute(t));
        }
        if let Some(p) = o.parallel {
            self.parallel = p;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// SHA-256 of the transcript or script file the backend reads, if any.
    pub fn backend_source_sha256(&self) -> Result<Option<String>> {
        let b = self.resolved_backend();
        let path = match b.kind {
            BackendKind::Replay => b.transcript,
            BackendKind::Scripted => b.script,
            BackendKind::Http => None,
        };
        match path {
            Some(p) if p.is_file() => {
                let bytes = std::fs::read(&p).with_context(|| format!("cannot read {}", p.display()))?;
                Ok(Some(crate::store::sha256_hex(&bytes)))
            }
            _ => Ok(None),
        }
    }

    /// Backend config with file paths resolved.
    pub fn resolved_backend(&self) -> BackendConfig {
        let mut b = self.backend.clone();
        b.transcript = b.transcript.map(|p| self.resolve(&p));
        b.script = b.script.map(|p| self.resolve(&p));
        b
    }

    pub fn gap_set(&self) -> Result<GapSet> {
        let gaps = match &self.gap_file {
            Some(p) => {
                let path = self.resolve(p);
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("cannot read gap file {}", path.display()))?;
                load_gapset(&text).with_context(|| format!("invalid gap file {}", path.display()))?
            }
            None => builtin_gapset(self.task),
        };
        if gaps.task != self.task {
            bail!("gap file is for `{}` but the config task is `{}`", gaps.task, self.task);
        }
        Ok(gaps)
    }

    pub fn load_instances(&self) -> Result<Vec<TaskInstance>> {
        let path = self.resolve(&self.corpus);
        load_corpus(&path, self.task).with_context(|| format!("cannot load corpus {}", path.display()))
    }

    pub fn run_config(&self, gaps: GapSet) -> RunConfig {
        RunConfig {
            task: self.task,
            gaps,
            iterations: self.run.iterations,
            include_gaps_in_baseline: self.run.include_gaps_in_baseline,
            reflection: self.run.reflection,
            stop_on_plateau: self.run.stop_on_plateau,
            max_retries: self.backend.max_retries,
        }
    }

    pub fn test_options(&self) -> TestOptions {
        TestOptions {
            resamples: self.resamples,
            level: self.level,
            seed: self.seed,
            wilcoxon: WilcoxonOptions {
                zero_method: self.stats.zero_method,
            },
        }
    }

    pub fn run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| format!("{}-gier", self.task))
    }

    /// Config for one ablation variant.
    pub fn ablated(&self, ablation: &Ablation) -> Result<(ExperimentConfig, GapSet)> {
        let mut cfg = self.clone();
        cfg.ablations.clear();
        cfg.run_id = Some(format!("{}-{}", self.run_id(), ablation.slug()));
        let mut gaps = self.gap_set()?;
        match ablation {
            Ablation::DropGap { gap } => gaps = drop_gap(&gaps, gap)?,
            Ablation::ReflectionDrop => cfg.run.reflection = false,
        }
        Ok((cfg, gaps))
    }

    /// Checks everything that can be checked without a backend call.
    pub fn validate(&self) -> Result<()> {
        if self.run.iterations > ITERATION_CAP {
            bail!("iterations {} exceeds the cap of {ITERATION_CAP}", self.run.iterations);
        }
        if self.parallel == 0 {
            bail!("parallel must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.attribution.threshold) {
            bail!("attribution threshold {} is not a probability", self.attribution.threshold);
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            bail!("level {} is not in (0, 1)", self.level);
        }
        if self.resamples == 0 {
            bail!("resamples must be positive");
        }
        let corpus = self.resolve(&self.corpus);
        if !corpus.is_file() {
            bail!("corpus {} does not exist", corpus.display());
        }
        let gaps = self.gap_set()?;
        for ablation in &self.ablations {
            if let Ablation::DropGap { gap } = ablation {
                if !gaps.contains(gap) {
                    bail!("ablation drops unknown gap `{gap}`");
                }
                if gaps.len() == 1 {
                    bail!("cannot drop the only gap `{gap}`");
                }
            }
        }
        let backend = self.resolved_backend();
        match backend.kind {
            BackendKind::Http if backend.endpoint.is_none() => bail!("http backend needs an endpoint"),
            BackendKind::Replay => match &backend.transcript {
                Some(p) if p.exists() => {}
                Some(p) => bail!("transcript {} does not exist", p.display()),
                None => bail!("replay backend needs a transcript"),
            },
            BackendKind::Scripted => match &backend.script {
                Some(p) if p.is_file() => {}
                Some(p) => bail!("script {} does not exist", p.display()),
                None => bail!("scripted backend needs a script"),
            },
            _ => {}
        }
        Ok(())
    }
}

fn absolute(path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        std::env::current_dir().map(|d| d.join(path)).unwrap_or_else(|_| path.to_path_buf())
    }
}
