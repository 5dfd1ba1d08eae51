//! `record` and `validate`.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use gier_core::backend::{write_transcript, DiskCache};
use gier_core::corpus::{load_corpus, TaskInstance};
use gier_core::gaps::{builtin_gapset, load_gapset};
use gier_core::TaskKind;

use crate::config::ExperimentConfig;
use crate::store::RunStore;

/// Writes the completions cached in a store as a replay transcript.
pub fn cmd_record(store_root: &Path, out: &Path) -> Result<usize> {
    let store = RunStore::open(store_root)?;
    let entries = DiskCache::open(store.cache_dir())?.entries()?;
    if entries.is_empty() {
        bail!("store {} has no cached completions", store_root.display());
    }
    write_transcript(out, &entries)?;
    Ok(entries.len())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub task: TaskKind,
    pub instances: usize,
    pub gaps: Vec<String>,
    pub warnings: Vec<String>,
}

/// Checks a corpus and gap file; with a config, also every referenced file.
pub fn cmd_validate(
    config: Option<&ExperimentConfig>,
    corpus: Option<&Path>,
    gap_file: Option<&Path>,
    task: Option<TaskKind>,
) -> Result<ValidationReport> {
    let (task, instances, gaps) = match config {
        Some(cfg) => {
            cfg.validate()?;
            (cfg.task, cfg.load_instances()?, cfg.gap_set()?)
        }
        None => {
            let task = task.context("--task is required without --config")?;
            let corpus = corpus.context("--corpus is required without --config")?;
            let instances = load_corpus(corpus, task)
                .with_context(|| format!("cannot load corpus {}", corpus.display()))?;
            let gaps = match gap_file {
                Some(p) => load_gapset(&std::fs::read_to_string(p)?)?,
                None => builtin_gapset(task),
            };
            if gaps.task != task {
                bail!("gap file is for `{}`, not `{task}`", gaps.task);
            }
            (task, instances, gaps)
        }
    };
    if instances.is_empty() {
        bail!("corpus is empty");
    }
    let mut warnings = Vec::new();
    for inst in &instances {
        if let TaskInstance::Privacyqa(q) = inst {
            let missing = q.policy_sentences.iter().filter(|s| s.theme.is_none()).count();
            if missing > 0 {
                warnings.push(format!(
                    "{}: {missing} policy sentences have no theme; drift is undefined for them",
                    q.id
                ));
            }
        }
    }
    Ok(ValidationReport {
        task,
        instances: instances.len(),
        gaps: gaps.names(),
        warnings,
    })
}
