//! `run`: both baselines and the GIER loop for every instance.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{Context, Result};
use serde::Serialize;

use gier_core::attribution::{segment_chunks, Origin, SegmentationMode};
use gier_core::backend::{Backend, BackendError, CachedBackend, CompletionKey, DiskCache};
use gier_core::corpus::TaskInstance;
use gier_core::engine::{run_baseline, run_gier, CallStats, RunConfig};
use gier_core::gaps::GapSet;

use crate::config::ExperimentConfig;
use crate::store::{build_manifest, InstanceRecord, RunStore};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub store: PathBuf,
    pub instances: usize,
    pub executed: usize,
    pub skipped: usize,
    pub failed: usize,
    /// Requests that missed the store cache.
    pub backend_requests: usize,
    pub cache_hits: usize,
}

impl RunSummary {
    pub fn success(&self) -> bool {
        self.failed == 0
    }
}

/// Records the digest of every completion served through it.
struct Tracking<'a> {
    inner: &'a dyn Backend,
    seen: Mutex<BTreeSet<String>>,
}

impl<'a> Tracking<'a> {
    fn new(inner: &'a dyn Backend) -> Self {
        Tracking {
            inner,
            seen: Mutex::new(BTreeSet::new()),
        }
    }

    fn digests(&self) -> Vec<String> {
        self.seen.lock().expect("digest lock").iter().cloned().collect()
    }
}

impl Backend for Tracking<'_> {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let out = self.inner.complete(prompt)?;
        let key = CompletionKey::for_backend(self.inner, prompt);
        self.seen.lock().expect("digest lock").insert(key.to_string());
        Ok(out)
    }

    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn temperature(&self) -> f64 {
        self.inner.temperature()
    }
}

/// Store directory for a config under `out`.
pub fn store_root(out: &Path, config: &ExperimentConfig) -> PathBuf {
    out.join(config.run_id())
}

pub fn cmd_run(config: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    config.validate()?;
    let gaps = config.gap_set()?;
    execute(config, gaps, &store_root(out, config))
}

/// Runs `config` with an explicit gap set into the store at `root`.
pub fn execute(config: &ExperimentConfig, gaps: GapSet, root: &Path) -> Result<RunSummary> {
    let instances = config.load_instances()?;
    let run_config = config.run_config(gaps.clone());
    run_config.validate()?;
    let store = RunStore::new(root);
    store.write_inputs(&instances, &gaps)?;

    let inner = config.resolved_backend().build().context("cannot build backend")?;
    let cache = DiskCache::open(store.cache_dir())?;
    let backend = CachedBackend::new(inner, cache);

    let n = instances.len();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<(InstanceRecord, bool)>>> = Mutex::new(vec![None; n]);
    let first_error: Mutex<Option<anyhow::Error>> = Mutex::new(None);
    let workers = config.parallel.clamp(1, n.max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                match process(&instances[i], &run_config, config, &backend, &store) {
                    Ok(result) => slots.lock().expect("slot lock")[i] = Some(result),
                    Err(e) => {
                        first_error.lock().expect("error lock").get_or_insert(e);
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().expect("error lock") {
        return Err(e);
    }

    let slots = slots.into_inner().expect("slot lock");
    let mut records = Vec::with_capacity(n);
    let (mut executed, mut skipped) = (0, 0);
    for slot in slots {
        let (record, fresh) = slot.expect("every instance processed");
        if fresh {
            executed += 1;
        } else {
            skipped += 1;
        }
        records.push(Some(record));
    }
    let manifest = build_manifest(config, &gaps, &instances, &records)?;
    store.write_manifest(&manifest)?;
    let summary = RunSummary {
        run_id: manifest.run_id.clone(),
        store: root.to_path_buf(),
        instances: n,
        executed,
        skipped,
        failed: manifest.totals.failed,
        backend_requests: backend.misses(),
        cache_hits: backend.hits(),
    };
    log::info!(
        "{}: {} executed, {} skipped, {} failed, {} backend requests",
        summary.run_id,
        summary.executed,
        summary.skipped,
        summary.failed,
        summary.backend_requests
    );
    Ok(summary)
}

/// Returns the record and whether it was produced in this invocation.
fn process(
    instance: &TaskInstance,
    run_config: &RunConfig,
    config: &ExperimentConfig,
    backend: &dyn Backend,
    store: &RunStore,
) -> Result<(InstanceRecord, bool)> {
    if let Some(existing) = store.read_instance(instance.id())? {
        if existing.is_complete() {
            log::debug!("{}: complete, skipping", instance.id());
            return Ok((existing, false));
        }
        log::info!("{}: retrying incomplete instance", instance.id());
    }
    let record = run_instance(instance, run_config, config.attribution.segmentation, backend);
    store.write_instance(&record)?;
    Ok((record, true))
}

/// Both baselines and the GIER loop for one instance. Failures are recorded,
/// not returned.
pub fn run_instance(
    instance: &TaskInstance,
    run_config: &RunConfig,
    segmentation: SegmentationMode,
    backend: &dyn Backend,
) -> InstanceRecord {
    let tracker = Tracking::new(backend);
    let id = instance.id().to_string();
    let mut calls = CallStats::default();

    let no_gaps = run_config.clone().with_baseline_gaps(false);
    let (baseline_no_gaps, baseline_no_gaps_failure) = match run_baseline(instance, &no_gaps, &tracker)
    {
        Ok((response, c)) => {
            calls.add(&c);
            (Some(response), None)
        }
        Err(f) => {
            log::warn!("{id}: baseline without gaps failed: {}", f.error);
            calls.add(&f.calls);
            (None, Some(f.error.to_string()))
        }
    };
    let (gier, failure) = match run_gier(instance, run_config, &tracker) {
        Ok(history) => {
            calls.add(&history.calls);
            (Some(history), None)
        }
        Err(f) => {
            log::warn!("{id}: GIER baseline failed: {}", f.error);
            calls.add(&f.calls);
            (None, Some(f.error.to_string()))
        }
    };

    let mut record = InstanceRecord {
        instance_id: id,
        task: instance.task(),
        baseline_no_gaps,
        baseline_no_gaps_failure,
        gier,
        failure,
        calls,
        completions: Vec::new(),
        segmentations: BTreeMap::new(),
    };
    if segmentation == SegmentationMode::Llm {
        if let TaskInstance::Esnli(inst) = instance {
            let mut texts = vec![inst.human_rationale.clone()];
            texts.extend(reasoning_texts(&record));
            for text in texts {
                if record.segmentations.contains_key(&text) || text.trim().is_empty() {
                    continue;
                }
                if let Ok(chunks) =
                    segment_chunks(&text, Origin::Human, inst.id.as_str(), segmentation, Some(&tracker))
                {
                    record
                        .segmentations
                        .insert(text, chunks.into_iter().map(|c| c.text).collect());
                }
            }
        }
    }
    record.completions = tracker.digests();
    record
}

/// Every model text that attribution may segment.
fn reasoning_texts(record: &InstanceRecord) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(text) = record.baseline_no_gaps.as_ref().and_then(|r| r.explanation()) {
        out.push(text.to_string());
    }
    if let Some(h) = &record.gier {
        if let Some(text) = h.baseline.explanation() {
            out.push(text.to_string());
        }
        for rev in &h.revisions {
            if let Some(text) = rev.output.explanation() {
                out.push(text.to_string());
            }
            out.extend(rev.gap_explanations.values().cloned());
        }
    }
    out
}
