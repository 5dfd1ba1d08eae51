//! On-disk run store.
//!
//! ```text
//! <store>/manifest.json
//! <store>/corpus.jsonl
//! <store>/gaps.json
//! <store>/instances/<id>.json
//! <store>/cache/<digest>.json
//! <store>/reports/
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use gier_core::backend::BackendConfig;
use gier_core::corpus::{parse_corpus, TaskInstance};
use gier_core::engine::{CallStats, RunConfig, RunHistory, StopReason};
use gier_core::gaps::GapSet;
use gier_core::response::TaskResponse;
use gier_core::TaskKind;

use crate::config::ExperimentConfig;

pub const MANIFEST: &str = "manifest.json";
pub const CORPUS: &str = "corpus.jsonl";
pub const GAPS: &str = "gaps.json";

/// Everything produced for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub instance_id: String,
    pub task: TaskKind,
    pub baseline_no_gaps: Option<TaskResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_no_gaps_failure: Option<String>,
    pub gier: Option<RunHistory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    /// Engine requests over both runs.
    pub calls: CallStats,
    /// Digests of every completion used, sorted.
    pub completions: Vec<String>,
    /// Reasoning chunks per segmented text, for LLM segmentation.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub segmentations: BTreeMap<String, Vec<String>>,
}

impl InstanceRecord {
    pub fn is_complete(&self) -> bool {
        self.baseline_no_gaps.is_some()
            && self.failure.is_none()
            && self
                .gier
                .as_ref()
                .is_some_and(|h| h.stop_reason != StopReason::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub instance_id: String,
    pub file: String,
    pub status: InstanceStatus,
    pub revisions: usize,
    pub stop_reason: Option<StopReason>,
    pub calls: CallStats,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub instances: usize,
    pub complete: usize,
    pub failed: usize,
    pub calls: CallStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub task: TaskKind,
    pub config: ExperimentConfig,
    pub backend: BackendConfig,
    pub gap_set: GapSet,
    pub run_config: RunConfig,
    pub seed: u64,
    pub corpus_sha256: String,
    /// SHA-256 of the replay transcript or script file.
    pub backend_source_sha256: Option<String>,
    /// SHA-256 of the sorted completion digests of all instances.
    pub completions_sha256: String,
    pub instances: Vec<ManifestEntry>,
    pub totals: Totals,
}

/// File-name-safe form of an instance id.
pub fn sanitize_id(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Pretty JSON with a trailing newline, written via a temporary file.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    write_atomic(path, body.as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid JSON in {}", path.display()))
}

#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunStore { root: root.into() }
    }

    /// Opens an existing store; fails without a manifest.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let store = RunStore::new(root);
        if !store.manifest_path().is_file() {
            bail!("{} is not a run store (no {MANIFEST})", store.root.display());
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.root.join("cache")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn instances_dir(&self) -> PathBuf {
        self.root.join("instances")
    }

    pub fn instance_file(id: &str) -> String {
        format!("instances/{}.json", sanitize_id(id))
    }

    pub fn instance_path(&self, id: &str) -> PathBuf {
        self.root.join(Self::instance_file(id))
    }

    pub fn read_instance(&self, id: &str) -> Result<Option<InstanceRecord>> {
        let path = self.instance_path(id);
        if !path.exists() {
            return Ok(None);
        }
        read_json(&path).map(Some)
    }

    pub fn write_instance(&self, record: &InstanceRecord) -> Result<()> {
        write_json_atomic(&self.instance_path(&record.instance_id), record)
    }

    pub fn write_inputs(&self, instances: &[TaskInstance], gaps: &GapSet) -> Result<()> {
        write_atomic(
            &self.root.join(CORPUS),
            gier_core::corpus::to_jsonl(instances).as_bytes(),
        )?;
        write_json_atomic(&self.root.join(GAPS), gaps)
    }

    pub fn read_corpus(&self, task: TaskKind) -> Result<Vec<TaskInstance>> {
        let path = self.root.join(CORPUS);
        let text =
            fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
        Ok(parse_corpus(&text, task)?)
    }

    pub fn read_gaps(&self) -> Result<GapSet> {
        read_json(&self.root.join(GAPS))
    }

    pub fn read_manifest(&self) -> Result<Manifest> {
        read_json(&self.manifest_path())
    }

    pub fn write_manifest(&self, manifest: &Manifest) -> Result<()> {
        write_json_atomic(&self.manifest_path(), manifest)
    }

    /// Instance records in manifest order; instances without a file are
    /// skipped.
    pub fn records(&self) -> Result<Vec<InstanceRecord>> {
        let manifest = self.read_manifest()?;
        let mut out = Vec::new();
        for entry in &manifest.instances {
            if let Some(r) = self.read_instance(&entry.instance_id)? {
                out.push(r);
            }
        }
        Ok(out)
    }

    pub fn write_report(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.reports_dir().join(name);
        write_atomic(&path, contents.as_bytes())?;
        Ok(path)
    }
}

/// Builds the manifest from the records on disk.
pub fn build_manifest(
    config: &ExperimentConfig,
    gaps: &GapSet,
    instances: &[TaskInstance],
    records: &[Option<InstanceRecord>],
) -> Result<Manifest> {
    let mut totals = Totals {
        instances: instances.len(),
        ..Totals::default()
    };
    let mut digests: Vec<&str> = Vec::new();
    let mut entries = Vec::with_capacity(instances.len());
    for (inst, record) in instances.iter().zip(records) {
        let complete = record.as_ref().is_some_and(InstanceRecord::is_complete);
        if complete {
            totals.complete += 1;
        } else {
            totals.failed += 1;
        }
        let calls = record.as_ref().map(|r| r.calls).unwrap_or_default();
        totals.calls.add(&calls);
        if let Some(r) = record {
            digests.extend(r.completions.iter().map(String::as_str));
        }
        entries.push(ManifestEntry {
            instance_id: inst.id().to_string(),
            file: RunStore::instance_file(inst.id()),
            status: if complete { InstanceStatus::Complete } else { InstanceStatus::Failed },
            revisions: record
                .as_ref()
                .and_then(|r| r.gier.as_ref())
                .map_or(0, |h| h.revisions.len()),
            stop_reason: record.as_ref().and_then(|r| r.gier.as_ref()).map(|h| h.stop_reason),
            calls,
        });
    }
    digests.sort_unstable();
    digests.dedup();
    Ok(Manifest {
        run_id: config.run_id(),
        task: config.task,
        config: config.clone(),
        backend: config.backend.clone(),
        gap_set: gaps.clone(),
        run_config: config.run_config(gaps.clone()),
        seed: config.seed,
        corpus_sha256: sha256_hex(gier_core::corpus::to_jsonl(instances).as_bytes()),
        backend_source_sha256: config.backend_source_sha256()?,
        completions_sha256: sha256_hex(digests.join("\n").as_bytes()),
        instances: entries,
        totals,
    })
}
