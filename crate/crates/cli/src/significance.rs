//! `significance`: paired tests between two evaluated stages.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};

use gier_core::stats::{paired_test, significance_csv, significance_markdown, PairedSample, TestOptions};
use gier_core::{InstanceMetricsF64, TestResultF64};

use crate::evaluate::InstanceTable;
use crate::stages::{resolve_stage, task_metrics};
use crate::store::RunStore;

#[derive(Debug, Clone)]
pub struct SignificanceOutput {
    pub stage_a: String,
    pub stage_b: String,
    pub results: Vec<TestResultF64>,
    pub csv: PathBuf,
    pub markdown: PathBuf,
}

/// Pairs per metric over instances where both stages have a value.
pub fn paired_samples(
    a: &[&InstanceMetricsF64],
    b: &[&InstanceMetricsF64],
    field: &str,
) -> Vec<PairedSample<f64>> {
    a.iter()
        .filter_map(|ma| {
            let mb = b.iter().find(|m| m.instance_id == ma.instance_id)?;
            Some(PairedSample::new(ma.instance_id.clone(), ma.get(field)?, mb.get(field)?))
        })
        .collect()
}

/// Tests every task metric between `stage_a` (before) and `stage_b`
/// (after). Instance sets must match unless `allow_partial` is set.
pub fn compare_stages(
    table: &InstanceTable,
    stage_a: &str,
    stage_b: &str,
    options: &TestOptions,
    allow_partial: bool,
) -> Result<Vec<TestResultF64>> {
    let a: Vec<&InstanceMetricsF64> = table.stage(stage_a).collect();
    let b: Vec<&InstanceMetricsF64> = table.stage(stage_b).collect();
    if a.is_empty() {
        bail!("stage {stage_a} has not been evaluated");
    }
    if b.is_empty() {
        bail!("stage {stage_b} has not been evaluated");
    }
    let ids_a: BTreeSet<&str> = a.iter().map(|m| m.instance_id.as_str()).collect();
    let ids_b: BTreeSet<&str> = b.iter().map(|m| m.instance_id.as_str()).collect();
    if ids_a != ids_b && !allow_partial {
        let only_a: Vec<&str> = ids_a.difference(&ids_b).copied().collect();
        let only_b: Vec<&str> = ids_b.difference(&ids_a).copied().collect();
        bail!(
            "instance sets differ: only in {stage_a}: {only_a:?}; only in {stage_b}: {only_b:?}"
        );
    }
    let mut results = Vec::new();
    for field in task_metrics(table.task) {
        let samples = paired_samples(&a, &b, field);
        if samples.is_empty() {
            log::info!("{field}: no paired values between {stage_a} and {stage_b}");
            continue;
        }
        let name = if *field == "decision_correct" { "decision_accuracy" } else { field };
        results.push(paired_test(name, &samples, options)?);
    }
    Ok(results)
}

pub fn cmd_significance(
    root: &Path,
    stage_a: &str,
    stage_b: &str,
    allow_partial: bool,
) -> Result<SignificanceOutput> {
    let store = RunStore::open(root)?;
    let manifest = store.read_manifest()?;
    let iterations = manifest.run_config.iterations;
    let stage_a = resolve_stage(stage_a, iterations)?;
    let stage_b = resolve_stage(stage_b, iterations)?;
    let table = InstanceTable::read(&store)?;
    let results = compare_stages(
        &table,
        &stage_a,
        &stage_b,
        &manifest.config.test_options(),
        allow_partial,
    )?;
    let stem = format!("significance_{stage_a}_vs_{stage_b}");
    let csv = store.write_report(&format!("{stem}.csv"), &significance_csv(&results))?;
    let md = format!(
        "{stage_a} → {stage_b}\n\n{}",
        significance_markdown(&results)
    );
    let markdown = store.write_report(&format!("{stem}.md"), &md)?;
    Ok(SignificanceOutput {
        stage_a,
        stage_b,
        results,
        csv,
        markdown,
    })
}
