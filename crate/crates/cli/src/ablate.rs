//! `ablate`: base run plus one run per ablation, compared at the final
//! iteration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use serde::Serialize;

use gier_core::metrics::format_value;
use gier_core::stats::relative_change;

use crate::config::ExperimentConfig;
use crate::evaluate::{cmd_evaluate, InstanceTable};
use crate::run::{execute, store_root, RunSummary};
use crate::stages::{iteration_stage, metric_title, task_metrics, BASELINE_GAPS};
use crate::store::RunStore;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub ablation: String,
    pub run_id: String,
    /// Per metric: base value, variant value, relative change in percent.
    pub cells: Vec<AblationCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationCell {
    pub metric: String,
    pub base: Option<f64>,
    pub variant: Option<f64>,
    pub relative_change: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationOutput {
    pub base: RunSummary,
    pub variants: Vec<RunSummary>,
    pub rows: Vec<AblationRow>,
    pub csv: PathBuf,
    pub markdown: PathBuf,
}

fn final_stage(iterations: usize) -> String {
    if iterations > 0 {
        iteration_stage(iterations)
    } else {
        BASELINE_GAPS.to_string()
    }
}

fn stage_mean(table: &InstanceTable, stage: &str, field: &str) -> Option<f64> {
    let values: Vec<f64> = table.stage(stage).filter_map(|m| m.get(field)).collect();
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn cmd_ablate(config: &ExperimentConfig, out: &Path) -> Result<AblationOutput> {
    config.validate()?;
    if config.ablations.is_empty() {
        bail!("config lists no ablations");
    }
    let base_root = store_root(out, config);
    let base = execute(config, config.gap_set()?, &base_root)?;
    cmd_evaluate(&base_root)?;
    let base_store = RunStore::open(&base_root)?;
    let base_table = InstanceTable::read(&base_store)?;
    let stage = final_stage(config.run.iterations);
    let fields = task_metrics(config.task);

    let mut variants = Vec::new();
    let mut rows = Vec::new();
    for ablation in &config.ablations {
        let (variant_cfg, gaps) = config.ablated(ablation)?;
        let root = store_root(out, &variant_cfg);
        let summary = execute(&variant_cfg, gaps, &root)?;
        cmd_evaluate(&root)?;
        let table = InstanceTable::read(&RunStore::open(&root)?)?;
        let cells = fields
            .iter()
            .map(|field| {
                let b = stage_mean(&base_table, &stage, field);
                let v = stage_mean(&table, &stage, field);
                AblationCell {
                    metric: field.to_string(),
                    base: b,
                    variant: v,
                    relative_change: b.zip(v).and_then(|(b, v)| relative_change(b, v)),
                }
            })
            .collect();
        rows.push(AblationRow {
            ablation: ablation.label(),
            run_id: summary.run_id.clone(),
            cells,
        });
        variants.push(summary);
    }

    let csv = base_store.write_report("ablation.csv", &ablation_csv(&rows))?;
    let markdown = base_store.write_report("ablation.md", &ablation_markdown(&rows, &stage))?;
    Ok(AblationOutput {
        base,
        variants,
        rows,
        csv,
        markdown,
    })
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["ablation", "run_id", "metric", "base", "variant", "relative_change_pct"])
        .expect("in-memory write");
    let opt = |v: Option<f64>| v.map(format_value).unwrap_or_default();
    for row in rows {
        for c in &row.cells {
            w.write_record([
                row.ablation.as_str(),
                row.run_id.as_str(),
                c.metric.as_str(),
                &opt(c.base),
                &opt(c.variant),
                &opt(c.relative_change),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

fn change_cell(c: &AblationCell) -> String {
    match (c.base, c.variant, c.relative_change) {
        (Some(b), Some(v), _) if b == v => "No change".into(),
        (_, _, Some(r)) => format!("{r:+.1}%"),
        _ => "—".into(),
    }
}

/// One row per ablation, one column per metric.
pub fn ablation_markdown(rows: &[AblationRow], stage: &str) -> String {
    let Some(first) = rows.first() else {
        return String::new();
    };
    let titles: Vec<&str> = first.cells.iter().map(|c| metric_title(&c.metric)).collect();
    let mut out = format!(
        "| ablation | {} |\n|---|{}\n",
        titles.join(" | "),
        "---|".repeat(titles.len())
    );
    for row in rows {
        let cells: Vec<String> = row.cells.iter().map(change_cell).collect();
        out.push_str(&format!("| {} | {} |\n", row.ablation, cells.join(" | ")));
    }
    out.push_str(&format!("\nRelative change of the {stage} mean against the base run.\n"));
    out
}
