//! `evaluate`: per-stage metrics, trajectory tables and attribution reports.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use gier_core::attribution::{
    attribute, best_alignment, candidate_texts, gap_attribution_breakdown, rule_split,
    segment_chunks, AttributionResult, Chunk, NliScorer, Origin, PipelineSource, SegmentationMode,
};
use gier_core::corpus::{EsnliInstance, TaskInstance};
use gier_core::metrics::{aggregate, evaluate_response, format_value, instances_csv, report_json};
use gier_core::{InstanceMetricsF64, TaskKind};

use crate::stages::{
    iteration_stage, metric_title, stage_names, stage_output, task_metrics, BASELINE_GAPS,
    BASELINE_NO_GAPS,
};
use crate::store::{write_json_atomic, InstanceRecord, RunStore};

/// Contents of `reports/instances.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceTable {
    pub task: TaskKind,
    pub stages: Vec<String>,
    pub rows: Vec<StageMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: String,
    pub metrics: InstanceMetricsF64,
}

impl InstanceTable {
    pub fn stage<'a>(&'a self, stage: &'a str) -> impl Iterator<Item = &'a InstanceMetricsF64> + 'a {
        self.rows.iter().filter(move |r| r.stage == stage).map(|r| &r.metrics)
    }

    pub fn read(store: &RunStore) -> Result<Self> {
        let path = store.reports_dir().join("instances.json");
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("{} missing; run `evaluate` first", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageAttribution {
    pub instances: usize,
    pub sample_rate: f64,
    pub mean_strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub threshold: f64,
    pub segmentation: SegmentationMode,
    pub stages: IndexMap<String, StageAttribution>,
    /// Share of instances whose best-aligned source is each stage.
    pub best_alignment: IndexMap<String, f64>,
    pub best_alignment_instances: usize,
    pub final_stage: String,
    pub gap_breakdown: IndexMap<String, f64>,
    pub results: IndexMap<String, Vec<AttributionResult>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EvaluationSummary {
    pub stages_present: Vec<String>,
    pub stages_absent: Vec<String>,
    pub files: Vec<PathBuf>,
}

struct Attributor {
    scorer: Box<dyn NliScorer>,
    threshold: f64,
    mode: SegmentationMode,
    pool: bool,
}

impl Attributor {
    fn split(&self, text: &str, origin: Origin, id: &str, record: &InstanceRecord) -> Result<Vec<Chunk>> {
        if self.mode == SegmentationMode::Llm {
            if let Some(pieces) = record.segmentations.get(text) {
                return Ok(pieces.iter().map(|p| Chunk::new(p.clone(), origin.clone(), id)).collect());
            }
            log::warn!("{id}: no stored segmentation; using rule mode");
            let pieces = rule_split(text);
            if !pieces.is_empty() {
                return Ok(pieces.into_iter().map(|p| Chunk::new(p, origin.clone(), id)).collect());
            }
        }
        Ok(segment_chunks(text, origin, id, SegmentationMode::Rule, None)?)
    }

    fn run(&self, inst: &EsnliInstance, record: &InstanceRecord, stage: &str) -> Result<Option<AttributionResult>> {
        let Some((output, records)) = stage_output(record, stage, self.pool) else {
            return Ok(None);
        };
        let human = self.split(&inst.human_rationale, Origin::Human, &inst.id, record)?;
        let mut candidates = Vec::new();
        for (text, origin) in candidate_texts(output, &records) {
            if text.trim().is_empty() {
                continue;
            }
            candidates.extend(self.split(&text, origin, &inst.id, record)?);
        }
        let mut result = attribute(&human, &candidates, self.scorer.as_ref(), self.threshold)?;
        result.instance_id = inst.id.clone();
        Ok(Some(result))
    }
}

pub fn cmd_evaluate(root: &Path) -> Result<EvaluationSummary> {
    let store = RunStore::open(root)?;
    let manifest = store.read_manifest()?;
    let task = manifest.task;
    let instances = store.read_corpus(task)?;
    let gaps = store.read_gaps()?;
    let records: Vec<InstanceRecord> = store.records()?;
    let by_id: IndexMap<&str, &InstanceRecord> =
        records.iter().map(|r| (r.instance_id.as_str(), r)).collect();
    let iterations = manifest.run_config.iterations;
    let stages = stage_names(iterations);
    let options = &manifest.config.metrics;
    let attr = &manifest.config.attribution;
    let attributor = (task == TaskKind::Esnli).then(|| Attributor {
        scorer: attr.scorer.build(),
        threshold: attr.threshold,
        mode: attr.segmentation,
        pool: attr.pool_all_iterations,
    });

    let mut rows = Vec::new();
    let mut attributions: IndexMap<String, Vec<AttributionResult>> = IndexMap::new();
    for stage in &stages {
        for inst in &instances {
            let Some(record) = by_id.get(inst.id()) else { continue };
            let Some((output, _)) = stage_output(record, stage, false) else { continue };
            let mut m: InstanceMetricsF64 = evaluate_response(inst, output, options)
                .with_context(|| format!("{}: cannot evaluate stage {stage}", inst.id()))?;
            if let (Some(a), TaskInstance::Esnli(e)) = (&attributor, inst) {
                if let Some(result) = a.run(e, record, stage)? {
                    m.reasoning_attribution = Some(result.sample_rate);
                    attributions.entry(stage.clone()).or_default().push(result);
                }
            }
            rows.push(StageMetrics {
                stage: stage.clone(),
                metrics: m,
            });
        }
    }
    let present: Vec<String> = stages
        .iter()
        .filter(|s| rows.iter().any(|r| &r.stage == *s))
        .cloned()
        .collect();
    if present.is_empty() {
        bail!("run store {} has no evaluable stage", root.display());
    }
    let absent: Vec<String> = stages.iter().filter(|s| !present.contains(s)).cloned().collect();
    let table = InstanceTable {
        task,
        stages: stages.clone(),
        rows,
    };

    let mut files = Vec::new();
    let csv_rows: Vec<(Option<&str>, &InstanceMetricsF64)> = table
        .rows
        .iter()
        .map(|r| (Some(r.stage.as_str()), &r.metrics))
        .collect();
    files.push(store.write_report("instances.csv", &instances_csv(&csv_rows))?);
    let path = store.reports_dir().join("instances.json");
    write_json_atomic(&path, &table)?;
    files.push(path);

    let mut aggregates: IndexMap<String, serde_json::Value> = IndexMap::new();
    let mut means: IndexMap<String, IndexMap<&str, Option<f64>>> = IndexMap::new();
    for stage in &stages {
        let metrics: Vec<InstanceMetricsF64> = table.stage(stage).cloned().collect();
        if metrics.is_empty() {
            aggregates.insert(stage.clone(), serde_json::Value::Null);
            continue;
        }
        let report = aggregate(&metrics)?;
        means.insert(
            stage.clone(),
            task_metrics(task).iter().map(|f| (*f, report.get(f))).collect(),
        );
        aggregates.insert(stage.clone(), report_json(&report));
    }
    let path = store.reports_dir().join("aggregate.json");
    write_json_atomic(&path, &aggregates)?;
    files.push(path);

    files.push(store.write_report("trajectory.csv", &trajectory_csv(task, &stages, &means))?);
    files.push(store.write_report("trajectory.md", &trajectory_markdown(task, iterations, &means))?);

    if let Some(a) = &attributor {
        let final_stage = if iterations > 0 {
            iteration_stage(iterations)
        } else {
            BASELINE_GAPS.to_string()
        };
        let report = attribution_report(a.threshold, a.mode, &stages, &final_stage, attributions, &gaps.names());
        let path = store.reports_dir().join("attribution.json");
        write_json_atomic(&path, &report)?;
        files.push(path);
        files.push(store.write_report("attribution.md", &attribution_markdown(&report))?);
    }

    Ok(EvaluationSummary {
        stages_present: present,
        stages_absent: absent,
        files,
    })
}

fn attribution_report(
    threshold: f64,
    segmentation: SegmentationMode,
    stages: &[String],
    final_stage: &str,
    results: IndexMap<String, Vec<AttributionResult>>,
    gap_names: &[String],
) -> AttributionReport {
    let mut per_stage = IndexMap::new();
    for stage in stages {
        let Some(rs) = results.get(stage) else { continue };
        let n = rs.len() as f64;
        per_stage.insert(
            stage.clone(),
            StageAttribution {
                instances: rs.len(),
                sample_rate: rs.iter().map(|r| r.sample_rate).sum::<f64>() / n,
                mean_strength: rs.iter().map(|r| r.mean_strength).sum::<f64>() / n,
            },
        );
    }

    let source_stage = |s: PipelineSource| match s {
        PipelineSource::BaselineNoGaps => BASELINE_NO_GAPS,
        PipelineSource::GierInitial => BASELINE_GAPS,
        PipelineSource::GierFinal => final_stage,
    };
    let strength = |stage: &str, id: &str| {
        results
            .get(stage)
            .and_then(|rs| rs.iter().find(|r| r.instance_id == id))
            .map(|r| r.mean_strength)
    };
    let mut wins: IndexMap<String, usize> =
        PipelineSource::ALL.iter().map(|s| (s.as_str().to_string(), 0)).collect();
    let mut compared = 0usize;
    for r in results.get(final_stage).into_iter().flatten() {
        let per_source: Option<Vec<(PipelineSource, f64)>> = PipelineSource::ALL
            .iter()
            .map(|&s| strength(source_stage(s), &r.instance_id).map(|v| (s, v)))
            .collect();
        if let Some(ps) = per_source {
            if let Ok(best) = best_alignment(&ps) {
                compared += 1;
                *wins.get_mut(best.as_str()).expect("all sources listed") += 1;
            }
        }
    }
    let best_alignment = wins
        .into_iter()
        .map(|(k, c)| (k, if compared == 0 { 0.0 } else { c as f64 / compared as f64 }))
        .collect();
    let gap_breakdown = gap_attribution_breakdown(
        results.get(final_stage).map(Vec::as_slice).unwrap_or(&[]),
        gap_names,
    );
    AttributionReport {
        threshold,
        segmentation,
        stages: per_stage,
        best_alignment,
        best_alignment_instances: compared,
        final_stage: final_stage.to_string(),
        gap_breakdown,
        results,
    }
}

fn attribution_markdown(r: &AttributionReport) -> String {
    let mut out = String::from("| stage | instances | reasoning attribution | mean strength |\n|---|---|---|---|\n");
    for (stage, s) in &r.stages {
        out.push_str(&format!(
            "| {stage} | {} | {:.2} | {:.2} |\n",
            s.instances, s.sample_rate, s.mean_strength
        ));
    }
    out.push_str(&format!(
        "\nBest alignment over {} instances:\n\n| source | share |\n|---|---|\n",
        r.best_alignment_instances
    ));
    for (source, share) in &r.best_alignment {
        out.push_str(&format!("| {source} | {share:.2} |\n"));
    }
    out.push_str(&format!(
        "\nAttribution by origin at {}:\n\n| origin | share |\n|---|---|\n",
        r.final_stage
    ));
    for (origin, share) in &r.gap_breakdown {
        out.push_str(&format!("| {origin} | {share:.2} |\n"));
    }
    out.push_str(&format!(
        "\nA human chunk is attributed when max(entailment, contradiction) > {}.\n",
        r.threshold
    ));
    out
}

fn trajectory_csv(
    task: TaskKind,
    stages: &[String],
    means: &IndexMap<String, IndexMap<&str, Option<f64>>>,
) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["metric".to_string()];
    header.extend(stages.iter().cloned());
    w.write_record(&header).expect("in-memory write");
    for field in task_metrics(task) {
        let mut record = vec![field.to_string()];
        for stage in stages {
            record.push(
                means
                    .get(stage)
                    .and_then(|m| m.get(field).copied().flatten())
                    .map(format_value)
                    .unwrap_or_default(),
            );
        }
        w.write_record(&record).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

fn trajectory_markdown(
    task: TaskKind,
    iterations: usize,
    means: &IndexMap<String, IndexMap<&str, Option<f64>>>,
) -> String {
    let cell = |stage: &str, field: &str| {
        means
            .get(stage)
            .and_then(|m| m.get(field).copied().flatten())
            .map(|v| format!("{v:.2}"))
            .unwrap_or_else(|| "—".into())
    };
    let mut out = format!(
        "| metric | baseline w/o gaps | baseline w/ gaps | GIER iter. 1 → … → iter. {iterations} |\n|---|---|---|---|\n"
    );
    for field in task_metrics(task) {
        let chain: Vec<String> = (1..=iterations)
            .map(|k| cell(&iteration_stage(k), field))
            .collect();
        out.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            metric_title(field),
            cell(BASELINE_NO_GAPS, field),
            cell(BASELINE_GAPS, field),
            chain.join(" → ")
        ));
    }
    out
}
