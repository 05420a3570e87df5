//! Subcommand implementations behind the `fuse` binary.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::baselines::{run_method, Method};
use crate::config::RunConfig;
use crate::dataset::{load_dataset, write_dataset, Batch, ScoreBlock};
use crate::ensemble::{fit_fuse, Fallback, FuseFit, SelectionResult};
use crate::error::{FuseError, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::synth::{generate, SynthSpec};

/// Runs `f` on a pool of `workers` threads (0 = one per core).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| FuseError::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Generates a synthetic dataset from a TOML spec into `out_dir`, returning
/// the manifest and records paths.
pub fn cmd_synth(spec_path: &Path, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| FuseError::io(spec_path, e))?;
    let spec: SynthSpec = toml::from_str(&text).map_err(|e| FuseError::Config(e.to_string()))?;
    synth_to_dir(&spec, out_dir)
}

pub fn synth_to_dir(spec: &SynthSpec, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let out = generate(spec)?;
    std::fs::create_dir_all(out_dir).map_err(|e| FuseError::io(out_dir, e))?;
    let manifest = out_dir.join("manifest.toml");
    let records = out_dir.join("records.jsonl");
    write_dataset(&out.batch, &manifest, &records)?;
    Ok((manifest, records))
}

pub fn load_configured(cfg: &RunConfig) -> Result<Batch> {
    let manifest = RunConfig::required_path(&cfg.io.manifest, "manifest")?;
    let records = RunConfig::required_path(&cfg.io.records, "records")?;
    load_dataset(manifest, records, cfg.norm_scope())
}

/// One line of a selections file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionLine {
    pub method: String,
    pub query_id: String,
    /// Response ids of the selected (tied) responses.
    pub selected: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<Fallback>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutcome {
    pub results: Vec<(Method, Vec<SelectionResult>)>,
    /// Methods that could not run, with the reason.
    pub skipped: Vec<(Method, String)>,
}

/// Runs every configured method over the dataset.
pub fn run_methods(cfg: &RunConfig, batch: &Batch) -> Result<RunOutcome> {
    let ctx = cfg.method_context();
    with_workers(cfg.workers, || {
        let mut outcome = RunOutcome::default();
        for &method in &cfg.methods {
            match run_method(method, batch, &ctx) {
                Ok(r) => outcome.results.push((method, r)),
                Err(e) => outcome.skipped.push((method, e.to_string())),
            }
        }
        outcome
    })
}

pub fn write_selections(path: &Path, batch: &Batch, outcome: &RunOutcome, emit_scores: bool) -> Result<()> {
    let file = File::create(path).map_err(|e| FuseError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (method, results) in &outcome.results {
        for (block, r) in batch.blocks.iter().zip(results) {
            let line = SelectionLine {
                method: method.to_string(),
                query_id: r.query_id.clone(),
                selected: r.selected.iter().map(|&i| block.response_ids[i].clone()).collect(),
                fallback: r.fallback,
                scores: emit_scores.then(|| r.scores.clone()),
            };
            serde_json::to_writer(&mut out, &line).expect("selection serializes");
            out.write_all(b"\n").map_err(|e| FuseError::io(path, e))?;
        }
    }
    out.flush().map_err(|e| FuseError::io(path, e))
}

/// `run`: loads the dataset, runs the methods and writes the selections file.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunOutcome> {
    let batch = load_configured(cfg)?;
    let outcome = run_methods(cfg, &batch)?;
    let path = RunConfig::required_path(&cfg.io.selections, "selections")?;
    write_selections(path, &batch, &outcome, cfg.emit_scores)?;
    Ok(outcome)
}

/// Per-query pipeline diagnostics for every block, as JSON lines.
pub fn write_diagnostics(path: &Path, cfg: &RunConfig, batch: &Batch) -> Result<()> {
    let opts = cfg.fuse_options();
    let lines = with_workers(cfg.workers, || {
        use rayon::prelude::*;
        batch
            .blocks
            .par_iter()
            .map(|b| inspect_block(b, &fit_fuse(b.norm_scores.view(), &opts)))
            .collect::<Vec<Value>>()
    })?;
    let file = File::create(path).map_err(|e| FuseError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for line in lines {
        serde_json::to_writer(&mut out, &line).expect("diagnostics serialize");
        out.write_all(b"\n").map_err(|e| FuseError::io(path, e))?;
    }
    out.flush().map_err(|e| FuseError::io(path, e))
}

pub fn read_selections(path: &Path) -> Result<Vec<SelectionLine>> {
    let file = File::open(path).map_err(|e| FuseError::io(path, e))?;
    let mut lines = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| FuseError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        lines.push(serde_json::from_str(&line).map_err(|e| FuseError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(lines)
}

/// Converts selection lines back to row-indexed results, grouped by method
/// in first-appearance order.
pub fn selections_to_results(batch: &Batch, lines: Vec<SelectionLine>) -> Result<Vec<(String, Vec<SelectionResult>)>> {
    let mut grouped: Vec<(String, Vec<SelectionResult>)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for line in lines {
        let block = batch
            .find_block(&line.query_id)
            .ok_or_else(|| FuseError::UnknownQuery(line.query_id.clone()))?;
        let rows: HashMap<&str, usize> = block
            .response_ids
            .iter()
            .enumerate()
            .map(|(i, r)| (r.as_str(), i))
            .collect();
        let selected = line
            .selected
            .iter()
            .map(|r| {
                rows.get(r.as_str()).copied().ok_or_else(|| {
                    FuseError::Shape(format!("response {r} not found in query {}", line.query_id))
                })
            })
            .collect::<Result<Vec<usize>>>()?;
        let slot = *index.entry(line.method.clone()).or_insert_with(|| {
            grouped.push((line.method.clone(), Vec::new()));
            grouped.len() - 1
        });
        grouped[slot].1.push(SelectionResult {
            query_id: line.query_id,
            selected,
            scores: line.scores.unwrap_or_default(),
            fallback: line.fallback,
            note: None,
        });
    }
    Ok(grouped)
}

/// `eval`: scores a selections file against the dataset labels and writes
/// the JSON report when a report path is configured.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let batch = load_configured(cfg)?;
    if !batch.has_labels() {
        return Err(FuseError::Unavailable {
            method: "eval".into(),
            reason: "dataset has no labels".into(),
        });
    }
    let path = RunConfig::required_path(&cfg.io.selections, "selections")?;
    let results = selections_to_results(&batch, read_selections(path)?)?;
    let report = evaluate(&batch, &results, &cfg.ks, cfg.eval_options(), &cfg.hash())?;
    if let Some(out) = &cfg.io.report {
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(out, text + "\n").map_err(|e| FuseError::io(out, e))?;
    }
    Ok(report)
}

fn histogram(values: &[f64], bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    for &v in values {
        let b = ((v * bins as f64).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
}

/// Diagnostics for one block's pipeline fit.
pub fn inspect_block(block: &ScoreBlock, fit: &Result<FuseFit>) -> Value {
    match fit {
        Ok(fit) => {
            let est = &fit.estimate;
            json!({
                "query_id": block.query_id,
                "n": block.n(),
                "fallback": false,
                "threshold_fallback": fit.thresholds.fallback,
                "thresholds": fit.thresholds.spec.tau,
                "active": fit.thresholds.spec.active,
                "tci_statistic": fit.thresholds.report.statistic,
                "tci_clip_count": fit.thresholds.report.clip_count,
                "tci_trace": fit.thresholds.trace,
                "mu": est.moments.mu.to_vec(),
                "u": est.u.to_vec(),
                "lambda3": est.scale.lambda3,
                "b_hat": est.quality.b_hat,
                "psi": est.quality.psi,
                "eta": est.quality.eta,
                "pi": est.quality.pi,
                "kept": fit.kept,
                "p_hat_histogram": histogram(&fit.pseudo.p_hat, 10),
                "weights": fit.model.weights,
                "intercept": fit.model.intercept,
                "converged": fit.model.converged,
            })
        }
        Err(err) => json!({
            "query_id": block.query_id,
            "n": block.n(),
            "fallback": true,
            "reason": err.to_string(),
        }),
    }
}

/// `inspect`: pipeline diagnostics for one query.
pub fn cmd_inspect(cfg: &RunConfig, query_id: &str) -> Result<Value> {
    let batch = load_configured(cfg)?;
    let block = batch
        .find_block(query_id)
        .ok_or_else(|| FuseError::UnknownQuery(query_id.to_string()))?;
    let fit = fit_fuse(block.norm_scores.view(), &cfg.fuse_options());
    Ok(inspect_block(block, &fit))
}

/// Exit code for an error: 2 for configuration problems, 3 for data problems.
pub fn exit_code(err: &FuseError) -> i32 {
    match err {
        FuseError::Config(_) | FuseError::Domain(_) | FuseError::Partition(_) => 2,
        _ => 3,
    }
}
