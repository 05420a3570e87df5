//! Scoring selections against ground truth.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::baselines::pass_at_k;
use crate::dataset::{Batch, ScoreBlock};
use crate::ensemble::SelectionResult;
use crate::error::{FuseError, Result};

/// Fraction of the selected (tied) responses that are correct.
pub fn tie_broken_accuracy(result: &SelectionResult, labels: &[i8]) -> Result<f64> {
    if result.selected.is_empty() {
        return Err(FuseError::Shape(format!("empty selection for query {}", result.query_id)));
    }
    let mut correct = 0usize;
    for &i in &result.selected {
        let label = labels
            .get(i)
            .ok_or_else(|| FuseError::Shape(format!("row {i} out of range for query {}", result.query_id)))?;
        correct += usize::from(*label > 0);
    }
    Ok(correct as f64 / result.selected.len() as f64)
}

/// A pass@k budget: a fixed `k` (clamped to each query's size) or all
/// responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KValue {
    Fixed(usize),
    All,
}

impl KValue {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            KValue::Fixed(k) => k.min(n),
            KValue::All => n,
        }
    }

    pub fn defaults() -> Vec<KValue> {
        vec![KValue::Fixed(1), KValue::Fixed(5), KValue::All]
    }
}

impl fmt::Display for KValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KValue::Fixed(k) => write!(f, "{k}"),
            KValue::All => f.write_str("N"),
        }
    }
}

impl std::str::FromStr for KValue {
    type Err = FuseError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "N" {
            return Ok(KValue::All);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(KValue::Fixed(k)),
            _ => Err(FuseError::Config(format!("k must be a positive integer or \"N\", got `{s}`"))),
        }
    }
}

#[derive(Deserialize, Serialize)]
#[serde(untagged)]
enum KRaw {
    Int(usize),
    Text(String),
}

impl Serialize for KValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            KValue::Fixed(k) => KRaw::Int(*k).serialize(s),
            KValue::All => KRaw::Text("N".into()).serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for KValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match KRaw::deserialize(d)? {
            KRaw::Int(k) => k.to_string().parse(),
            KRaw::Text(t) => t.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Report pass@1 as the first response's correctness instead of the
    /// mean correctness over all responses.
    pub pass1_literal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub selection_accuracy: f64,
    /// Standard error of the mean selection accuracy across queries.
    pub std_err: f64,
    pub pass_at_1: f64,
    pub pass_at_k: BTreeMap<String, f64>,
    pub fallback_rate: f64,
    pub n_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryRow {
    pub method: String,
    pub query_id: String,
    pub accuracy: f64,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub dataset_id: String,
    pub config_hash: String,
    pub methods: Vec<MethodSummary>,
    pub queries: Vec<QueryRow>,
}

fn labels_of(block: &ScoreBlock) -> Result<&[i8]> {
    block.labels.as_deref().ok_or_else(|| FuseError::Unavailable {
        method: "eval".into(),
        reason: format!("query {} has no labels", block.query_id),
    })
}

/// Scores every method's selections. Each method must cover every query.
pub fn evaluate(
    batch: &Batch,
    results: &[(String, Vec<SelectionResult>)],
    ks: &[KValue],
    opts: EvalOptions,
    config_hash: &str,
) -> Result<EvalReport> {
    let q = batch.blocks.len() as f64;
    let mut pass1 = 0.0;
    let mut pass_k: BTreeMap<String, f64> = BTreeMap::new();
    for block in &batch.blocks {
        let labels = labels_of(block)?;
        let correct = labels.iter().filter(|&&y| y > 0).count();
        pass1 += if opts.pass1_literal {
            f64::from(u8::from(labels[0] > 0))
        } else {
            correct as f64 / labels.len() as f64
        };
        for &k in ks {
            *pass_k.entry(k.to_string()).or_default() += pass_at_k(correct, labels.len(), k.resolve(labels.len()))?;
        }
    }
    pass1 /= q;
    for v in pass_k.values_mut() {
        *v /= q;
    }

    let mut methods = Vec::with_capacity(results.len());
    let mut rows = Vec::new();
    for (method, selections) in results {
        let by_query: HashMap<&str, &SelectionResult> =
            selections.iter().map(|r| (r.query_id.as_str(), r)).collect();
        let missing: Vec<String> = batch
            .blocks
            .iter()
            .filter(|b| !by_query.contains_key(b.query_id.as_str()))
            .map(|b| b.query_id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(FuseError::PartialResults {
                method: method.clone(),
                missing,
            });
        }
        let mut accs = Vec::with_capacity(batch.blocks.len());
        let mut fallbacks = 0usize;
        for block in &batch.blocks {
            let r = by_query[block.query_id.as_str()];
            let acc = tie_broken_accuracy(r, labels_of(block)?)?;
            fallbacks += usize::from(r.fallback.is_some());
            accs.push(acc);
            rows.push(QueryRow {
                method: method.clone(),
                query_id: block.query_id.clone(),
                accuracy: acc,
                fallback: r.fallback.is_some(),
            });
        }
        let mean = accs.iter().sum::<f64>() / q;
        let std_err = if accs.len() > 1 {
            let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (q - 1.0);
            (var / q).sqrt()
        } else {
            0.0
        };
        methods.push(MethodSummary {
            method: method.clone(),
            selection_accuracy: mean,
            std_err,
            pass_at_1: pass1,
            pass_at_k: pass_k.clone(),
            fallback_rate: fallbacks as f64 / q,
            n_queries: accs.len(),
        });
    }
    Ok(EvalReport {
        dataset_id: batch.manifest.dataset_id.clone(),
        config_hash: config_hash.to_string(),
        methods,
        queries: rows,
    })
}

impl EvalReport {
    /// Plain-text summary table, one line per method.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dataset: {}  config: {}", self.dataset_id, self.config_hash);
        let ks: Vec<&String> = self.methods.first().map(|m| m.pass_at_k.keys().collect()).unwrap_or_default();
        let _ = write!(out, "{:<16} {:>9} {:>8} {:>8}", "method", "accuracy", "stderr", "pass@1");
        for k in &ks {
            let _ = write!(out, " {:>8}", format!("pass@{k}"));
        }
        let _ = writeln!(out, " {:>9}", "fallback");
        for m in &self.methods {
            let _ = write!(
                out,
                "{:<16} {:>9.4} {:>8.4} {:>8.4}",
                m.method, m.selection_accuracy, m.std_err, m.pass_at_1
            );
            for k in &ks {
                let _ = write!(out, " {:>8.4}", m.pass_at_k[*k]);
            }
            let _ = writeln!(out, " {:>9.4}", m.fallback_rate);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::naive_ensemble;
    use crate::synth::{gen_tci_binary, SynthSpec};

    fn selection(selected: Vec<usize>) -> SelectionResult {
        SelectionResult {
            query_id: "q".into(),
            selected,
            scores: vec![],
            fallback: None,
            note: None,
        }
    }

    #[test]
    fn tie_broken_examples() {
        assert_eq!(tie_broken_accuracy(&selection(vec![1, 2]), &[-1, 1, -1]).unwrap(), 0.5);
        assert_eq!(tie_broken_accuracy(&selection(vec![1]), &[-1, 1, -1]).unwrap(), 1.0);
        let full = tie_broken_accuracy(&selection(vec![0, 1, 2, 3]), &[1, -1, 1, 1]).unwrap();
        assert_eq!(full, 0.75);
    }

    fn synth_batch(seed: u64) -> Batch {
        let mut spec = SynthSpec::binary(4, 12, vec![0.8, 0.7, 0.75, 0.6], vec![0.7; 4], -0.4, seed);
        spec.n_queries = 30;
        gen_tci_binary(&spec).unwrap().batch
    }

    #[test]
    fn perfect_selector_and_pass_at_n() {
        let batch = synth_batch(1);
        let perfect: Vec<SelectionResult> = batch
            .blocks
            .iter()
            .map(|b| {
                let labels = b.labels.as_ref().unwrap();
                let pick: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] > 0).collect();
                let pick = if pick.is_empty() { vec![0] } else { pick };
                SelectionResult {
                    query_id: b.query_id.clone(),
                    selected: pick,
                    scores: vec![],
                    fallback: None,
                    note: None,
                }
            })
            .collect();
        let report = evaluate(&batch, &[("perfect".into(), perfect)], &KValue::defaults(), EvalOptions::default(), "h")
            .unwrap();
        let solvable = batch
            .blocks
            .iter()
            .filter(|b| b.labels.as_ref().unwrap().iter().any(|&y| y > 0))
            .count() as f64
            / batch.blocks.len() as f64;
        let m = &report.methods[0];
        assert!((m.pass_at_k["N"] - solvable).abs() < 1e-12);
        assert!((m.selection_accuracy - solvable).abs() < 1e-12);
        assert!(m.pass_at_1 <= m.pass_at_k["5"] && m.pass_at_k["5"] <= m.pass_at_k["N"]);
    }

    #[test]
    fn missing_queries_are_reported() {
        let batch = synth_batch(2);
        let mut results: Vec<SelectionResult> = batch.blocks.iter().map(naive_ensemble).collect();
        results.truncate(28);
        let err = evaluate(&batch, &[("naive".into(), results)], &[KValue::Fixed(1)], EvalOptions::default(), "")
            .unwrap_err();
        match err {
            FuseError::PartialResults { missing, .. } => assert_eq!(missing.len(), 2),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn full_tie_selector_equals_mean_correct_fraction() {
        let batch = synth_batch(3);
        let all: Vec<SelectionResult> = batch
            .blocks
            .iter()
            .map(|b| SelectionResult {
                query_id: b.query_id.clone(),
                selected: (0..b.n()).collect(),
                scores: vec![],
                fallback: None,
                note: None,
            })
            .collect();
        let report = evaluate(&batch, &[("all".into(), all)], &[KValue::Fixed(1)], EvalOptions::default(), "").unwrap();
        let m = &report.methods[0];
        assert!((m.selection_accuracy - m.pass_at_1).abs() < 1e-12);
        assert!((m.pass_at_k["1"] - m.pass_at_1).abs() < 1e-12);
        assert!(report.to_table().contains("all"));
    }

    #[test]
    fn k_values_parse() {
        let ks: Vec<KValue> = serde_json::from_str("[1, 5, \"N\"]").unwrap();
        assert_eq!(ks, KValue::defaults());
        assert!(serde_json::from_str::<Vec<KValue>>("[0]").is_err());
        assert!(serde_json::from_str::<Vec<KValue>>("[\"M\"]").is_err());
        assert_eq!(KValue::Fixed(500).resolve(12), 12);
    }
}
