//! Label-free ensemble fitting and response selection.
//!
//! The pipeline per score matrix: search thresholds that make the binarized
//! verdicts look triplet-conditionally independent, estimate verifier quality
//! by the method of moments, drop verifiers estimated to be worse than chance,
//! average triplet posteriors into pseudo-labels, then fit a logistic model on
//! the normalized scores and pick the rows it ranks highest.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::naive_ensemble;
use crate::dataset::{Batch, ScoreBlock};
use crate::error::{FuseError, Result};
use crate::linalg::solve_spd;
use crate::moments::{method_of_moments, QualityEstimate, VerifierQuality};
use crate::posterior::{aggregate_posteriors, PseudoLabels};
use crate::tci::{apply_transform, optimize_thresholds, ThresholdOptions, ThresholdSearch};

pub const DEFAULT_REG: f64 = 1e-3;
const NEWTON_MAX_ITER: usize = 100;
const NEWTON_GRAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Every query is fitted on its own responses.
    #[default]
    Query,
    /// One fit on all responses stacked together.
    Batched,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuseOptions {
    pub mode: Mode,
    pub thresholds: ThresholdOptions,
    pub reg: f64,
}

impl Default for FuseOptions {
    fn default() -> Self {
        FuseOptions {
            mode: Mode::Query,
            thresholds: ThresholdOptions::default(),
            reg: DEFAULT_REG,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fallback {
    NaiveEnsemble,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionResult {
    pub query_id: String,
    /// Row indices of the best-scoring responses; ties are all kept.
    pub selected: Vec<usize>,
    pub scores: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback: Option<Fallback>,
    /// Why the fallback fired.
    #[serde(skip)]
    pub note: Option<String>,
}

impl SelectionResult {
    /// Selection by argmax of `scores`.
    pub fn from_scores(query_id: &str, scores: Vec<f64>) -> Self {
        let selected = argmax_set(&scores);
        SelectionResult {
            query_id: query_id.to_string(),
            selected,
            scores,
            fallback: None,
            note: None,
        }
    }
}

/// Indices attaining the maximum; NaN never wins unless every entry is NaN.
pub fn argmax_set(values: &[f64]) -> Vec<usize> {
    let best = values
        .iter()
        .copied()
        .filter(|v| !v.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if best == f64::NEG_INFINITY && values.iter().all(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
        return (0..values.len()).collect();
    }
    (0..values.len()).filter(|&i| values[i] == best).collect()
}

/// Keeps verifiers whose estimated balanced accuracy exceeds one half. When
/// fewer than three survive, the three best active ones are kept instead.
pub fn drop_verifiers(quality: &VerifierQuality, active: &[bool]) -> Vec<bool> {
    let m = quality.m();
    let mut keep: Vec<bool> = (0..m).map(|j| active[j] && quality.pi[j] > 0.5).collect();
    if keep.iter().filter(|&&k| k).count() >= 3 {
        return keep;
    }
    let mut order: Vec<usize> = (0..m).filter(|&j| active[j]).collect();
    // stable sort keeps column order among ties
    order.sort_by(|&a, &b| quality.pi[b].total_cmp(&quality.pi[a]));
    keep = vec![false; m];
    for &j in order.iter().take(3) {
        keep[j] = true;
    }
    keep
}

/// `sum_i (2 p_i - 1) * prediction_i`
pub fn estimated_accuracy(pseudo: &PseudoLabels, predictions: &[f64]) -> f64 {
    pseudo.margin.iter().zip(predictions).map(|(m, p)| m * p).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub active: Vec<bool>,
    /// False when the optimizer hit its iteration cap.
    pub converged: bool,
}

impl EnsembleModel {
    pub fn logits(&self, scores: ArrayView2<f64>) -> Array1<f64> {
        scores.dot(&ArrayView1::from(&self.weights)) + self.intercept
    }

    pub fn probabilities(&self, scores: ArrayView2<f64>) -> Array1<f64> {
        self.logits(scores).mapv(sigmoid)
    }

    /// `+1` where the logit is nonnegative, else `-1`.
    pub fn predictions(&self, scores: ArrayView2<f64>) -> Vec<f64> {
        self.logits(scores)
            .iter()
            .map(|&z| if z >= 0.0 { 1.0 } else { -1.0 })
            .collect()
    }

    pub fn estimated_accuracy(&self, scores: ArrayView2<f64>, pseudo: &PseudoLabels) -> f64 {
        estimated_accuracy(pseudo, &self.predictions(scores))
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Weighted, ridge-penalized logistic loss
/// `sum_i w_i log(1 + exp(-y_i z_i)) + reg * |weights|^2`, to be minimized.
pub fn logistic_loss(
    scores: ArrayView2<f64>,
    labels: &[f64],
    sample_weights: &[f64],
    weights: ArrayView1<f64>,
    intercept: f64,
    reg: f64,
) -> f64 {
    let z = scores.dot(&weights) + intercept;
    let data: f64 = z
        .iter()
        .zip(labels)
        .zip(sample_weights)
        .map(|((z, y), w)| w * softplus(-y * z))
        .sum();
    data + reg * weights.dot(&weights)
}

/// Minimizes [`logistic_loss`] over the active columns by damped Newton
/// steps with backtracking. Returns the best iterate even without convergence.
pub fn fit_logistic(
    scores: ArrayView2<f64>,
    labels: &[f64],
    sample_weights: &[f64],
    reg: f64,
    active: &[bool],
) -> Result<EnsembleModel> {
    let (n, m) = scores.dim();
    if labels.len() != n || sample_weights.len() != n || active.len() != m {
        return Err(FuseError::Shape("logistic fit inputs disagree in length".into()));
    }
    let cols: Vec<usize> = (0..m).filter(|&j| active[j]).collect();
    let p = cols.len() + 1;
    let mut x = Array2::<f64>::ones((n, p));
    for (c, &j) in cols.iter().enumerate() {
        x.column_mut(c).assign(&scores.column(j));
    }
    let penalty = {
        let mut d = Array1::from_elem(p, reg);
        d[p - 1] = 0.0;
        d
    };
    let loss = |theta: &Array1<f64>| -> f64 {
        let z = x.dot(theta);
        let data: f64 = (0..n).map(|i| sample_weights[i] * softplus(-labels[i] * z[i])).sum();
        data + (0..p).map(|k| penalty[k] * theta[k] * theta[k]).sum::<f64>()
    };

    let mut theta = Array1::<f64>::zeros(p);
    let mut current = loss(&theta);
    let mut converged = false;
    for _ in 0..NEWTON_MAX_ITER {
        let z = x.dot(&theta);
        let mut grad = Array1::<f64>::zeros(p);
        let mut hess = Array2::<f64>::zeros((p, p));
        for i in 0..n {
            let w = sample_weights[i];
            if w == 0.0 {
                continue;
            }
            let yz = labels[i] * z[i];
            let s = sigmoid(-yz);
            let row = x.row(i);
            grad.scaled_add(-w * labels[i] * s, &row);
            let curv = w * s * (1.0 - s);
            for a in 0..p {
                let ra = curv * row[a];
                for b in a..p {
                    hess[[a, b]] += ra * row[b];
                }
            }
        }
        for a in 0..p {
            grad[a] += 2.0 * penalty[a] * theta[a];
            hess[[a, a]] += 2.0 * penalty[a];
            for b in 0..a {
                hess[[a, b]] = hess[[b, a]];
            }
        }
        if grad.dot(&grad).sqrt() <= NEWTON_GRAD_TOL {
            converged = true;
            break;
        }
        let Some(step) = solve_spd(hess.view(), grad.view()) else {
            break;
        };
        let slope = grad.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let candidate = &theta - &(t * &step);
            let value = loss(&candidate);
            if value <= current - 1e-4 * t * slope {
                theta = candidate;
                current = value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no further decrease is representable; treat as stationary
            converged = true;
            break;
        }
    }

    let mut weights = vec![0.0; m];
    for (c, &j) in cols.iter().enumerate() {
        weights[j] = theta[c];
    }
    Ok(EnsembleModel {
        weights,
        intercept: theta[p - 1],
        active: active.to_vec(),
        converged,
    })
}

/// Fits the ensemble to pseudo-labels: targets are the margin signs and each
/// row is weighted by its margin magnitude.
pub fn fit_weighted_logistic(
    scores: ArrayView2<f64>,
    pseudo: &PseudoLabels,
    reg: f64,
    active: &[bool],
) -> Result<EnsembleModel> {
    if pseudo.margin.iter().all(|&m| m == 0.0) {
        return Err(FuseError::DegeneratePseudoLabels);
    }
    let labels: Vec<f64> = pseudo
        .margin
        .iter()
        .map(|&m| if m >= 0.0 { 1.0 } else { -1.0 })
        .collect();
    let weights: Vec<f64> = pseudo.margin.iter().map(|m| m.abs()).collect();
    fit_logistic(scores, &labels, &weights, reg, active)
}

/// Scores every row of `scores` and keeps the argmax tie set. Ranking uses
/// the logits so saturated probabilities cannot create spurious ties.
pub fn select_rows(model: &EnsembleModel, query_id: &str, scores: ArrayView2<f64>) -> SelectionResult {
    let logits = model.logits(scores);
    let selected = argmax_set(logits.as_slice().expect("contiguous"));
    SelectionResult {
        query_id: query_id.to_string(),
        selected,
        scores: logits.iter().map(|&z| sigmoid(z)).collect(),
        fallback: None,
        note: None,
    }
}

pub fn select(model: &EnsembleModel, block: &ScoreBlock) -> SelectionResult {
    select_rows(model, &block.query_id, block.norm_scores.view())
}

/// Errors unless at least one active verifier is estimated better than chance.
pub fn check_better_than_chance(quality: &VerifierQuality, active: &[bool]) -> Result<()> {
    let better = (0..quality.m()).filter(|&j| active[j] && quality.pi[j] > 0.5).count();
    if better == 0 {
        return Err(FuseError::AssumptionViolated {
            better,
            active: active.iter().filter(|&&a| a).count(),
        });
    }
    Ok(())
}

/// Every intermediate of one pipeline fit.
#[derive(Debug, Clone)]
pub struct FuseFit {
    pub thresholds: ThresholdSearch,
    pub verdicts: Array2<f64>,
    pub estimate: QualityEstimate,
    pub kept: Vec<bool>,
    pub pseudo: PseudoLabels,
    pub model: EnsembleModel,
}

/// Runs the pipeline on one normalized score matrix.
pub fn fit_fuse(scores: ArrayView2<f64>, opts: &FuseOptions) -> Result<FuseFit> {
    let thresholds = optimize_thresholds(scores, &opts.thresholds)?;
    let active = thresholds.spec.active.clone();
    let verdicts = apply_transform(scores, &thresholds.spec);
    let estimate = method_of_moments(verdicts.view(), &active)?;
    check_better_than_chance(&estimate.quality, &active)?;
    let kept = drop_verifiers(&estimate.quality, &active);
    let pseudo = aggregate_posteriors(verdicts.view(), &estimate.quality, &kept)?;
    let mut features = scores.to_owned();
    for (j, &k) in kept.iter().enumerate() {
        if !k {
            features.column_mut(j).fill(0.0);
        }
    }
    let model = fit_weighted_logistic(features.view(), &pseudo, opts.reg, &kept)?;
    Ok(FuseFit {
        thresholds,
        verdicts,
        estimate,
        kept,
        pseudo,
        model,
    })
}

fn fallback(block: &ScoreBlock, err: &FuseError) -> SelectionResult {
    let mut result = naive_ensemble(block);
    result.fallback = Some(Fallback::NaiveEnsemble);
    result.note = Some(err.to_string());
    result
}

/// Selections for every block, in block order. Failures never surface: a
/// block whose fit fails gets the naive ensemble, tagged as a fallback.
pub fn run_fuse(batch: &Batch, opts: &FuseOptions) -> Vec<SelectionResult> {
    match opts.mode {
        Mode::Query => batch
            .blocks
            .par_iter()
            .map(|block| match fit_fuse(block.norm_scores.view(), opts) {
                Ok(fit) => select(&fit.model, block),
                Err(err) => fallback(block, &err),
            })
            .collect(),
        Mode::Batched => match fit_fuse(batch.concat_view.view(), opts) {
            Ok(fit) => batch.blocks.par_iter().map(|b| select(&fit.model, b)).collect(),
            Err(err) => batch.blocks.par_iter().map(|b| fallback(b, &err)).collect(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_tci_binary, SynthSpec};
    use ndarray::array;
    use std::sync::Arc;

    fn quality_with_pi(pi: &[f64]) -> VerifierQuality {
        VerifierQuality::new(pi.to_vec(), pi.to_vec(), 0.0)
    }

    #[test]
    fn dropping_rules() {
        let q = quality_with_pi(&[0.9, 0.6, 0.45, 0.55]);
        assert_eq!(drop_verifiers(&q, &[true; 4]), vec![true, true, false, true]);
        let low = quality_with_pi(&[0.4, 0.5, 0.3, 0.45]);
        assert_eq!(drop_verifiers(&low, &[true; 4]), vec![true, true, false, true]);
        let tied = quality_with_pi(&[0.4, 0.4, 0.4, 0.4]);
        assert_eq!(drop_verifiers(&tied, &[true; 4]), vec![true, true, true, false]);
        let good = quality_with_pi(&[0.6, 0.7, 0.8]);
        assert_eq!(drop_verifiers(&good, &[true; 3]), vec![true; 3]);
        let masked = quality_with_pi(&[0.9, 0.6, 0.7, 0.8]);
        assert_eq!(drop_verifiers(&masked, &[true, false, true, true]), vec![true, false, true, true]);
    }

    #[test]
    fn estimated_accuracy_arithmetic() {
        let pl = PseudoLabels::from_probabilities(vec![1.0, 0.0, 0.5], 1);
        assert_eq!(estimated_accuracy(&pl, &[1.0, -1.0, 1.0]), 2.0);
        assert_eq!(estimated_accuracy(&pl, &[-1.0, 1.0, -1.0]), -2.0);
        let flat = PseudoLabels::from_probabilities(vec![0.5; 3], 1);
        assert_eq!(estimated_accuracy(&flat, &[1.0, -1.0, 1.0]), 0.0);
    }

    #[test]
    fn aligned_feature_gets_positive_weight() {
        let x = array![[1.0], [-1.0], [1.0], [-1.0], [1.0], [-1.0]];
        let pl = PseudoLabels::from_probabilities(vec![0.9, 0.1, 0.9, 0.1, 0.9, 0.1], 1);
        let model = fit_weighted_logistic(x.view(), &pl, 1e-3, &[true]).unwrap();
        assert!(model.converged);
        assert!(model.weights[0] > 0.0);
        assert!(model.intercept.abs() < 1e-8);
    }

    #[test]
    fn zero_margins_are_degenerate() {
        let x = array![[1.0], [-1.0]];
        let pl = PseudoLabels::from_probabilities(vec![0.5, 0.5], 1);
        assert!(matches!(
            fit_weighted_logistic(x.view(), &pl, 1e-3, &[true]),
            Err(FuseError::DegeneratePseudoLabels)
        ));
    }

    #[test]
    fn inactive_columns_have_zero_weight() {
        let x = array![[1.0, 0.3, 0.2], [-1.0, 0.1, -0.7], [0.5, -0.9, 0.4], [-0.2, 0.8, -0.1]];
        let pl = PseudoLabels::from_probabilities(vec![0.8, 0.3, 0.6, 0.45], 1);
        let model = fit_weighted_logistic(x.view(), &pl, 1e-3, &[true, false, true]).unwrap();
        assert_eq!(model.weights[1], 0.0);
    }

    #[test]
    fn selection_tie_sets() {
        assert_eq!(argmax_set(&[0.2, 0.9, 0.9]), vec![1, 2]);
        assert_eq!(argmax_set(&[0.1, 0.2, 0.3, 0.4]), vec![3]);
        assert_eq!(argmax_set(&[0.3; 4]), vec![0, 1, 2, 3]);
        assert_eq!(argmax_set(&[f64::NAN, 0.1]), vec![1]);

        let model = EnsembleModel {
            weights: vec![1.0, 0.0],
            intercept: 0.0,
            active: vec![true, true],
            converged: true,
        };
        let r = select_rows(&model, "q", array![[0.1, 5.0], [0.7, -3.0], [0.7, 0.0]].view());
        assert_eq!(r.selected, vec![1, 2]);
        assert!(r.scores.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    fn block_from(scores: Array2<f64>) -> ScoreBlock {
        let m = scores.ncols();
        let n = scores.nrows();
        let manifest = Arc::new(crate::dataset::Manifest::uniform(
            "t",
            m,
            crate::dataset::VerifierKind::Real,
        ));
        ScoreBlock::from_raw(
            manifest,
            "q0".to_string(),
            (0..n).map(|i| format!("r{i}")).collect(),
            &scores.mapv(Some),
            None,
            None,
        )
        .unwrap()
    }

    #[test]
    fn too_few_verifiers_falls_back_to_naive() {
        let scores = array![[0.1, 0.9], [0.8, 0.2], [0.5, 0.4]];
        let block = block_from(scores);
        let batch = crate::dataset::concat_batch(vec![block.clone()]).unwrap();
        let out = run_fuse(&batch, &FuseOptions::default());
        let naive = naive_ensemble(&block);
        assert_eq!(out[0].fallback, Some(Fallback::NaiveEnsemble));
        assert_eq!(out[0].selected, naive.selected);
        assert_eq!(out[0].scores, naive.scores);
    }

    #[test]
    fn no_better_than_chance_verifier_is_rejected() {
        let q = quality_with_pi(&[0.4, 0.5, 0.45]);
        assert!(matches!(
            check_better_than_chance(&q, &[true; 3]),
            Err(FuseError::AssumptionViolated { better: 0, active: 3 })
        ));
        assert!(check_better_than_chance(&quality_with_pi(&[0.4, 0.6, 0.45]), &[true; 3]).is_ok());
    }

    #[test]
    fn modes_agree_on_a_single_block() {
        let psi = vec![0.9, 0.8, 0.75, 0.7, 0.85];
        let eta = vec![0.8, 0.7, 0.8, 0.65, 0.75];
        let spec = SynthSpec::binary(5, 300, psi, eta, 0.2, 13);
        let batch = gen_tci_binary(&spec).unwrap().batch;
        let q = run_fuse(&batch, &FuseOptions::default());
        let b = run_fuse(
            &batch,
            &FuseOptions {
                mode: Mode::Batched,
                ..FuseOptions::default()
            },
        );
        assert_eq!(q, b);
    }

    #[test]
    fn pipeline_pseudo_labels_track_truth() {
        let psi = vec![0.9, 0.85, 0.8, 0.75, 0.7];
        let eta = vec![0.85, 0.8, 0.8, 0.7, 0.75];
        let spec = SynthSpec::binary(5, 3000, psi, eta, 0.1, 4);
        let batch = gen_tci_binary(&spec).unwrap().batch;
        let block = &batch.blocks[0];
        let fit = fit_fuse(block.norm_scores.view(), &FuseOptions::default()).unwrap();
        let labels = block.labels.as_ref().unwrap();
        let agree = fit
            .pseudo
            .margin
            .iter()
            .zip(labels)
            .filter(|(m, &y)| (**m >= 0.0) == (y > 0))
            .count();
        assert!(agree as f64 / labels.len() as f64 > 0.9);
        assert!(fit.model.weights.iter().all(|&w| w > 0.0));
    }
}
