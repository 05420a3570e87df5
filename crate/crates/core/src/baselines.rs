//! Comparison methods: unsupervised, semi-supervised and oracle selectors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Batch, ScoreBlock};
use crate::ensemble::{
    argmax_set, fit_logistic, run_fuse, select, Fallback, FuseOptions, Mode, SelectionResult,
};
use crate::error::{FuseError, Result};
use crate::linalg::{cholesky, cholesky_logdet, cholesky_solve};
use crate::moments::{method_of_moments, VerifierQuality};
use crate::tci::{apply_transform, TransformSpec};

/// Stable identifiers for every selection method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fuse,
    NaiveEnsemble,
    MajorityVote,
    NaiveBayes,
    Logistic,
    DawidSkene,
    Gmm,
    JciMle,
    OracleBest,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Fuse,
        Method::NaiveEnsemble,
        Method::MajorityVote,
        Method::NaiveBayes,
        Method::Logistic,
        Method::DawidSkene,
        Method::Gmm,
        Method::JciMle,
        Method::OracleBest,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Fuse => "fuse",
            Method::NaiveEnsemble => "naive_ensemble",
            Method::MajorityVote => "majority_vote",
            Method::NaiveBayes => "naive_bayes",
            Method::Logistic => "logistic",
            Method::DawidSkene => "dawid_skene",
            Method::Gmm => "gmm",
            Method::JciMle => "jci_mle",
            Method::OracleBest => "oracle_best",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = FuseError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| FuseError::Config(format!("unknown method `{s}`")))
    }
}

fn unavailable(method: Method, reason: &str) -> FuseError {
    FuseError::Unavailable {
        method: method.as_str().to_string(),
        reason: reason.to_string(),
    }
}

/// Picks the responses whose final answer is the most common one.
pub fn majority_vote(block: &ScoreBlock) -> Result<SelectionResult> {
    let keys = block
        .answer_keys
        .as_ref()
        .ok_or_else(|| unavailable(Method::MajorityVote, "responses carry no answer keys"))?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for k in keys {
        *counts.entry(k.as_str()).or_default() += 1;
    }
    let scores = keys.iter().map(|k| counts[k.as_str()] as f64).collect();
    Ok(SelectionResult::from_scores(&block.query_id, scores))
}

/// Row mean of the normalized scores.
pub fn naive_ensemble(block: &ScoreBlock) -> SelectionResult {
    let scores = block
        .norm_scores
        .mean_axis(Axis(1))
        .expect("blocks have at least one verifier")
        .to_vec();
    SelectionResult::from_scores(&block.query_id, scores)
}

/// Probability that a uniformly random size-`k` subset of `total` responses
/// contains at least one of the `correct` ones.
pub fn pass_at_k(correct: usize, total: usize, k: usize) -> Result<f64> {
    if k == 0 || k > total || correct > total {
        return Err(FuseError::Domain(format!(
            "pass@k needs 1 <= k <= N and c <= N (k={k}, N={total}, c={correct})"
        )));
    }
    if total - correct < k {
        return Ok(1.0);
    }
    let miss: f64 = ((total - correct + 1)..=total).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - miss)
}

pub const DEFAULT_LABELED_FRACTION: f64 = 0.05;

/// Queries whose labels the semi-supervised baselines may see.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledSplit {
    pub train_query_ids: BTreeSet<String>,
    pub fraction: f64,
}

impl LabeledSplit {
    /// Draws `max(1, round(fraction * Q))` labeled queries with a seeded shuffle.
    pub fn choose(batch: &Batch, fraction: f64, seed: u64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(FuseError::Config(format!("labeled fraction must be in (0, 1], got {fraction}")));
        }
        let q = batch.blocks.len();
        let count = ((fraction * q as f64).round() as usize).clamp(1, q);
        let mut order: Vec<usize> = (0..q).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let train_query_ids = order[..count]
            .iter()
            .map(|&b| batch.blocks[b].query_id.clone())
            .collect();
        Ok(LabeledSplit {
            train_query_ids,
            fraction,
        })
    }

    fn labeled_blocks<'a>(&self, batch: &'a Batch, method: Method) -> Result<Vec<&'a ScoreBlock>> {
        let blocks: Vec<&ScoreBlock> = batch
            .blocks
            .iter()
            .filter(|b| self.train_query_ids.contains(&b.query_id))
            .collect();
        if blocks.is_empty() {
            return Err(unavailable(method, "no labeled queries"));
        }
        if blocks.iter().any(|b| b.labels.is_none()) {
            return Err(unavailable(method, "a training query has no labels"));
        }
        Ok(blocks)
    }
}

/// `{±1}` verdicts: each column's top half (at the median split) maps to `+1`.
pub fn median_binarize(scores: ArrayView2<f64>) -> Array2<f64> {
    apply_transform(scores, &TransformSpec::medians(scores))
}

/// Label-trained naive Bayes over median-binarized verdicts. Returns a
/// selection for every query, training ones included.
pub fn naive_bayes(batch: &Batch, split: &LabeledSplit) -> Result<Vec<SelectionResult>> {
    let train = split.labeled_blocks(batch, Method::NaiveBayes)?;
    let m = batch.m();
    // counts[y][j]: rows with verdict +1, y = 0 for correct
    let mut plus = [vec![0usize; m], vec![0usize; m]];
    let mut totals = [0usize; 2];
    for block in &train {
        let verdicts = median_binarize(block.norm_scores.view());
        for (row, &y) in verdicts.rows().into_iter().zip(block.labels.as_ref().unwrap()) {
            let c = usize::from(y < 0);
            totals[c] += 1;
            for j in 0..m {
                plus[c][j] += usize::from(row[j] > 0.0);
            }
        }
    }
    let n = (totals[0] + totals[1]) as f64;
    let prior = ((totals[0] as f64 + 1.0) / (n + 2.0)).ln() - ((totals[1] as f64 + 1.0) / (n + 2.0)).ln();
    let p_plus = |c: usize, j: usize| (plus[c][j] as f64 + 1.0) / (totals[c] as f64 + 2.0);
    let weight_plus: Vec<f64> = (0..m).map(|j| (p_plus(0, j) / p_plus(1, j)).ln()).collect();
    let weight_minus: Vec<f64> = (0..m).map(|j| ((1.0 - p_plus(0, j)) / (1.0 - p_plus(1, j))).ln()).collect();

    Ok(batch
        .blocks
        .par_iter()
        .map(|block| {
            let verdicts = median_binarize(block.norm_scores.view());
            let scores = verdicts
                .rows()
                .into_iter()
                .map(|row| {
                    prior
                        + (0..m)
                            .map(|j| if row[j] > 0.0 { weight_plus[j] } else { weight_minus[j] })
                            .sum::<f64>()
                })
                .collect();
            SelectionResult::from_scores(&block.query_id, scores)
        })
        .collect())
}

/// Ridge logistic regression on the normalized scores of the labeled queries.
pub fn supervised_logistic(batch: &Batch, split: &LabeledSplit, reg: f64) -> Result<Vec<SelectionResult>> {
    let train = split.labeled_blocks(batch, Method::Logistic)?;
    let views: Vec<ArrayView2<f64>> = train.iter().map(|b| b.norm_scores.view()).collect();
    let x = concatenate(Axis(0), &views).map_err(|e| FuseError::Shape(e.to_string()))?;
    let y: Vec<f64> = train
        .iter()
        .flat_map(|b| b.labels.as_ref().unwrap().iter().map(|&l| f64::from(l)))
        .collect();
    if y.iter().all(|&v| v > 0.0) || y.iter().all(|&v| v < 0.0) {
        return Err(FuseError::DegenerateFit("training labels contain a single class".into()));
    }
    let model = fit_logistic(x.view(), &y, &vec![1.0; y.len()], reg, &vec![true; batch.m()])?;
    Ok(batch.blocks.par_iter().map(|b| select(&model, b)).collect())
}

const EM_MAX_ITER: usize = 200;
const EM_TOL: f64 = 1e-8;
const PROB_CLIP: f64 = 1e-12;

/// Two-coin Dawid–Skene fit on `{±1}` verdicts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DawidSkeneFit {
    /// `P(y = +1 | row)`
    pub posterior: Vec<f64>,
    /// Log-odds of `y = +1`, used for ranking.
    pub log_odds: Vec<f64>,
    pub psi: Vec<f64>,
    pub eta: Vec<f64>,
    pub prior: f64,
    /// Observed-data log-likelihood after every M-step.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
}

fn majority_signs(verdicts: ArrayView2<f64>) -> Vec<f64> {
    verdicts
        .rows()
        .into_iter()
        .map(|row| {
            let s: f64 = row.sum();
            if s > 0.0 {
                1.0
            } else if s < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect()
}

pub fn dawid_skene_fit(verdicts: ArrayView2<f64>) -> DawidSkeneFit {
    let (n, m) = verdicts.dim();
    let majority = majority_signs(verdicts);
    let mut q: Vec<f64> = majority.iter().map(|&s| (1.0 + s) / 2.0).collect();
    let mut psi = vec![0.5; m];
    let mut eta = vec![0.5; m];
    let mut prior = 0.5;
    let mut log_odds = vec![0.0; n];
    let mut trace = Vec::new();
    let mut iterations = 0;
    let clip = |p: f64| p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);

    while iterations < EM_MAX_ITER {
        iterations += 1;
        // M-step
        let pos: f64 = q.iter().sum();
        let neg = n as f64 - pos;
        prior = clip(pos / n as f64);
        for j in 0..m {
            let (mut tp, mut tn) = (0.0, 0.0);
            for i in 0..n {
                if verdicts[[i, j]] > 0.0 {
                    tp += q[i];
                } else {
                    tn += 1.0 - q[i];
                }
            }
            psi[j] = clip(if pos > 0.0 { tp / pos } else { 0.5 });
            eta[j] = clip(if neg > 0.0 { tn / neg } else { 0.5 });
        }
        // E-step
        let mut ll = 0.0;
        let mut change: f64 = 0.0;
        for i in 0..n {
            let mut lp = prior.ln();
            let mut ln = (1.0 - prior).ln();
            for j in 0..m {
                if verdicts[[i, j]] > 0.0 {
                    lp += psi[j].ln();
                    ln += (1.0 - eta[j]).ln();
                } else {
                    lp += (1.0 - psi[j]).ln();
                    ln += eta[j].ln();
                }
            }
            let hi = lp.max(ln);
            ll += hi + ((lp - hi).exp() + (ln - hi).exp()).ln();
            log_odds[i] = lp - ln;
            let next = crate::ensemble::sigmoid(log_odds[i]);
            change = change.max((next - q[i]).abs());
            q[i] = next;
        }
        trace.push(ll);
        if change < EM_TOL {
            break;
        }
    }

    // the cluster agreeing with the naive majority is the correct class
    let agreement: f64 = q.iter().zip(&majority).map(|(p, s)| (2.0 * p - 1.0) * s).sum();
    if agreement < 0.0 {
        for i in 0..n {
            q[i] = 1.0 - q[i];
            log_odds[i] = -log_odds[i];
        }
        std::mem::swap(&mut psi, &mut eta);
        prior = 1.0 - prior;
    }
    DawidSkeneFit {
        posterior: q,
        log_odds,
        psi,
        eta,
        prior,
        log_likelihood: trace,
        iterations,
    }
}

fn stacked_verdicts(batch: &Batch) -> Array2<f64> {
    let parts: Vec<Array2<f64>> = batch
        .blocks
        .iter()
        .map(|b| median_binarize(b.norm_scores.view()))
        .collect();
    let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| p.view()).collect();
    concatenate(Axis(0), &views).expect("blocks share a manifest")
}

/// Dawid–Skene on median-binarized verdicts, fitted per query or once on the
/// stacked batch.
pub fn dawid_skene(batch: &Batch, mode: Mode) -> Vec<SelectionResult> {
    match mode {
        Mode::Query => batch
            .blocks
            .par_iter()
            .map(|b| {
                let fit = dawid_skene_fit(median_binarize(b.norm_scores.view()).view());
                SelectionResult::from_scores(&b.query_id, fit.log_odds)
            })
            .collect(),
        Mode::Batched => {
            let fit = dawid_skene_fit(stacked_verdicts(batch).view());
            per_block(batch, &fit.log_odds)
        }
    }
}

fn per_block(batch: &Batch, stacked: &[f64]) -> Vec<SelectionResult> {
    batch
        .blocks
        .iter()
        .enumerate()
        .map(|(b, block)| SelectionResult::from_scores(&block.query_id, stacked[batch.block_range(b)].to_vec()))
        .collect()
}

const GMM_RIDGE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GmmFit {
    /// Log-odds of the "correct" component per row.
    pub log_odds: Vec<f64>,
    /// Responsibility of the "correct" component.
    pub responsibility: Vec<f64>,
    pub means: [Vec<f64>; 2],
    pub weights: [f64; 2],
    /// Penalized log-likelihood after every M-step.
    pub log_likelihood: Vec<f64>,
    /// Set when a covariance had to be replaced by its diagonal.
    pub diagonal_fallback: bool,
    pub iterations: usize,
}

struct Component {
    weight: f64,
    mean: Array1<f64>,
    chol: Array2<f64>,
}

impl Component {
    fn log_density(&self, x: ndarray::ArrayView1<f64>) -> f64 {
        let d = x.len() as f64;
        let diff = &x - &self.mean;
        let sol = cholesky_solve(self.chol.view(), diff.view());
        -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + cholesky_logdet(self.chol.view()) + diff.dot(&sol))
    }

    /// `tr(Sigma^{-1})`
    fn inverse_trace(&self) -> f64 {
        let d = self.mean.len();
        (0..d)
            .map(|k| {
                let mut e = Array1::zeros(d);
                e[k] = 1.0;
                cholesky_solve(self.chol.view(), e.view())[k]
            })
            .sum()
    }
}

/// Two-component full-covariance Gaussian mixture. Each covariance is the
/// weighted scatter plus `rho / n_c` times the identity, the MAP update under
/// an inverse-trace penalty, so the penalized likelihood cannot decrease.
pub fn gmm_fit(scores: ArrayView2<f64>) -> GmmFit {
    let (n, d) = scores.dim();
    let rho = GMM_RIDGE * n as f64 / 2.0;
    let row_mean: Vec<f64> = scores.rows().into_iter().map(|r| r.mean().unwrap_or(0.0)).collect();
    let mut sorted = row_mean.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let mut resp: Vec<f64> = row_mean.iter().map(|&v| if v > median { 1.0 } else { 0.0 }).collect();
    let high = resp.iter().filter(|&&r| r > 0.0).count();
    if high == 0 || high == n {
        resp = (0..n).map(|i| if i < n / 2 { 1.0 } else { 0.0 }).collect();
    }

    let mut diagonal_fallback = false;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut components: Vec<Component> = Vec::new();
    let mut log_odds = vec![0.0; n];
    loop {
        iterations += 1;
        components.clear();
        for c in 0..2 {
            let r: Vec<f64> = resp.iter().map(|&p| if c == 0 { p } else { 1.0 - p }).collect();
            let n_c: f64 = r.iter().sum::<f64>().max(1e-12);
            let mut mean = Array1::<f64>::zeros(d);
            for i in 0..n {
                mean.scaled_add(r[i], &scores.row(i));
            }
            mean /= n_c;
            let mut cov = Array2::<f64>::zeros((d, d));
            for i in 0..n {
                let diff = &scores.row(i) - &mean;
                for a in 0..d {
                    for b in 0..d {
                        cov[[a, b]] += r[i] * diff[a] * diff[b];
                    }
                }
            }
            cov /= n_c;
            for a in 0..d {
                cov[[a, a]] += rho / n_c;
            }
            let chol = match cholesky(cov.view()) {
                Some(l) => l,
                None => {
                    diagonal_fallback = true;
                    let diag = Array2::from_diag(&cov.diag().mapv(|v| v.max(rho / n_c)));
                    cholesky(diag.view()).expect("positive diagonal")
                }
            };
            components.push(Component {
                weight: (n_c / n as f64).clamp(PROB_CLIP, 1.0 - PROB_CLIP),
                mean,
                chol,
            });
        }

        let mut ll = 0.0;
        let mut change: f64 = 0.0;
        for i in 0..n {
            let x = scores.row(i);
            let l0 = components[0].weight.ln() + components[0].log_density(x);
            let l1 = components[1].weight.ln() + components[1].log_density(x);
            let hi = l0.max(l1);
            ll += hi + ((l0 - hi).exp() + (l1 - hi).exp()).ln();
            log_odds[i] = l0 - l1;
            let next = crate::ensemble::sigmoid(log_odds[i]);
            change = change.max((next - resp[i]).abs());
            resp[i] = next;
        }
        ll -= 0.5 * rho * components.iter().map(Component::inverse_trace).sum::<f64>();
        trace.push(ll);
        if change < EM_TOL || iterations >= EM_MAX_ITER {
            break;
        }
    }

    // component 0 is "correct" unless component 1 has the higher mean score
    let level = |c: &Component| c.mean.mean().unwrap_or(0.0);
    let flip = level(&components[1]) > level(&components[0]);
    if flip {
        for i in 0..n {
            resp[i] = 1.0 - resp[i];
            log_odds[i] = -log_odds[i];
        }
    }
    let (a, b) = if flip { (1, 0) } else { (0, 1) };
    GmmFit {
        log_odds,
        responsibility: resp,
        means: [components[a].mean.to_vec(), components[b].mean.to_vec()],
        weights: [components[a].weight, components[b].weight],
        log_likelihood: trace,
        diagonal_fallback,
        iterations,
    }
}

pub fn gmm_em(batch: &Batch, mode: Mode) -> Vec<SelectionResult> {
    match mode {
        Mode::Query => batch
            .blocks
            .par_iter()
            .map(|b| SelectionResult::from_scores(&b.query_id, gmm_fit(b.norm_scores.view()).log_odds))
            .collect(),
        Mode::Batched => per_block(batch, &gmm_fit(batch.concat_view.view()).log_odds),
    }
}

/// Log-likelihood-ratio scores for `y = +1` under jointly independent
/// verifiers. With `printed_form`, uses the alternative coefficients
/// `sum_j (v_j + 1) log(psi (1 - psi) / (eta (1 - eta)))` and no prior term.
pub fn jci_mle_scores(verdicts: ArrayView2<f64>, quality: &VerifierQuality, printed_form: bool) -> Vec<f64> {
    let m = verdicts.ncols();
    let clip = |p: f64| p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    let psi: Vec<f64> = quality.psi.iter().map(|&p| clip(p)).collect();
    let eta: Vec<f64> = quality.eta.iter().map(|&p| clip(p)).collect();
    let offset: Vec<f64> = (0..m)
        .map(|j| (psi[j] * (1.0 - psi[j]) / (eta[j] * (1.0 - eta[j]))).ln())
        .collect();
    let slope: Vec<f64> = if printed_form {
        offset.clone()
    } else {
        (0..m)
            .map(|j| 0.5 * (psi[j] * eta[j] / ((1.0 - psi[j]) * (1.0 - eta[j]))).ln())
            .collect()
    };
    let constant: f64 = if printed_form {
        offset.iter().sum()
    } else {
        let b = quality.b_hat;
        0.5 * offset.iter().sum::<f64>() + ((1.0 + b) / (1.0 - b)).ln()
    };
    verdicts
        .rows()
        .into_iter()
        .map(|row| constant + compensated_sum((0..m).map(|j| slope[j] * row[j])))
        .collect()
}

// Neumaier summation: rows whose terms agree up to order get identical totals.
fn compensated_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for t in terms {
        let next = sum + t;
        carry += if sum.abs() >= t.abs() {
            (sum - next) + t
        } else {
            (t - next) + sum
        };
        sum = next;
    }
    sum + carry
}

pub fn jci_mle(query_id: &str, verdicts: ArrayView2<f64>, quality: &VerifierQuality, printed_form: bool) -> SelectionResult {
    SelectionResult::from_scores(query_id, jci_mle_scores(verdicts, quality, printed_form))
}

fn jci_block(block: &ScoreBlock, verdicts: ArrayView2<f64>, quality: &Result<VerifierQuality>, printed_form: bool) -> SelectionResult {
    match quality {
        Ok(q) => jci_mle(&block.query_id, verdicts, q, printed_form),
        Err(err) => {
            let mut r = naive_ensemble(block);
            r.fallback = Some(Fallback::NaiveEnsemble);
            r.note = Some(err.to_string());
            r
        }
    }
}

fn moment_quality(verdicts: ArrayView2<f64>) -> Result<VerifierQuality> {
    let active: Vec<bool> = verdicts
        .columns()
        .into_iter()
        .map(|c| c.iter().any(|&v| v != c[0]))
        .collect();
    Ok(method_of_moments(verdicts, &active)?.quality)
}

/// The JCI pipeline end to end: median binarization, moment-estimated
/// qualities, then the likelihood-ratio score.
pub fn jci_mle_pipeline(batch: &Batch, mode: Mode, printed_form: bool) -> Vec<SelectionResult> {
    match mode {
        Mode::Query => batch
            .blocks
            .par_iter()
            .map(|b| {
                let v = median_binarize(b.norm_scores.view());
                jci_block(b, v.view(), &moment_quality(v.view()), printed_form)
            })
            .collect(),
        Mode::Batched => {
            let stacked = stacked_verdicts(batch);
            let quality = moment_quality(stacked.view());
            batch
                .blocks
                .iter()
                .enumerate()
                .map(|(b, block)| {
                    let rows = stacked.slice(ndarray::s![batch.block_range(b), ..]);
                    jci_block(block, rows, &quality, printed_form)
                })
                .collect()
        }
    }
}

/// Equal-weight vote over median-binarized verdicts.
pub fn verdict_vote(block: &ScoreBlock) -> SelectionResult {
    let v = median_binarize(block.norm_scores.view());
    SelectionResult::from_scores(&block.query_id, v.sum_axis(Axis(1)).to_vec())
}

/// Balanced accuracy of each median-binarized verifier against the true
/// labels, pooled over all blocks.
pub fn balanced_accuracies(batch: &Batch) -> Result<Vec<f64>> {
    let m = batch.m();
    let (mut tp, mut tn, mut pos, mut neg) = (vec![0usize; m], vec![0usize; m], 0usize, 0usize);
    for block in &batch.blocks {
        let labels = block
            .labels
            .as_ref()
            .ok_or_else(|| unavailable(Method::OracleBest, "labels are missing"))?;
        let v = median_binarize(block.norm_scores.view());
        for (row, &y) in v.rows().into_iter().zip(labels) {
            if y > 0 {
                pos += 1;
            } else {
                neg += 1;
            }
            for j in 0..m {
                if y > 0 && row[j] > 0.0 {
                    tp[j] += 1;
                } else if y < 0 && row[j] < 0.0 {
                    tn[j] += 1;
                }
            }
        }
    }
    let rate = |hit: usize, total: usize| if total == 0 { 0.5 } else { hit as f64 / total as f64 };
    Ok((0..m).map(|j| 0.5 * (rate(tp[j], pos) + rate(tn[j], neg))).collect())
}

/// Selects with the single verifier of highest true balanced accuracy.
pub fn oracle_best_verifier(batch: &Batch) -> Result<(usize, Vec<SelectionResult>)> {
    let acc = balanced_accuracies(batch)?;
    let best = argmax_set(&acc)[0];
    let results = batch
        .blocks
        .iter()
        .map(|b| SelectionResult::from_scores(&b.query_id, b.norm_scores.column(best).to_vec()))
        .collect();
    Ok((best, results))
}

/// Everything a method may need beyond the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodContext {
    pub fuse: FuseOptions,
    pub labeled_fraction: f64,
    pub seed: u64,
    pub printed_jci_form: bool,
}

impl Default for MethodContext {
    fn default() -> Self {
        MethodContext {
            fuse: FuseOptions::default(),
            labeled_fraction: DEFAULT_LABELED_FRACTION,
            seed: 0,
            printed_jci_form: false,
        }
    }
}

/// Runs one method over the batch, producing a selection per block.
pub fn run_method(method: Method, batch: &Batch, ctx: &MethodContext) -> Result<Vec<SelectionResult>> {
    let mode = ctx.fuse.mode;
    match method {
        Method::Fuse => Ok(run_fuse(batch, &ctx.fuse)),
        Method::NaiveEnsemble => Ok(batch.blocks.par_iter().map(naive_ensemble).collect()),
        Method::MajorityVote => batch.blocks.par_iter().map(majority_vote).collect(),
        Method::NaiveBayes => naive_bayes(batch, &LabeledSplit::choose(batch, ctx.labeled_fraction, ctx.seed)?),
        Method::Logistic => supervised_logistic(
            batch,
            &LabeledSplit::choose(batch, ctx.labeled_fraction, ctx.seed)?,
            ctx.fuse.reg,
        ),
        Method::DawidSkene => Ok(dawid_skene(batch, mode)),
        Method::Gmm => Ok(gmm_em(batch, mode)),
        Method::JciMle => Ok(jci_mle_pipeline(batch, mode, ctx.printed_jci_form)),
        Method::OracleBest => Ok(oracle_best_verifier(batch)?.1),
    }
}
