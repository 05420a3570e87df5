//! Triplet conditional independence (TCI) diagnostics and threshold search.
//!
//! Under TCI every ratio `T[j1,j2,j3] / Sigma[j1,j2]` with a fixed third index
//! equals the same constant, so the spread of those ratios measures how badly a
//! set of (transformed) verifiers violates TCI. Thresholds that binarize each
//! verifier are searched coordinate-wise to minimize that spread.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FuseError, Result};
use crate::moments::{empirical_moments, MomentSet};

pub const DEFAULT_CLIP_DELTA: f64 = 1e-3;
pub const DEFAULT_MAX_SWEEPS: usize = 10;

/// Which pairs enter the ratio collection for a given third index.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSet {
    /// Pairs `j1 < j2 < j3`, for `j3` from the third index on.
    #[default]
    Below,
    /// All pairs `j1 < j2` not containing `j3`, for every `j3`.
    ExcludeThird,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TciReport {
    pub statistic: f64,
    pub per_j3_variance: Vec<f64>,
    pub clip_count: usize,
}

/// Sum over third indices of the population variance of the ratio collection.
/// Denominators smaller than `clip_delta` in magnitude are replaced by
/// `±clip_delta` (sign kept; zero counts as positive).
pub fn tci_statistic(moments: &MomentSet, clip_delta: f64, pairs: PairSet) -> Result<TciReport> {
    let m = moments.m();
    if m < 3 {
        return Err(FuseError::InsufficientVerifiers {
            active: m,
            required: 3,
            deactivated: vec![],
        });
    }
    let mut clip_count = 0;
    let mut per_j3_variance = Vec::new();
    let mut ratios = Vec::with_capacity(m * m / 2);
    let third_indices = match pairs {
        PairSet::Below => 2..m,
        PairSet::ExcludeThird => 0..m,
    };
    for j3 in third_indices {
        ratios.clear();
        let upper = match pairs {
            PairSet::Below => j3,
            PairSet::ExcludeThird => m,
        };
        for j1 in 0..upper {
            for j2 in j1 + 1..upper {
                if j1 == j3 || j2 == j3 {
                    continue;
                }
                let (denom, clipped) = clip_denominator(moments.sigma[[j1, j2]], clip_delta);
                clip_count += usize::from(clipped);
                ratios.push(moments.tensor3[[j1, j2, j3]] / denom);
            }
        }
        per_j3_variance.push(population_variance(&ratios));
    }
    let statistic = per_j3_variance.iter().sum();
    Ok(TciReport {
        statistic,
        per_j3_variance,
        clip_count,
    })
}

fn clip_denominator(denom: f64, clip_delta: f64) -> (f64, bool) {
    if denom.abs() >= clip_delta {
        (denom, false)
    } else if denom < 0.0 {
        (-clip_delta, true)
    } else {
        (clip_delta, true)
    }
}

fn population_variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

fn sorted_distinct(column: ArrayView1<f64>) -> (Vec<f64>, Vec<f64>) {
    let mut sorted = column.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    (sorted, distinct)
}

// Threshold that splits the column just above the empirical quantile `q`
// (just below it when the quantile is the maximum).
fn split_at_quantile(sorted: &[f64], distinct: &[f64], q: f64) -> f64 {
    let idx = (q * (sorted.len() - 1) as f64).floor() as usize;
    let x = sorted[idx];
    let pos = distinct.partition_point(|&d| d < x);
    if pos + 1 < distinct.len() {
        0.5 * (distinct[pos] + distinct[pos + 1])
    } else {
        0.5 * (distinct[pos - 1] + distinct[pos])
    }
}

/// Candidate thresholds from the 5%, 10%, ..., 95% quantiles, each moved to
/// the midpoint between adjacent distinct values. Empty for a constant column.
pub fn threshold_candidates(column: ArrayView1<f64>) -> Vec<f64> {
    let (sorted, distinct) = sorted_distinct(column);
    if distinct.len() < 2 {
        return Vec::new();
    }
    let mut out: Vec<f64> = (1..20)
        .map(|k| split_at_quantile(&sorted, &distinct, k as f64 / 20.0))
        .collect();
    out.dedup();
    out
}

/// The median candidate; `None` for a constant column.
pub fn median_threshold(column: ArrayView1<f64>) -> Option<f64> {
    let (sorted, distinct) = sorted_distinct(column);
    (distinct.len() >= 2).then(|| split_at_quantile(&sorted, &distinct, 0.5))
}

/// Per-verifier thresholds plus the set of verifiers taking part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub tau: Vec<f64>,
    pub active: Vec<bool>,
}

impl TransformSpec {
    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Median thresholds; constant columns are inactive.
    pub fn medians(scores: ArrayView2<f64>) -> Self {
        let mut tau = Vec::with_capacity(scores.ncols());
        let mut active = Vec::with_capacity(scores.ncols());
        for col in scores.axis_iter(Axis(1)) {
            match median_threshold(col) {
                Some(t) => {
                    tau.push(t);
                    active.push(true);
                }
                None => {
                    tau.push(0.0);
                    active.push(false);
                }
            }
        }
        TransformSpec { tau, active }
    }
}

#[inline]
fn binarize(v: f64, tau: f64) -> f64 {
    if v >= tau {
        1.0
    } else {
        -1.0
    }
}

/// `+1` where `v >= tau` and `-1` otherwise; inactive columns are all `+1`.
pub fn apply_transform(scores: ArrayView2<f64>, spec: &TransformSpec) -> Array2<f64> {
    let mut out = Array2::from_elem(scores.dim(), 1.0);
    for j in 0..scores.ncols() {
        if !spec.active[j] {
            continue;
        }
        for (dst, &v) in out.column_mut(j).iter_mut().zip(scores.column(j)) {
            *dst = binarize(v, spec.tau[j]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdOptions {
    pub clip_delta: f64,
    pub max_sweeps: usize,
    pub pairs: PairSet,
}

impl Default for ThresholdOptions {
    fn default() -> Self {
        ThresholdOptions {
            clip_delta: DEFAULT_CLIP_DELTA,
            max_sweeps: DEFAULT_MAX_SWEEPS,
            pairs: PairSet::Below,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchTrace {
    /// Statistic at the median starting point.
    pub initial: f64,
    /// Statistic after every coordinate step, in order.
    pub steps: Vec<f64>,
    /// Statistic at the end of each full sweep.
    pub sweeps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdSearch {
    pub spec: TransformSpec,
    pub report: TciReport,
    pub trace: SearchTrace,
    /// Set when too few verifiers were active to search and medians were kept.
    pub fallback: bool,
}

fn statistic_of(binarized: ArrayView2<f64>, opts: &ThresholdOptions) -> Result<TciReport> {
    let moments = empirical_moments(binarized)?;
    tci_statistic(&moments, opts.clip_delta, opts.pairs)
}

/// TCI statistic of `scores` binarized at `tau`, over the active columns.
pub fn statistic_at(scores: ArrayView2<f64>, spec: &TransformSpec, opts: &ThresholdOptions) -> Result<TciReport> {
    let columns: Vec<usize> = (0..scores.ncols()).filter(|&j| spec.active[j]).collect();
    let binarized = apply_transform(scores, spec).select(Axis(1), &columns);
    statistic_of(binarized.view(), opts)
}

/// Coordinate descent over per-verifier candidate thresholds, starting from
/// the medians. Each step evaluates every candidate of one verifier with the
/// others held fixed and keeps the minimizer (ties go to the candidate nearest
/// the median, then to the earlier candidate).
pub fn optimize_thresholds(scores: ArrayView2<f64>, opts: &ThresholdOptions) -> Result<ThresholdSearch> {
    let m = scores.ncols();
    let mut spec = TransformSpec::medians(scores);
    let columns: Vec<usize> = (0..m).filter(|&j| spec.active[j]).collect();
    if columns.len() < 3 {
        return Err(FuseError::InsufficientVerifiers {
            active: columns.len(),
            required: 3,
            deactivated: (0..m).filter(|&j| !spec.active[j]).collect(),
        });
    }

    let sub = scores.select(Axis(1), &columns);
    let mut binarized = apply_transform(
        sub.view(),
        &TransformSpec {
            tau: columns.iter().map(|&j| spec.tau[j]).collect(),
            active: vec![true; columns.len()],
        },
    );
    let mut report = statistic_of(binarized.view(), opts)?;
    let mut trace = SearchTrace {
        initial: report.statistic,
        steps: Vec::new(),
        sweeps: Vec::new(),
    };
    if columns.len() < 4 {
        return Ok(ThresholdSearch {
            spec,
            report,
            trace,
            fallback: true,
        });
    }

    let candidates: Vec<Vec<f64>> = columns
        .iter()
        .map(|&j| threshold_candidates(scores.column(j)))
        .collect();
    let medians: Vec<f64> = columns.iter().map(|&j| spec.tau[j]).collect();

    for _ in 0..opts.max_sweeps {
        let mut changed = false;
        for (slot, &j) in columns.iter().enumerate() {
            let column = sub.column(slot);
            let evaluated: Vec<Result<TciReport>> = candidates[slot]
                .par_iter()
                .map(|&c| {
                    let mut trial = binarized.clone();
                    for (dst, &v) in trial.column_mut(slot).iter_mut().zip(column) {
                        *dst = binarize(v, c);
                    }
                    statistic_of(trial.view(), opts)
                })
                .collect();

            let mut best: Option<(usize, TciReport)> = None;
            for (idx, result) in evaluated.into_iter().enumerate() {
                let candidate_report = result?;
                let better = match &best {
                    None => true,
                    Some((best_idx, best_report)) => {
                        let (a, b) = (candidate_report.statistic, best_report.statistic);
                        a < b
                            || (a == b
                                && (candidates[slot][idx] - medians[slot]).abs()
                                    < (candidates[slot][*best_idx] - medians[slot]).abs())
                    }
                };
                if better {
                    best = Some((idx, candidate_report));
                }
            }
            let (idx, best_report) = best.expect("active columns have candidates");
            let chosen = candidates[slot][idx];
            if chosen != spec.tau[j] {
                changed = true;
                spec.tau[j] = chosen;
                for (dst, &v) in binarized.column_mut(slot).iter_mut().zip(column) {
                    *dst = binarize(v, chosen);
                }
            }
            report = best_report;
            trace.steps.push(report.statistic);
        }
        trace.sweeps.push(report.statistic);
        if !changed {
            break;
        }
    }

    Ok(ThresholdSearch {
        spec,
        report,
        trace,
        fallback: false,
    })
}
