//! Synthetic verifier worlds with known ground truth.
//!
//! Each response gets a label `y = +1` with probability `(1 + b) / 2`; each
//! verifier then emits a latent verdict that agrees with `y` with probability
//! `psi_j` (correct responses) or `eta_j` (incorrect ones), independently
//! across verifiers. Real-valued worlds turn a latent verdict into a score
//! drawn uniformly above (`+1`) or below (`-1`) a per-verifier threshold, so
//! binarizing at that threshold recovers the latent verdicts exactly.
//!
//! Randomness comes from ChaCha8 streams keyed by `(seed, query index)`, so a
//! query's data does not depend on how many other queries are generated or on
//! the order they are generated in.

use std::sync::Arc;

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{concat_batch, Batch, Manifest, ScoreBlock, VerifierKind};
use crate::error::{FuseError, Result};
use crate::moments::MomentSet;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    #[default]
    Binary,
    Real,
}

/// Groups of verifiers whose verdicts are tied together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dependence {
    pub groups: Vec<Vec<usize>>,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(default = "default_dataset_id")]
    pub dataset_id: String,
    pub m: usize,
    /// Responses per query.
    pub n: usize,
    #[serde(default = "one")]
    pub n_queries: usize,
    #[serde(default)]
    pub b: f64,
    /// When set, each query draws its own class imbalance uniformly from this
    /// interval instead of using `b`.
    #[serde(default)]
    pub b_range: Option<[f64; 2]>,
    pub psi: Vec<f64>,
    pub eta: Vec<f64>,
    #[serde(default)]
    pub value_kind: ValueKind,
    /// Per-verifier thresholds for real-valued worlds (default 0).
    #[serde(default)]
    pub tau_true: Option<Vec<f64>>,
    #[serde(default)]
    pub dependence: Option<Dependence>,
    /// Real-valued worlds only: probability that a verifier places its score
    /// at a position within its slab shared by every verifier on that
    /// response. Verdicts are untouched, so scores depend on each other given
    /// the label unless binarized at `tau_true`.
    #[serde(default)]
    pub shared_position: f64,
    /// Number of distinct wrong answers; when set, responses carry answer keys
    /// (all correct responses share one key).
    #[serde(default)]
    pub wrong_answers: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_dataset_id() -> String {
    "synthetic".into()
}

fn one() -> usize {
    1
}

impl SynthSpec {
    pub fn binary(m: usize, n: usize, psi: Vec<f64>, eta: Vec<f64>, b: f64, seed: u64) -> Self {
        SynthSpec {
            dataset_id: default_dataset_id(),
            m,
            n,
            n_queries: 1,
            b,
            b_range: None,
            psi,
            eta,
            value_kind: ValueKind::Binary,
            tau_true: None,
            dependence: None,
            shared_position: 0.0,
            wrong_answers: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FuseError::Config(msg));
        if self.m == 0 || self.n < 2 || self.n_queries == 0 {
            return bad(format!(
                "need m >= 1, n >= 2, n_queries >= 1 (got m={}, n={}, n_queries={})",
                self.m, self.n, self.n_queries
            ));
        }
        if self.psi.len() != self.m || self.eta.len() != self.m {
            return bad("psi and eta must have m entries".into());
        }
        if self.psi.iter().chain(&self.eta).any(|p| !(0.0..=1.0).contains(p)) {
            return bad("psi and eta must lie in [0, 1]".into());
        }
        if !(self.b.abs() < 1.0) {
            return bad(format!("class imbalance must satisfy |b| < 1, got {}", self.b));
        }
        if let Some([lo, hi]) = self.b_range {
            if !(lo <= hi && lo > -1.0 && hi < 1.0) {
                return bad(format!("b_range [{lo}, {hi}] must be an ordered sub-interval of (-1, 1)"));
            }
        }
        if let Some(tau) = &self.tau_true {
            if tau.len() != self.m {
                return bad("tau_true must have m entries".into());
            }
            if tau.iter().any(|t| !(*t > -1.0 && *t < 1.0)) {
                return Err(FuseError::Domain("tau_true entries must lie in (-1, 1)".into()));
            }
        }
        if let Some(dep) = &self.dependence {
            if !(0.0..=1.0).contains(&dep.rho) {
                return bad(format!("rho must lie in [0, 1], got {}", dep.rho));
            }
            check_partition(&dep.groups, self.m)?;
        }
        if !(0.0..=1.0).contains(&self.shared_position) {
            return bad(format!("shared_position must lie in [0, 1], got {}", self.shared_position));
        }
        if self.wrong_answers == Some(0) {
            return bad("wrong_answers must be at least 1".into());
        }
        Ok(())
    }

    fn tau(&self) -> Vec<f64> {
        self.tau_true.clone().unwrap_or_else(|| vec![0.0; self.m])
    }

    fn manifest(&self) -> Manifest {
        let kind = match self.value_kind {
            ValueKind::Binary => VerifierKind::Binary,
            ValueKind::Real => VerifierKind::Real,
        };
        Manifest::uniform(&self.dataset_id, self.m, kind)
    }
}

fn check_partition(groups: &[Vec<usize>], m: usize) -> Result<()> {
    let mut seen = vec![false; m];
    for group in groups {
        if group.is_empty() {
            return Err(FuseError::Partition("empty group".into()));
        }
        for &j in group {
            if j >= m {
                return Err(FuseError::Partition(format!("column {j} out of range (m = {m})")));
            }
            if seen[j] {
                return Err(FuseError::Partition(format!("column {j} appears in two groups")));
            }
            seen[j] = true;
        }
    }
    Ok(())
}

/// Generated data plus the hidden quantities behind it.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub batch: Batch,
    /// Per-block `{±1}` latent verdicts (after any dependence injection).
    pub latent: Vec<Array2<f64>>,
    /// Class imbalance used for each block.
    pub b_per_query: Vec<f64>,
}

const DEPENDENCE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

fn query_rng(seed: u64, query: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(query as u64);
    rng
}

#[inline]
fn channel(rng: &mut ChaCha8Rng, y: f64, psi: f64, eta: f64) -> f64 {
    let agree = if y > 0.0 { psi } else { eta };
    if rng.gen::<f64>() < agree {
        y
    } else {
        -y
    }
}

struct QueryDraw {
    labels: Vec<i8>,
    verdicts: Array2<f64>,
    b: f64,
}

fn draw_query(spec: &SynthSpec, q: usize) -> QueryDraw {
    let mut rng = query_rng(spec.seed, q);
    let b = match spec.b_range {
        Some([lo, hi]) if hi > lo => rng.gen_range(lo..hi),
        Some([lo, _]) => lo,
        None => spec.b,
    };
    let p_pos = (1.0 + b) / 2.0;
    let mut labels = Vec::with_capacity(spec.n);
    let mut verdicts = Array2::zeros((spec.n, spec.m));
    for i in 0..spec.n {
        let y = if rng.gen::<f64>() < p_pos { 1.0 } else { -1.0 };
        labels.push(y as i8);
        for j in 0..spec.m {
            verdicts[[i, j]] = channel(&mut rng, y, spec.psi[j], spec.eta[j]);
        }
    }
    QueryDraw { labels, verdicts, b }
}

/// With probability `rho`, per response and group, every member's verdict is
/// replaced by one shared draw from the first member's channel.
pub fn inject_dependence(
    verdicts: &Array2<f64>,
    labels: &[i8],
    psi: &[f64],
    eta: &[f64],
    dependence: &Dependence,
    seed: u64,
) -> Result<Array2<f64>> {
    check_partition(&dependence.groups, verdicts.ncols())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ DEPENDENCE_SALT);
    let mut out = verdicts.clone();
    for (i, &y) in labels.iter().enumerate() {
        for group in &dependence.groups {
            let tie = rng.gen::<f64>() < dependence.rho;
            let lead = group[0];
            let shared = channel(&mut rng, f64::from(y), psi[lead], eta[lead]);
            if tie {
                for &j in group {
                    out[[i, j]] = shared;
                }
            }
        }
    }
    Ok(out)
}

fn real_scores(rng: &mut ChaCha8Rng, verdicts: &Array2<f64>, tau: &[f64], shared: f64) -> Array2<f64> {
    let mut scores = Array2::zeros(verdicts.dim());
    for (i, row) in verdicts.outer_iter().enumerate() {
        let common: f64 = if shared > 0.0 { rng.gen() } else { 0.0 };
        for (j, &v) in row.iter().enumerate() {
            let u: f64 = if shared > 0.0 && rng.gen::<f64>() < shared {
                common
            } else {
                rng.gen()
            };
            let t = tau[j];
            // (t, 1] above the threshold, [-1, t) below it
            scores[[i, j]] = if v > 0.0 {
                1.0 - (1.0 - t) * u
            } else {
                -1.0 + (t + 1.0) * u
            };
        }
    }
    scores
}

fn answer_keys(rng: &mut ChaCha8Rng, labels: &[i8], wrong: usize) -> Vec<String> {
    labels
        .iter()
        .map(|&y| {
            if y > 0 {
                "A".to_string()
            } else {
                format!("W{}", rng.gen_range(0..wrong))
            }
        })
        .collect()
}

/// Generates a labeled batch from any valid spec.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let manifest = Arc::new(spec.manifest());
    let tau = spec.tau();
    let per_query: Vec<(ScoreBlock, Array2<f64>, f64)> = (0..spec.n_queries)
        .into_par_iter()
        .map(|q| {
            let draw = draw_query(spec, q);
            let verdicts = match &spec.dependence {
                Some(dep) => inject_dependence(
                    &draw.verdicts,
                    &draw.labels,
                    &spec.psi,
                    &spec.eta,
                    dep,
                    spec.seed.wrapping_add(q as u64),
                )?,
                None => draw.verdicts,
            };
            // separate stream for score noise and answer keys
            let mut aux = query_rng(spec.seed.wrapping_add(1), q + spec.n_queries);
            let scores = match spec.value_kind {
                ValueKind::Binary => verdicts.clone(),
                ValueKind::Real => real_scores(&mut aux, &verdicts, &tau, spec.shared_position),
            };
            let keys = spec.wrong_answers.map(|w| answer_keys(&mut aux, &draw.labels, w));
            let response_ids = (0..spec.n).map(|i| format!("r{i:05}")).collect();
            let block = ScoreBlock::from_raw(
                Arc::clone(&manifest),
                format!("q{q:05}"),
                response_ids,
                &scores.mapv(Some),
                Some(draw.labels),
                keys,
            )?;
            Ok((block, verdicts, draw.b))
        })
        .collect::<Result<_>>()?;

    let mut blocks = Vec::with_capacity(per_query.len());
    let mut latent = Vec::with_capacity(per_query.len());
    let mut b_per_query = Vec::with_capacity(per_query.len());
    for (block, verdicts, b) in per_query {
        blocks.push(block);
        latent.push(verdicts);
        b_per_query.push(b);
    }
    Ok(SynthOutput {
        batch: concat_batch(blocks)?,
        latent,
        b_per_query,
    })
}

/// Binary world satisfying triplet conditional independence.
pub fn gen_tci_binary(spec: &SynthSpec) -> Result<SynthOutput> {
    if spec.value_kind != ValueKind::Binary || spec.dependence.is_some() {
        return Err(FuseError::Config("gen_tci_binary needs a binary, dependence-free spec".into()));
    }
    generate(spec)
}

/// Real-valued world built on latent binary verdicts.
pub fn gen_real_valued(spec: &SynthSpec) -> Result<SynthOutput> {
    if spec.value_kind != ValueKind::Real {
        return Err(FuseError::Config("gen_real_valued needs value_kind = real".into()));
    }
    generate(spec)
}

/// Exact posterior `P(y = +1 | verdicts)` under the spec's independent
/// channels, from explicit likelihood tables over all `m` verifiers.
pub fn oracle_posterior(spec: &SynthSpec, verdicts: &[f64]) -> Result<f64> {
    if spec.dependence.is_some() {
        return Err(FuseError::UnsupportedOracle);
    }
    if verdicts.len() != spec.m {
        return Err(FuseError::Shape(format!("{} verdicts for m = {}", verdicts.len(), spec.m)));
    }
    // likelihood[label][verdict]: label 0 = correct, 1 = incorrect; verdict 0 = +1, 1 = -1
    let mut joint = [(1.0 + spec.b) / 2.0, (1.0 - spec.b) / 2.0];
    for (j, &v) in verdicts.iter().enumerate() {
        let table = [[spec.psi[j], 1.0 - spec.psi[j]], [1.0 - spec.eta[j], spec.eta[j]]];
        let col = if v > 0.0 { 0 } else { 1 };
        joint[0] *= table[0][col];
        joint[1] *= table[1][col];
    }
    Ok(joint[0] / (joint[0] + joint[1]))
}

// Raw conditional moments E[v^k | y] for k = 1, 2, 3.
fn conditional_raw_moments(spec: &SynthSpec, j: usize, y: f64, tau: f64) -> [f64; 3] {
    let p_plus = if y > 0.0 { spec.psi[j] } else { 1.0 - spec.eta[j] };
    match spec.value_kind {
        ValueKind::Binary => {
            let mean = 2.0 * p_plus - 1.0;
            [mean, 1.0, mean]
        }
        ValueKind::Real => {
            let slab = |lo: f64, hi: f64, k: i32| {
                (hi.powi(k + 1) - lo.powi(k + 1)) / ((k + 1) as f64 * (hi - lo))
            };
            let mut out = [0.0; 3];
            for (k, slot) in out.iter_mut().enumerate() {
                let k = k as i32 + 1;
                *slot = p_plus * slab(tau, 1.0, k) + (1.0 - p_plus) * slab(-1.0, tau, k);
            }
            out
        }
    }
}

/// Population moments of the generative model, computed by conditioning on
/// the label.
pub fn analytic_moments(spec: &SynthSpec) -> Result<MomentSet> {
    spec.validate()?;
    if spec.dependence.is_some() || (spec.value_kind == ValueKind::Real && spec.shared_position > 0.0) {
        return Err(FuseError::UnsupportedOracle);
    }
    let m = spec.m;
    let tau = spec.tau();
    let weights = [(1.0 + spec.b) / 2.0, (1.0 - spec.b) / 2.0];
    let labels = [1.0, -1.0];
    let raw: Vec<Vec<[f64; 3]>> = labels
        .iter()
        .map(|&y| (0..m).map(|j| conditional_raw_moments(spec, j, y, tau[j])).collect())
        .collect();
    let mu = Array1::from_shape_fn(m, |j| weights[0] * raw[0][j][0] + weights[1] * raw[1][j][0]);

    // centered conditional moments c_k(y) = E[(v - mu)^k | y]
    let centered: Vec<Vec<[f64; 3]>> = (0..2)
        .map(|y| {
            (0..m)
                .map(|j| {
                    let [e1, e2, e3] = raw[y][j];
                    let c = mu[j];
                    [e1 - c, e2 - 2.0 * c * e1 + c * c, e3 - 3.0 * c * e2 + 3.0 * c * c * e1 - c * c * c]
                })
                .collect()
        })
        .collect();

    let sigma = Array2::from_shape_fn((m, m), |(j, k)| {
        (0..2)
            .map(|y| {
                let c = &centered[y];
                let v = if j == k { c[j][1] } else { c[j][0] * c[k][0] };
                weights[y] * v
            })
            .sum()
    });
    let tensor3 = Array3::from_shape_fn((m, m, m), |(a, b, c)| {
        (0..2)
            .map(|y| {
                let cm = &centered[y];
                let v = if a == b && b == c {
                    cm[a][2]
                } else if a == b {
                    cm[a][1] * cm[c][0]
                } else if a == c {
                    cm[a][1] * cm[b][0]
                } else if b == c {
                    cm[b][1] * cm[a][0]
                } else {
                    cm[a][0] * cm[b][0] * cm[c][0]
                };
                weights[y] * v
            })
            .sum()
    });
    Ok(MomentSet {
        mu,
        sigma,
        tensor3,
        n_samples: usize::MAX,
    })
}
