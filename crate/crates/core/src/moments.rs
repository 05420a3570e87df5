//! Method-of-moments estimation of verifier quality.
//!
//! Under triplet conditional independence the off-diagonal covariances of
//! `{±1}` verdicts are `u u^T` with `u = sqrt(1 - b^2) (2 pi - 1)`, and the
//! distinct-index third central moments are `lambda3 * u (x) u (x) u` with
//! `lambda3 = -2b / sqrt(1 - b^2)`. Recovering `u` and `lambda3` from the
//! empirical tensors yields the class imbalance `b` and, together with the
//! mean vector, each verifier's sensitivity and specificity.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};
use serde::Serialize;

use crate::error::{FuseError, Result};

/// Clipping margin for sensitivities, specificities and class imbalance.
pub const QUALITY_EPS: f64 = 1e-3;

const RANK_ONE_TOL: f64 = 1e-8;
const RANK_ONE_MAX_ITER: usize = 200;
const RANK_ONE_REFINE_TOL: f64 = 1e-13;
const POWER_TOL: f64 = 1e-14;
const POWER_MAX_ITER: usize = 20_000;
const SCALE_DENOM_MIN: f64 = 1e-12;

/// Empirical (population-normalized) moments of an `N x m` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet {
    pub mu: Array1<f64>,
    pub sigma: Array2<f64>,
    pub tensor3: Array3<f64>,
    pub n_samples: usize,
}

impl MomentSet {
    pub fn m(&self) -> usize {
        self.mu.len()
    }
}

/// Mean, central second moments and central third moments with `1/N`
/// denominators. Reductions run in a fixed order over rows.
pub fn empirical_moments(scores: ArrayView2<f64>) -> Result<MomentSet> {
    let (n, m) = scores.dim();
    if n < 2 {
        return Err(FuseError::InsufficientSamples { got: n });
    }
    let inv_n = 1.0 / n as f64;
    let mu = scores.sum_axis(Axis(0)) * inv_n;
    let centered = &scores - &mu.view().insert_axis(Axis(0));

    let mut sigma = Array2::zeros((m, m));
    for j in 0..m {
        for k in j..m {
            let cj = centered.column(j);
            let ck = centered.column(k);
            let acc: f64 = cj.iter().zip(ck.iter()).map(|(a, b)| a * b).sum();
            sigma[[j, k]] = acc * inv_n;
            sigma[[k, j]] = acc * inv_n;
        }
    }

    let mut tensor3 = Array3::zeros((m, m, m));
    let mut pair = vec![0.0; n];
    for j in 0..m {
        for k in j..m {
            for (p, (a, b)) in pair
                .iter_mut()
                .zip(centered.column(j).iter().zip(centered.column(k).iter()))
            {
                *p = a * b;
            }
            for l in k..m {
                let acc: f64 = pair.iter().zip(centered.column(l).iter()).map(|(p, c)| p * c).sum();
                let v = acc * inv_n;
                for (a, b, c) in [(j, k, l), (j, l, k), (k, j, l), (k, l, j), (l, j, k), (l, k, j)] {
                    tensor3[[a, b, c]] = v;
                }
            }
        }
    }

    Ok(MomentSet {
        mu,
        sigma,
        tensor3,
        n_samples: n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankOneSolution {
    /// Rank-one factor, sign not yet resolved.
    pub u: Array1<f64>,
    pub iterations: usize,
    /// Frobenius norm of the off-diagonal residual `sigma - u u^T`.
    pub residual: f64,
}

/// Fits `sigma_jk ~ u_j u_k` on the off-diagonal entries by alternating
/// diagonal completion: fill the diagonal, take the leading eigenpair of the
/// completed matrix, reset the diagonal to `u_j^2`, repeat.
pub fn fit_rank_one_sym(sigma: ArrayView2<f64>) -> Result<RankOneSolution> {
    let m = sigma.nrows();
    if m < 3 || sigma.ncols() != m {
        return Err(FuseError::InsufficientVerifiers {
            active: m,
            required: 3,
            deactivated: vec![],
        });
    }
    let offdiag_max = |j: usize| {
        (0..m)
            .filter(|&k| k != j)
            .map(|k| sigma[[j, k]].abs())
            .fold(0.0_f64, f64::max)
    };
    if (0..m).all(|j| offdiag_max(j) < 1e-15) {
        return Err(FuseError::DegenerateSpectrum);
    }

    let mut completed = sigma.to_owned();
    for j in 0..m {
        completed[[j, j]] = offdiag_max(j);
    }

    let mut u = Array1::<f64>::zeros(m);
    let mut x = Array1::from_shape_fn(m, |j| 1.0 + 0.01 * j as f64);
    let mut step = f64::INFINITY;
    let mut iterations = 0;
    while iterations < RANK_ONE_MAX_ITER {
        iterations += 1;
        let (lambda, vec) = leading_eigenpair(completed.view(), x.view());
        if !(lambda > 0.0) {
            return Err(FuseError::DegenerateSpectrum);
        }
        x = vec;
        let mut next = x.mapv(|v| v * lambda.sqrt());
        // keep the orientation of the previous iterate so the step is meaningful
        if next.dot(&u) < 0.0 {
            next.mapv_inplace(|v| -v);
            x.mapv_inplace(|v| -v);
        }
        step = next
            .iter()
            .zip(u.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        u = next;
        for j in 0..m {
            completed[[j, j]] = u[j] * u[j];
        }
        if step < RANK_ONE_REFINE_TOL {
            break;
        }
    }
    let mut converged = step < RANK_ONE_TOL;
    if !converged {
        // completion stalls when some entries of u are tiny; finish with
        // damped Gauss-Newton on the same off-diagonal least squares
        let (polished, ok) = polish_rank_one(sigma, u);
        u = polished;
        converged = ok;
    }

    let residual = offdiag_residual(sigma, u.view());
    if !converged {
        return Err(FuseError::Convergence {
            iterations,
            residual,
        });
    }
    Ok(RankOneSolution {
        u,
        iterations,
        residual,
    })
}

const POLISH_MAX_ITER: usize = 200;

fn polish_rank_one(sigma: ArrayView2<f64>, start: Array1<f64>) -> (Array1<f64>, bool) {
    let m = start.len();
    let objective = |u: &Array1<f64>| offdiag_residual(sigma, u.view()).powi(2);
    let mut u = start;
    let mut value = objective(&u);
    let mut damping = 1e-6;
    for _ in 0..POLISH_MAX_ITER {
        let mut grad = Array1::<f64>::zeros(m);
        let mut normal = Array2::<f64>::zeros((m, m));
        for j in 0..m {
            for k in 0..m {
                if j != k {
                    let r = sigma[[j, k]] - u[j] * u[k];
                    grad[j] -= 2.0 * r * u[k];
                    normal[[j, j]] += 2.0 * u[k] * u[k];
                    normal[[j, k]] += 2.0 * u[j] * u[k];
                }
            }
        }
        let mut improved = false;
        while damping < 1e12 {
            let mut system = normal.clone();
            for j in 0..m {
                system[[j, j]] += damping * (1.0 + normal[[j, j]]);
            }
            let Some(delta) = crate::linalg::solve_spd(system.view(), grad.view()) else {
                damping *= 10.0;
                continue;
            };
            let candidate = &u - &delta;
            let next = objective(&candidate);
            if next <= value {
                let step = delta.iter().fold(0.0_f64, |a, d| a.max(d.abs()));
                u = candidate;
                value = next;
                damping = (damping / 10.0).max(1e-12);
                improved = true;
                if step < RANK_ONE_TOL * 1e-3 {
                    return (u, true);
                }
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            // no representable decrease left: stationary to working precision
            return (u, true);
        }
    }
    (u, false)
}

fn offdiag_residual(sigma: ArrayView2<f64>, u: ArrayView1<f64>) -> f64 {
    let m = u.len();
    let mut acc = 0.0;
    for j in 0..m {
        for k in 0..m {
            if j != k {
                let r = sigma[[j, k]] - u[j] * u[k];
                acc += r * r;
            }
        }
    }
    acc.sqrt()
}

/// Largest-eigenvalue eigenpair of a symmetric matrix by power iteration on a
/// Gershgorin-shifted copy (the shift makes the matrix positive semidefinite,
/// so the dominant eigenvalue is the algebraically largest one).
pub(crate) fn leading_eigenpair(a: ArrayView2<f64>, start: ArrayView1<f64>) -> (f64, Array1<f64>) {
    let m = a.nrows();
    let shift = (0..m)
        .map(|i| {
            let radius: f64 = (0..m).filter(|&j| j != i).map(|j| a[[i, j]].abs()).sum();
            radius - a[[i, i]]
        })
        .fold(0.0_f64, f64::max);

    let mut x = start.to_owned();
    let norm = x.dot(&x).sqrt();
    if norm > 0.0 {
        x /= norm;
    } else {
        x = Array1::from_elem(m, 1.0 / (m as f64).sqrt());
    }
    for _ in 0..POWER_MAX_ITER {
        let mut y = a.dot(&x);
        y.scaled_add(shift, &x);
        let norm = y.dot(&y).sqrt();
        if norm == 0.0 {
            break;
        }
        y /= norm;
        let change = y
            .iter()
            .zip(x.iter())
            .map(|(p, q)| (p - q).abs())
            .fold(0.0_f64, f64::max);
        x = y;
        if change < POWER_TOL {
            break;
        }
    }
    let lambda = x.dot(&a.dot(&x));
    (lambda, x)
}

/// Picks the sign under which strictly more entries are positive than
/// negative; on a count tie, the sign with nonnegative entry sum.
pub fn resolve_sign(u: ArrayView1<f64>) -> Result<Array1<f64>> {
    if u.iter().all(|&v| v == 0.0) {
        return Err(FuseError::Degenerate("rank-one factor is the zero vector".into()));
    }
    let pos = u.iter().filter(|&&v| v > 0.0).count();
    let neg = u.iter().filter(|&&v| v < 0.0).count();
    let flip = match pos.cmp(&neg) {
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Equal => u.sum() < 0.0,
    };
    Ok(if flip { u.mapv(|v| -v) } else { u.to_owned() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TensorScale {
    pub lambda3: f64,
    pub degenerate: bool,
}

/// Least-squares scale of `T ~ lambda3 * u (x) u (x) u` over index triples
/// `j1 < j2 < j3`.
pub fn estimate_tensor_scale(tensor3: ArrayView3<f64>, u: ArrayView1<f64>) -> TensorScale {
    let m = u.len();
    let (mut num, mut den) = (0.0, 0.0);
    for a in 0..m {
        for b in a + 1..m {
            for c in b + 1..m {
                let p = u[a] * u[b] * u[c];
                num += tensor3[[a, b, c]] * p;
                den += p * p;
            }
        }
    }
    if den < SCALE_DENOM_MIN {
        TensorScale {
            lambda3: 0.0,
            degenerate: true,
        }
    } else {
        TensorScale {
            lambda3: num / den,
            degenerate: false,
        }
    }
}

/// Inverts `t = -2b / sqrt(1 - b^2)`.
pub fn invert_class_imbalance(lambda3: f64) -> f64 {
    let b = -lambda3 / (4.0 + lambda3 * lambda3).sqrt();
    b.clamp(-1.0 + QUALITY_EPS, 1.0 - QUALITY_EPS)
}

/// Per-verifier sensitivity, specificity and balanced accuracy, plus the
/// class imbalance they were estimated with.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifierQuality {
    pub psi: Vec<f64>,
    pub eta: Vec<f64>,
    pub pi: Vec<f64>,
    pub b_hat: f64,
    /// True where psi or eta had to be clipped into `[eps, 1 - eps]`.
    pub clipped: Vec<bool>,
}

impl VerifierQuality {
    pub fn new(psi: Vec<f64>, eta: Vec<f64>, b_hat: f64) -> Self {
        let pi = psi.iter().zip(&eta).map(|(p, e)| (p + e) / 2.0).collect();
        let clipped = vec![false; psi.len()];
        VerifierQuality {
            psi,
            eta,
            pi,
            b_hat,
            clipped,
        }
    }

    pub fn m(&self) -> usize {
        self.psi.len()
    }
}

/// Sensitivities and specificities from the mean vector, the sign-resolved
/// rank-one factor and the class imbalance.
///
/// `psi = (1 + mu + u sqrt((1-b)/(1+b))) / 2`,
/// `eta = (1 - mu + u sqrt((1+b)/(1-b))) / 2`.
pub fn estimate_quality(mu: ArrayView1<f64>, u: ArrayView1<f64>, b_hat: f64) -> VerifierQuality {
    let b = b_hat.clamp(-1.0 + QUALITY_EPS, 1.0 - QUALITY_EPS);
    let pos_scale = ((1.0 - b) / (1.0 + b)).sqrt();
    let neg_scale = ((1.0 + b) / (1.0 - b)).sqrt();
    let lo = QUALITY_EPS;
    let hi = 1.0 - QUALITY_EPS;
    let mut psi = Vec::with_capacity(u.len());
    let mut eta = Vec::with_capacity(u.len());
    let mut clipped = Vec::with_capacity(u.len());
    for (&mu_j, &u_j) in mu.iter().zip(u.iter()) {
        let p = 0.5 * (1.0 + mu_j + u_j * pos_scale);
        let e = 0.5 * (1.0 - mu_j + u_j * neg_scale);
        clipped.push(!(lo..=hi).contains(&p) || !(lo..=hi).contains(&e));
        psi.push(p.clamp(lo, hi));
        eta.push(e.clamp(lo, hi));
    }
    let mut quality = VerifierQuality::new(psi, eta, b);
    quality.clipped = clipped;
    quality
}

/// Everything the moment pipeline produced for one verdict matrix.
#[derive(Debug, Clone)]
pub struct QualityEstimate {
    /// Columns of the input that took part in estimation.
    pub columns: Vec<usize>,
    pub moments: MomentSet,
    /// Sign-resolved rank-one factor, aligned with `columns`.
    pub u: Array1<f64>,
    pub scale: TensorScale,
    pub rank_one_iterations: usize,
    pub rank_one_residual: f64,
    /// Quality over all input columns; columns left out carry psi = eta = 1/2.
    pub quality: VerifierQuality,
}

/// Runs the full moment pipeline on the `active` columns of a `{±1}` (or
/// `[-1, 1]`-valued) matrix.
pub fn method_of_moments(verdicts: ArrayView2<f64>, active: &[bool]) -> Result<QualityEstimate> {
    let m = verdicts.ncols();
    let columns: Vec<usize> = (0..m).filter(|&j| active[j]).collect();
    if columns.len() < 3 {
        return Err(FuseError::InsufficientVerifiers {
            active: columns.len(),
            required: 3,
            deactivated: (0..m).filter(|&j| !active[j]).collect(),
        });
    }
    let sub = verdicts.select(Axis(1), &columns);
    let moments = empirical_moments(sub.view())?;
    let fit = fit_rank_one_sym(moments.sigma.view())?;
    let u = resolve_sign(fit.u.view())?;
    let scale = estimate_tensor_scale(moments.tensor3.view(), u.view());
    let b_hat = invert_class_imbalance(scale.lambda3);
    let partial = estimate_quality(moments.mu.view(), u.view(), b_hat);

    let mut psi = vec![0.5; m];
    let mut eta = vec![0.5; m];
    let mut clipped = vec![false; m];
    for (slot, &j) in columns.iter().enumerate() {
        psi[j] = partial.psi[slot];
        eta[j] = partial.eta[slot];
        clipped[j] = partial.clipped[slot];
    }
    let mut quality = VerifierQuality::new(psi, eta, partial.b_hat);
    quality.clipped = clipped;

    Ok(QualityEstimate {
        columns,
        moments,
        u,
        scale,
        rank_one_iterations: fit.iterations,
        rank_one_residual: fit.residual,
        quality,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn outer(u: &[f64]) -> Array2<f64> {
        Array2::from_shape_fn((u.len(), u.len()), |(j, k)| u[j] * u[k])
    }

    #[test]
    fn perfectly_correlated_columns() {
        let x = array![[1.0, 1.0], [-1.0, -1.0]];
        let mom = empirical_moments(x.view()).unwrap();
        assert_eq!(mom.mu, array![0.0, 0.0]);
        assert_eq!(mom.sigma[[0, 1]], 1.0);
    }

    #[test]
    fn symmetric_column_has_zero_skew() {
        let x = array![[1.0], [-1.0], [1.0], [-1.0]];
        let mom = empirical_moments(x.view()).unwrap();
        assert_eq!(mom.tensor3[[0, 0, 0]], 0.0);
    }

    #[test]
    fn single_row_is_rejected() {
        let x = array![[1.0, 2.0, 3.0]];
        assert!(matches!(
            empirical_moments(x.view()),
            Err(FuseError::InsufficientSamples { got: 1 })
        ));
    }

    #[test]
    fn tensor_is_permutation_symmetric() {
        let x = array![[1.0, -1.0, 1.0], [0.5, 1.0, -1.0], [-1.0, 0.2, 0.3], [0.1, 0.9, 1.0]];
        let mom = empirical_moments(x.view()).unwrap();
        assert_abs_diff_eq!(mom.tensor3[[0, 1, 2]], mom.tensor3[[2, 0, 1]]);
        assert_abs_diff_eq!(mom.tensor3[[0, 0, 2]], mom.tensor3[[2, 0, 0]]);
        // brute-force one entry
        let mu = x.mean_axis(Axis(0)).unwrap();
        let direct: f64 = x
            .rows()
            .into_iter()
            .map(|r| (r[0] - mu[0]) * (r[1] - mu[1]) * (r[2] - mu[2]))
            .sum::<f64>()
            / 4.0;
        assert_abs_diff_eq!(mom.tensor3[[1, 2, 0]], direct, epsilon = 1e-15);
    }

    #[test]
    fn rank_one_matches_triple_formula() {
        let mut sigma = Array2::<f64>::zeros((3, 3));
        for (j, k, v) in [(0, 1, 0.30), (0, 2, 0.24), (1, 2, 0.20)] {
            sigma[[j, k]] = v;
            sigma[[k, j]] = v;
        }
        let fit = fit_rank_one_sym(sigma.view()).unwrap();
        let u = resolve_sign(fit.u.view()).unwrap();
        // closed form u_1 = sqrt(s12 s13 / s23), etc.
        let closed = [
            (0.30_f64 * 0.24 / 0.20).sqrt(),
            (0.30_f64 * 0.20 / 0.24).sqrt(),
            (0.24_f64 * 0.20 / 0.30).sqrt(),
        ];
        for j in 0..3 {
            assert_abs_diff_eq!(u[j], closed[j], epsilon = 1e-8);
        }
        assert_abs_diff_eq!(u[0], 0.6, epsilon = 1e-8);
        assert_abs_diff_eq!(u[1], 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(u[2], 0.4, epsilon = 1e-8);
    }

    #[test]
    fn rank_one_exact_input() {
        let truth = [0.6, 0.5, 0.4, 0.3];
        let mut sigma = outer(&truth);
        // diagonal is ignored by the fit
        for j in 0..4 {
            sigma[[j, j]] = 1.0;
        }
        let fit = fit_rank_one_sym(sigma.view()).unwrap();
        let u = resolve_sign(fit.u.view()).unwrap();
        for j in 0..4 {
            assert_abs_diff_eq!(u[j], truth[j], epsilon = 1e-8);
        }
    }

    #[test]
    fn rank_one_with_mixed_signs() {
        let truth = [0.7, -0.2, 0.5, 0.45, 0.3];
        let fit = fit_rank_one_sym(outer(&truth).view()).unwrap();
        let u = resolve_sign(fit.u.view()).unwrap();
        for j in 0..5 {
            assert_abs_diff_eq!(u[j], truth[j], epsilon = 1e-8);
        }
    }

    #[test]
    fn zero_offdiagonal_is_degenerate() {
        let sigma = Array2::from_diag(&array![1.0, 2.0, 3.0]);
        assert!(matches!(fit_rank_one_sym(sigma.view()), Err(FuseError::DegenerateSpectrum)));
    }

    #[test]
    fn sign_resolution_rules() {
        assert_eq!(resolve_sign(array![-0.6, -0.5, 0.1].view()).unwrap(), array![0.6, 0.5, -0.1]);
        assert_eq!(resolve_sign(array![0.6, 0.5, -0.1].view()).unwrap(), array![0.6, 0.5, -0.1]);
        assert_eq!(resolve_sign(array![0.5, -0.5].view()).unwrap(), array![0.5, -0.5]);
        assert_eq!(resolve_sign(array![-0.7, 0.5].view()).unwrap(), array![0.7, -0.5]);
        assert!(resolve_sign(array![0.0, 0.0].view()).is_err());
    }

    #[test]
    fn tensor_scale_exact_and_zero() {
        let u = [0.6, 0.5, 0.4, 0.3];
        let lambda3 = -1.5;
        let t = Array3::from_shape_fn((4, 4, 4), |(a, b, c)| lambda3 * u[a] * u[b] * u[c]);
        let uv = Array1::from(u.to_vec());
        let s = estimate_tensor_scale(t.view(), uv.view());
        assert_abs_diff_eq!(s.lambda3, -1.5, epsilon = 1e-12);
        assert!(!s.degenerate);

        let zero = estimate_tensor_scale(Array3::zeros((4, 4, 4)).view(), uv.view());
        assert_eq!(zero.lambda3, 0.0);
        assert!(!zero.degenerate);
        let flagged = estimate_tensor_scale(Array3::zeros((3, 3, 3)).view(), Array1::zeros(3).view());
        assert!(flagged.degenerate);
        assert_eq!(flagged.lambda3, 0.0);
    }

    #[test]
    fn class_imbalance_inversion() {
        assert_eq!(invert_class_imbalance(0.0), 0.0);
        assert_abs_diff_eq!(invert_class_imbalance(-1.5), 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(invert_class_imbalance(1.5), -0.6, epsilon = 1e-12);
        for b in [-0.9, -0.5, 0.0, 0.5, 0.9] {
            let t = -2.0 * b / (1.0_f64 - b * b).sqrt();
            assert_abs_diff_eq!(invert_class_imbalance(t), b, epsilon = 1e-10);
        }
        assert_eq!(invert_class_imbalance(-1e9), 1.0 - QUALITY_EPS);
    }

    #[test]
    fn quality_substitution() {
        let q = estimate_quality(array![0.1].view(), array![0.6].view(), 0.0);
        assert_abs_diff_eq!(q.psi[0], 0.85, epsilon = 1e-12);
        assert_abs_diff_eq!(q.eta[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(q.pi[0], 0.8, epsilon = 1e-12);

        let q = estimate_quality(array![0.0].view(), array![0.0].view(), 0.0);
        assert_eq!((q.psi[0], q.eta[0]), (0.5, 0.5));

        let q = estimate_quality(array![0.9].view(), array![0.9].view(), 0.0);
        assert_eq!(q.psi[0], 1.0 - QUALITY_EPS);
        assert!(q.clipped[0]);
    }

    #[test]
    fn quality_inverts_forward_model_with_imbalance() {
        // forward model: mu = (1+b)/2 (2psi-1) + (1-b)/2 (1-2eta), u = sqrt(1-b^2)(psi+eta-1)
        let (psi, eta, b) = (0.83_f64, 0.64_f64, 0.45_f64);
        let mu = (1.0 + b) / 2.0 * (2.0 * psi - 1.0) + (1.0 - b) / 2.0 * (1.0 - 2.0 * eta);
        let u = (1.0 - b * b).sqrt() * (psi + eta - 1.0);
        let q = estimate_quality(array![mu].view(), array![u].view(), b);
        assert_abs_diff_eq!(q.psi[0], psi, epsilon = 1e-12);
        assert_abs_diff_eq!(q.eta[0], eta, epsilon = 1e-12);
    }

    #[test]
    fn leading_pair_prefers_largest_algebraic_eigenvalue() {
        // eigenvalues 1 and -3
        let a = array![[-1.0, 2.0], [2.0, -1.0]];
        let (lambda, x) = leading_eigenpair(a.view(), array![1.0, 0.3].view());
        assert_abs_diff_eq!(lambda, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(x[0].abs(), x[1].abs(), epsilon = 1e-8);
    }
}
