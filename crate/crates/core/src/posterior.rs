//! Triplet posteriors and pseudo-labels.

use ndarray::ArrayView2;
use serde::Serialize;

use crate::error::{FuseError, Result};
use crate::moments::VerifierQuality;

/// Unnormalized posterior weight of label `y` given three verdicts:
/// `(1 + b y) * prod_l [1 - y v_l + v_l ((1 + y) psi_l - (1 - y) eta_l)]`.
fn kernel(y: f64, verdicts: [f64; 3], psi: [f64; 3], eta: [f64; 3], b: f64) -> f64 {
    let mut acc = 1.0 + b * y;
    for l in 0..3 {
        let v = verdicts[l];
        acc *= 1.0 - y * v + v * ((1.0 + y) * psi[l] - (1.0 - y) * eta[l]);
    }
    acc
}

/// `P(y = +1 | three verdicts)` for conditionally independent `{±1}` channels.
pub fn triplet_posterior(verdicts: [f64; 3], psi: [f64; 3], eta: [f64; 3], b: f64) -> f64 {
    let pos = kernel(1.0, verdicts, psi, eta, b);
    let neg = kernel(-1.0, verdicts, psi, eta, b);
    pos / (pos + neg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PseudoLabels {
    pub p_hat: Vec<f64>,
    /// `2 p_hat - 1`
    pub margin: Vec<f64>,
    pub n_triplets: usize,
}

impl PseudoLabels {
    pub fn from_probabilities(p_hat: Vec<f64>, n_triplets: usize) -> Self {
        let margin = p_hat.iter().map(|p| 2.0 * p - 1.0).collect();
        PseudoLabels {
            p_hat,
            margin,
            n_triplets,
        }
    }

    pub fn len(&self) -> usize {
        self.p_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_hat.is_empty()
    }
}

/// Averages the triplet posterior over all triplets of active verifiers, row
/// by row. Triplets are visited in lexicographic order.
pub fn aggregate_posteriors(
    binarized: ArrayView2<f64>,
    quality: &VerifierQuality,
    active: &[bool],
) -> Result<PseudoLabels> {
    let cols: Vec<usize> = (0..binarized.ncols()).filter(|&j| active[j]).collect();
    let k = cols.len();
    if k < 3 {
        return Err(FuseError::InsufficientVerifiers {
            active: k,
            required: 3,
            deactivated: (0..binarized.ncols()).filter(|&j| !active[j]).collect(),
        });
    }
    let mut triplets = Vec::with_capacity(k * (k - 1) * (k - 2) / 6);
    for a in 0..k {
        for b in a + 1..k {
            for c in b + 1..k {
                triplets.push([cols[a], cols[b], cols[c]]);
            }
        }
    }
    let b_hat = quality.b_hat;
    let p_hat = binarized
        .rows()
        .into_iter()
        .map(|row| {
            let total: f64 = triplets
                .iter()
                .map(|t| {
                    triplet_posterior(
                        [row[t[0]], row[t[1]], row[t[2]]],
                        [quality.psi[t[0]], quality.psi[t[1]], quality.psi[t[2]]],
                        [quality.eta[t[0]], quality.eta[t[1]], quality.eta[t[2]]],
                        b_hat,
                    )
                })
                .sum();
            total / triplets.len() as f64
        })
        .collect();
    Ok(PseudoLabels::from_probabilities(p_hat, triplets.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};

    #[test]
    fn symmetric_examples() {
        let p = triplet_posterior([1.0, 1.0, 1.0], [0.8; 3], [0.8; 3], 0.0);
        assert_abs_diff_eq!(p, 0.512 / 0.520, epsilon = 1e-14);
        let p = triplet_posterior([1.0, 1.0, -1.0], [0.8; 3], [0.8; 3], 0.0);
        assert_abs_diff_eq!(p, 0.8, epsilon = 1e-14);
        for v in [[1.0, -1.0, -1.0], [-1.0, -1.0, -1.0]] {
            assert_eq!(triplet_posterior(v, [0.5; 3], [0.5; 3], 0.0), 0.5);
        }
    }

    #[test]
    fn label_flip_symmetry() {
        let psi = [0.9, 0.62, 0.71];
        let eta = [0.55, 0.83, 0.6];
        let v = [1.0, -1.0, 1.0];
        let p = triplet_posterior(v, psi, eta, 0.3);
        let flipped = triplet_posterior([-1.0, 1.0, -1.0], eta, psi, -0.3);
        assert_abs_diff_eq!(p, 1.0 - flipped, epsilon = 1e-14);
    }

    #[test]
    fn single_triplet_mean() {
        let q = VerifierQuality::new(vec![0.9, 0.7, 0.6], vec![0.8, 0.65, 0.75], 0.2);
        let x = array![[1.0, -1.0, 1.0], [-1.0, -1.0, 1.0]];
        let pl = aggregate_posteriors(x.view(), &q, &[true; 3]).unwrap();
        assert_eq!(pl.n_triplets, 1);
        for (i, row) in x.rows().into_iter().enumerate() {
            let direct = triplet_posterior([row[0], row[1], row[2]], [0.9, 0.7, 0.6], [0.8, 0.65, 0.75], 0.2);
            assert_eq!(pl.p_hat[i], direct);
            assert_eq!(pl.margin[i], 2.0 * direct - 1.0);
        }
    }

    #[test]
    fn identical_verifiers_give_the_triplet_value() {
        let q = VerifierQuality::new(vec![0.8; 4], vec![0.7; 4], 0.1);
        let col = [1.0, -1.0, 1.0];
        let x = Array2::from_shape_fn((3, 4), |(i, _)| col[i]);
        let pl = aggregate_posteriors(x.view(), &q, &[true; 4]).unwrap();
        assert_eq!(pl.n_triplets, 4);
        for i in 0..3 {
            let single = triplet_posterior([col[i]; 3], [0.8; 3], [0.7; 3], 0.1);
            assert_abs_diff_eq!(pl.p_hat[i], single, epsilon = 1e-15);
        }
    }

    #[test]
    fn inactive_columns_are_skipped() {
        let q = VerifierQuality::new(vec![0.8; 4], vec![0.8; 4], 0.0);
        let x = array![[1.0, 1.0, 1.0, -1.0], [1.0, 1.0, -1.0, -1.0]];
        let pl = aggregate_posteriors(x.view(), &q, &[true, true, true, false]).unwrap();
        assert_eq!(pl.n_triplets, 1);
        assert_abs_diff_eq!(pl.p_hat[1], 0.8, epsilon = 1e-14);
        assert!(aggregate_posteriors(x.view(), &q, &[true, false, true, false]).is_err());
    }
}
