//! Estimation error of the moment estimator shrinks like `1 / sqrt(N)`.

use fuse_core::moments::method_of_moments;
use fuse_core::synth::{gen_tci_binary, SynthSpec};

fn mean_error(n: usize, reps: u64) -> f64 {
    let psi = vec![0.85, 0.75, 0.8, 0.7, 0.9, 0.78];
    let eta = vec![0.7, 0.8, 0.85, 0.75, 0.72, 0.88];
    let b = 0.3;
    let mut total = 0.0;
    for seed in 0..reps {
        let spec = SynthSpec::binary(6, n, psi.clone(), eta.clone(), b, 1_000 + seed);
        let verdicts = gen_tci_binary(&spec).unwrap().latent.remove(0);
        let q = method_of_moments(verdicts.view(), &[true; 6]).unwrap().quality;
        let err: f64 = (0..6).map(|j| (q.psi[j] - psi[j]).abs() + (q.eta[j] - eta[j]).abs()).sum::<f64>()
            + (q.b_hat - b).abs();
        total += err / 13.0;
    }
    total / reps as f64
}

#[test]
fn error_decays_at_root_n_rate() {
    let sizes = [500usize, 2_000, 8_000];
    let xs: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = sizes.iter().map(|&n| mean_error(n, 60).ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 3.0, ys.iter().sum::<f64>() / 3.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((-0.65..=-0.35).contains(&slope), "log-log slope {slope}");
}
