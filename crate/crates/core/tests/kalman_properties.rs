use gridid::voltage::*;
use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gauss2(rng: &mut ChaCha8Rng, std: f64) -> Vector2<f64> {
    let a: f64 = StandardNormal.sample(rng);
    let b: f64 = StandardNormal.sample(rng);
    Vector2::new(std * a, std * b)
}

fn bins(omega: &[f64], k_norm: &[f64], z: &[Vector2<f64>], r: f64) -> Vec<ResidualBin> {
    (0..z.len())
        .map(|k| ResidualBin {
            bin: k,
            omega: omega[k],
            k_norm: k_norm[k],
            z: z[k],
            r: Matrix2::identity() * r,
        })
        .collect()
}

#[test]
fn static_filter_equals_batch_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 400;
    let gamma = 14.0;
    let d_true = Vector2::new(0.6, -0.2);
    let omega: Vec<f64> = (0..n).map(|k| 50.0 + 7.5 * k as f64).collect();
    let k_norm: Vec<f64> = omega.iter().map(|w| (w / 314.159).max(1.0)).collect();
    let z: Vec<Vector2<f64>> = (0..n)
        .map(|k| -(gamma / k_norm[k]) * d_true + gauss2(&mut rng, 0.3))
        .collect();
    let res = bins(&omega, &k_norm, &z, 0.1);
    let cfg = KfConfig {
        sigma_q: 0.0,
        d0: [0.1, 0.3],
        ..KfConfig::default()
    };
    let est = kf_run(&res, gamma, &cfg).unwrap();

    // Batch posterior of a static Gaussian model including the prior.
    let p0 = Matrix2::new(cfg.p0[0][0], cfg.p0[0][1], cfg.p0[1][0], cfg.p0[1][1]);
    let mut info = p0.try_inverse().unwrap();
    let mut eta = info * Vector2::new(cfg.d0[0], cfg.d0[1]);
    for k in 0..n {
        let c = gamma / k_norm[k];
        info += Matrix2::identity() * (c * c / 0.1);
        eta += -c * z[k] / 0.1;
    }
    let batch = info.try_inverse().unwrap() * eta;
    let last = est.d[n - 1];
    assert!((last - batch).norm() <= 1e-9 * batch.norm(), "{last} vs {batch}");
    assert!((est.p[n - 1] - info.try_inverse().unwrap()).abs().max() < 1e-12);
}

fn smooth_coupling(k: usize) -> Vector2<f64> {
    let x = k as f64 / 300.0;
    Vector2::new(0.5 + 0.3 * x.sin(), -0.2 + 0.25 * (1.3 * x).cos())
}

#[test]
fn filtering_beats_naive_inversion() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 2000;
    let gamma = 20.0;
    let gamma_hat = gamma * 1.01;
    let omega: Vec<f64> = (0..n).map(|k| k as f64).collect();
    let truth: Vec<Vector2<f64>> = (0..n).map(smooth_coupling).collect();
    let z: Vec<Vector2<f64>> = truth.iter().map(|d| -gamma * d + gauss2(&mut rng, 0.1f64.sqrt())).collect();
    let est = kf_run(&bins(&omega, &vec![1.0; n], &z, 0.1), gamma_hat, &KfConfig::default()).unwrap();
    let rms = |e: &dyn Fn(usize) -> f64| ((0..n).map(|k| e(k).powi(2)).sum::<f64>() / n as f64).sqrt();
    let filtered = rms(&|k| (est.d[k] - truth[k]).norm());
    let naive = rms(&|k| (-z[k] / gamma_hat - truth[k]).norm());
    assert!(filtered <= naive, "filtered {filtered} naive {naive}");
}

#[test]
fn covariance_stays_symmetric_psd() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 10_000;
    let omega: Vec<f64> = (0..n).map(|k| k as f64 - 5000.0).collect();
    let k_norm: Vec<f64> = omega.iter().map(|w| (w.abs() / 314.0).max(1.0)).collect();
    let z: Vec<Vector2<f64>> = (0..n).map(|_| gauss2(&mut rng, 3.0)).collect();
    let res: Vec<ResidualBin> = (0..n)
        .map(|k| {
            let a: f64 = rng.random_range(0.0..1.0);
            ResidualBin {
                bin: k,
                omega: omega[k],
                k_norm: k_norm[k],
                z: z[k],
                r: Matrix2::new(0.1 + a, 0.3 * a, 0.3 * a, 0.1 + 2.0 * a),
            }
        })
        .collect();
    let est = kf_run(&res, 3.0, &KfConfig::default()).unwrap();
    for p in &est.p {
        assert!((p - p.transpose()).abs().max() == 0.0);
        let ev = SymmetricEigen::new(*p).eigenvalues;
        assert!(ev.min() >= -1e-12);
    }
}

#[test]
fn innovations_are_white_on_matched_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 4000;
    let gamma = 10.0;
    let cfg = KfConfig::default();
    let mut d = Vector2::zeros();
    let mut z = Vec::with_capacity(n);
    for _ in 0..n {
        d += gauss2(&mut rng, cfg.sigma_q.sqrt());
        z.push(-gamma * d + gauss2(&mut rng, cfg.c1.sqrt()));
    }
    let omega: Vec<f64> = (0..n).map(|k| k as f64).collect();
    let est = kf_run(&bins(&omega, &vec![1.0; n], &z, cfg.c1), gamma, &cfg).unwrap();
    let mut acc = 0.0;
    let mut count = 0.0;
    for k in 100..n {
        let l = est.innovation_cov[k].cholesky().unwrap().l();
        let w = l.solve_lower_triangular(&est.innovation[k]).unwrap();
        acc += w.norm_squared();
        count += 2.0;
    }
    let var = acc / count;
    assert!((0.5..=2.0).contains(&var), "normalized innovation variance {var}");
}

#[test]
fn negative_frequencies_form_their_own_sweep() {
    let omega = vec![-2.0, -1.0, 0.0, 1.0, 2.0];
    let z = vec![
        Vector2::new(1.0, 0.0),
        Vector2::new(1.0, 0.0),
        Vector2::zeros(),
        Vector2::zeros(),
        Vector2::zeros(),
    ];
    let est = kf_run(&bins(&omega, &[1.0; 5], &z, 0.1), 2.0, &KfConfig::default()).unwrap();
    for k in 2..5 {
        assert_eq!(est.d[k], Vector2::zeros());
    }
    // The -1 bin is processed before the -2 bin.
    assert!(est.p[0][(0, 0)] < est.p[1][(0, 0)]);
}
