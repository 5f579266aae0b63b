use gridid::sim::{normalized_cross_correlation, prbs_complex, prbs_generate, PrbsConfig};
use gridid::spectral::*;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn noise(seed: u64, n: usize) -> Vec<Complex64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

fn signals(r: Vec<Complex64>, i: Vec<Complex64>, v: Vec<Complex64>) -> ComplexDeviationSignals {
    ComplexDeviationSignals {
        fs: 10e3,
        current: i,
        voltage: v,
        excitation: r,
        equivalent_voltage: None,
        current_ss: Complex64::new(0.0, 0.0),
        voltage_ss: Complex64::new(0.0, 0.0),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn parseval_holds_per_segment(seed in any::<u64>(), segments in 1usize..6) {
        let n = 256 * segments;
        let x = noise(seed, n);
        let sp = estimate_cross_spectra(&signals(x.clone(), x.clone(), x.clone()), segments).unwrap();
        let total: f64 = sp.s_vv.iter().sum();
        let power = x.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
        prop_assert!((total - power).abs() <= 1e-10 * power);
    }

    #[test]
    fn coherence_is_bounded(seed in any::<u64>(), segments in 1usize..8) {
        let n = 128 * segments;
        let sp = estimate_cross_spectra(
            &signals(noise(seed, n), noise(seed ^ 1, n), noise(seed ^ 2, n)),
            segments,
        ).unwrap();
        prop_assert!(coherence(&sp).iter().all(|&c| (0.0..=1.0).contains(&c)));
    }

    #[test]
    fn iv_ratio_recovers_noise_free_transfer(seed in any::<u64>(), g_re in 0.1f64..5.0, g_im in -5.0f64..5.0) {
        let n = 1024;
        let r = noise(seed, n);
        let g = Complex64::new(g_re, g_im);
        let v = r.clone();
        let i: Vec<Complex64> = v.iter().map(|x| x * g).collect();
        let sp = estimate_cross_spectra(&signals(r, i, v), 4).unwrap();
        let ratio = iv_ratio(&sp, 1e-6).unwrap();
        for h in ratio.h.iter().flatten() {
            prop_assert!((h - g).norm() < 1e-9 * g.norm());
        }
    }
}

#[test]
fn uncorrelated_disturbance_is_removed_by_the_instrument() {
    // v = r + e with e independent of r; i = g v + y e. The instrument recovers
    // g while the ETFE is pulled towards the disturbance path.
    let n = 1 << 16;
    let r = noise(1, n);
    let e = noise(2, n);
    let g = Complex64::new(1.0, -3.0);
    let y = Complex64::new(-2.0, 0.5);
    let v: Vec<Complex64> = r.iter().zip(&e).map(|(r, e)| r + e).collect();
    let i: Vec<Complex64> = v.iter().zip(&e).map(|(v, e)| g * v + y * e).collect();
    let sp = estimate_cross_spectra(&signals(r, i, v), 256).unwrap();
    let iv = iv_ratio(&sp, 1e-6).unwrap();
    let et = etfe(&sp);
    let err = |d: &RatioData| {
        d.h.iter().flatten().map(|h| (h - g).norm()).sum::<f64>() / d.valid_count() as f64
    };
    assert!(err(&iv) < 0.25 * err(&et), "iv {} etfe {}", err(&iv), err(&et));
}

#[test]
fn default_prbs_streams_are_mutually_orthogonal() {
    let n = 1 << 16;
    let streams: Vec<Vec<f64>> = (0..5)
        .map(|k| prbs_generate(&PrbsConfig::new(k + 1, 1.0), n).unwrap())
        .collect();
    for a in 0..5 {
        for b in a + 1..5 {
            assert!(normalized_cross_correlation(&streams[a], &streams[b]) < 0.05);
        }
    }
    let z = prbs_complex(&PrbsConfig::new(3, 0.001), n).unwrap();
    assert!(z.iter().all(|z| z.re.abs() == 0.001 && z.im.abs() == 0.001));
}

#[test]
fn bin_layout_matches_fft_order() {
    let w = bin_frequencies(8, 8.0);
    let tau = 2.0 * std::f64::consts::PI;
    assert_eq!(w[0], 0.0);
    assert!((w[4] - 4.0 * tau).abs() < 1e-12);
    assert!((w[5] + 3.0 * tau).abs() < 1e-12);
    assert_eq!(segment_length(1000, 3).unwrap(), 256);
}
