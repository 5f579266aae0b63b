//! Small-signal spectra of complex (d + jq) PCC signals: mean removal,
//! segment-averaged cross-spectral densities against the local excitation,
//! coherence and the instrumental-variable ratio.
//!
//! Forward transforms are scaled by `1 / N_seg`. Bins keep raw FFT order;
//! bins above `N_seg / 2` carry negative angular frequency.

use std::io::Write;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::sim::{SimulationTrace, TimeWindow};

/// Shortest segment used by [`estimate_cross_spectra`].
pub const MIN_SEGMENT_LEN: usize = 16;

/// One converter's local measurements: all an estimator at that PCC may see.
#[derive(Debug, Clone, PartialEq)]
pub struct PccMeasurements {
    pub fs: f64,
    pub t_discard: f64,
    pub current: Vec<Complex64>,
    pub voltage: Vec<Complex64>,
    pub excitation: Vec<Complex64>,
}

impl PccMeasurements {
    pub fn from_trace(trace: &SimulationTrace, pcc: usize) -> Result<Self> {
        if pcc >= trace.n_pcc() {
            return Err(Error::Argument(format!("trace has no PCC {pcc}")));
        }
        Ok(Self {
            fs: trace.fs,
            t_discard: trace.t_discard,
            current: trace.current[pcc].clone(),
            voltage: trace.voltage[pcc].clone(),
            excitation: trace.excitation[pcc].clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.current.len()
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.fs
    }

    pub fn analysis_window(&self) -> TimeWindow {
        TimeWindow::new(self.t_discard, self.duration())
    }

    pub fn window_indices(&self, window: TimeWindow) -> Result<std::ops::Range<usize>> {
        let tol = 0.5 / self.fs;
        if window.start + tol < self.t_discard
            || window.end > self.duration() + tol
            || window.end <= window.start
        {
            return Err(Error::Argument(format!(
                "window [{}, {}) is not inside [{}, {}]",
                window.start,
                window.end,
                self.t_discard,
                self.duration()
            )));
        }
        let a = (window.start * self.fs - 1e-6).ceil().max(0.0) as usize;
        let b = ((window.end * self.fs - 1e-6).ceil() as usize).min(self.len());
        Ok(a..b.max(a))
    }
}

/// Mean-removed current and voltage plus the raw excitation over an analysis window.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexDeviationSignals {
    pub fs: f64,
    pub current: Vec<Complex64>,
    pub voltage: Vec<Complex64>,
    pub excitation: Vec<Complex64>,
    /// Deviation of the true equivalent voltage; diagnostics only.
    pub equivalent_voltage: Option<Vec<Complex64>>,
    /// Steady-state (window mean) current and voltage.
    pub current_ss: Complex64,
    pub voltage_ss: Complex64,
}

fn remove_mean(x: &[Complex64]) -> (Vec<Complex64>, Complex64) {
    let m = x.iter().sum::<Complex64>() / x.len() as f64;
    (x.iter().map(|v| v - m).collect(), m)
}

impl ComplexDeviationSignals {
    pub fn from_measurements(meas: &PccMeasurements, window: TimeWindow) -> Result<Self> {
        let range = meas.window_indices(window)?;
        if range.len() < 2 * MIN_SEGMENT_LEN {
            return Err(Error::Argument(format!(
                "window holds {} samples; at least {} are needed",
                range.len(),
                2 * MIN_SEGMENT_LEN
            )));
        }
        let (current, current_ss) = remove_mean(&meas.current[range.clone()]);
        let (voltage, voltage_ss) = remove_mean(&meas.voltage[range.clone()]);
        Ok(Self {
            fs: meas.fs,
            current,
            voltage,
            excitation: meas.excitation[range].to_vec(),
            equivalent_voltage: None,
            current_ss,
            voltage_ss,
        })
    }

    pub fn len(&self) -> usize {
        self.current.len()
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_empty()
    }
}

/// Deviation signals of PCC `pcc` over `window`, including the diagnostic
/// equivalent-voltage deviation recorded by the simulator.
pub fn to_complex_deviation(
    trace: &SimulationTrace,
    pcc: usize,
    window: TimeWindow,
) -> Result<ComplexDeviationSignals> {
    trace.window_indices(window)?;
    let meas = PccMeasurements::from_trace(trace, pcc)?;
    let mut sig = ComplexDeviationSignals::from_measurements(&meas, window)?;
    let range = trace.window_indices(window)?;
    let (vt, _) = remove_mean(&trace.equivalent_voltage[pcc][range]);
    sig.equivalent_voltage = Some(vt);
    Ok(sig)
}

/// Forward FFT scaled by `1 / N`.
pub fn fft_scaled(x: &[Complex64]) -> Vec<Complex64> {
    let mut buf = x.to_vec();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(buf.len()).process(&mut buf);
    let scale = 1.0 / buf.len() as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
    buf
}

/// Unscaled inverse FFT, the inverse of [`fft_scaled`].
pub fn ifft(x: &[Complex64]) -> Vec<Complex64> {
    let mut buf = x.to_vec();
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(buf.len()).process(&mut buf);
    buf
}

/// Signed angular frequency (rad/s) of each raw-order FFT bin.
pub fn bin_frequencies(n: usize, fs: f64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let signed = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
            2.0 * std::f64::consts::PI * fs * signed / n as f64
        })
        .collect()
}

/// Segment-averaged spectral densities against the excitation.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSpectra {
    pub fs: f64,
    pub segment_len: usize,
    pub segments: usize,
    /// Signed bin frequencies (rad/s), raw FFT order.
    pub omega: Vec<f64>,
    pub s_ri: Vec<Complex64>,
    pub s_rv: Vec<Complex64>,
    pub s_rr: Vec<f64>,
    pub s_vv: Vec<f64>,
    /// `E[V* I]`, the ordinary (non-instrumental) cross spectrum.
    pub s_vi: Vec<Complex64>,
    /// `E[R* V~]`; present only when the true equivalent voltage is known.
    pub s_rvt: Option<Vec<Complex64>>,
}

impl CrossSpectra {
    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    /// Indices of the non-negative frequency bins `0..=N/2`.
    pub fn estimation_bins(&self) -> std::ops::RangeInclusive<usize> {
        0..=self.segment_len / 2
    }

    /// CSV with `omega`, real/imaginary parts of each density and the coherence.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "omega,s_ri_re,s_ri_im,s_rv_re,s_rv_im,s_rr,s_vv,s_vi_re,s_vi_im,coherence"
        )?;
        let c = coherence(self);
        for k in 0..self.len() {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.omega[k],
                self.s_ri[k].re,
                self.s_ri[k].im,
                self.s_rv[k].re,
                self.s_rv[k].im,
                self.s_rr[k],
                self.s_vv[k],
                self.s_vi[k].re,
                self.s_vi[k].im,
                c[k]
            )?;
        }
        Ok(())
    }
}

/// Largest power-of-two segment length giving `segments` segments.
pub fn segment_length(samples: usize, segments: usize) -> Result<usize> {
    if segments == 0 {
        return Err(Error::Argument("segment count must be at least 1".into()));
    }
    let per = samples / segments;
    if per < MIN_SEGMENT_LEN {
        return Err(Error::Argument(format!(
            "{samples} samples cannot form {segments} segments of at least {MIN_SEGMENT_LEN}"
        )));
    }
    Ok(1usize << (usize::BITS - 1 - per.leading_zeros()))
}

/// Averages `X*(k) Y(k)` over `segments` consecutive non-overlapping
/// rectangular segments taken from the start of the signals.
pub fn estimate_cross_spectra(
    signals: &ComplexDeviationSignals,
    segments: usize,
) -> Result<CrossSpectra> {
    let len = segment_length(signals.len(), segments)?;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(len);
    let scale = 1.0 / len as f64;
    let transform = |x: &[Complex64]| {
        let mut buf = x.to_vec();
        fft.process(&mut buf);
        buf.iter_mut().for_each(|v| *v *= scale);
        buf
    };

    let zero = Complex64::new(0.0, 0.0);
    let mut s_ri = vec![zero; len];
    let mut s_rv = vec![zero; len];
    let mut s_vi = vec![zero; len];
    let mut s_rr = vec![0.0; len];
    let mut s_vv = vec![0.0; len];
    let mut s_rvt = signals.equivalent_voltage.as_ref().map(|_| vec![zero; len]);

    for s in 0..segments {
        let span = s * len..(s + 1) * len;
        let r = transform(&signals.excitation[span.clone()]);
        let i = transform(&signals.current[span.clone()]);
        let v = transform(&signals.voltage[span.clone()]);
        let vt = signals
            .equivalent_voltage
            .as_ref()
            .map(|x| transform(&x[span.clone()]));
        for k in 0..len {
            let rc = r[k].conj();
            s_ri[k] += rc * i[k];
            s_rv[k] += rc * v[k];
            s_vi[k] += v[k].conj() * i[k];
            s_rr[k] += r[k].norm_sqr();
            s_vv[k] += v[k].norm_sqr();
        }
        if let (Some(acc), Some(vt)) = (s_rvt.as_mut(), vt) {
            for k in 0..len {
                acc[k] += r[k].conj() * vt[k];
            }
        }
    }
    let inv = 1.0 / segments as f64;
    for k in 0..len {
        s_ri[k] *= inv;
        s_rv[k] *= inv;
        s_vi[k] *= inv;
        s_rr[k] *= inv;
        s_vv[k] *= inv;
    }
    if let Some(acc) = s_rvt.as_mut() {
        acc.iter_mut().for_each(|v| *v *= inv);
    }

    Ok(CrossSpectra {
        fs: signals.fs,
        segment_len: len,
        segments,
        omega: bin_frequencies(len, signals.fs),
        s_ri,
        s_rv,
        s_rr,
        s_vv,
        s_vi,
        s_rvt,
    })
}

/// Magnitude-squared coherence `|S_RV|^2 / (S_RR S_VV)`, clipped to `[0, 1]`;
/// zero where either auto-spectrum vanishes.
pub fn coherence(spectra: &CrossSpectra) -> Vec<f64> {
    (0..spectra.len())
        .map(|k| {
            let den = spectra.s_rr[k] * spectra.s_vv[k];
            if den > 0.0 && den.is_finite() {
                (spectra.s_rv[k].norm_sqr() / den).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect()
}

/// A per-bin complex ratio with explicit validity.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioData {
    pub omega: Vec<f64>,
    pub h: Vec<Option<Complex64>>,
}

impl RatioData {
    pub fn valid_count(&self) -> usize {
        self.h.iter().filter(|h| h.is_some()).count()
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }
}

fn median(mut x: Vec<f64>) -> f64 {
    x.sort_by(|a, b| a.total_cmp(b));
    let n = x.len();
    if n % 2 == 1 {
        x[n / 2]
    } else {
        0.5 * (x[n / 2 - 1] + x[n / 2])
    }
}

/// Instrumental-variable ratio `S_RI / S_RV`, defined where
/// `|S_RV| >= floor * median |S_RV|`.
pub fn iv_ratio(spectra: &CrossSpectra, floor: f64) -> Result<RatioData> {
    if !(floor.is_finite() && floor > 0.0) {
        return Err(Error::Argument(format!("guard floor must be positive, got {floor}")));
    }
    let mags: Vec<f64> = spectra.s_rv.iter().map(|s| s.norm()).collect();
    let threshold = floor * median(mags.clone());
    let h: Vec<Option<Complex64>> = (0..spectra.len())
        .map(|k| {
            (mags[k] >= threshold && mags[k] > 0.0).then(|| spectra.s_ri[k] / spectra.s_rv[k])
        })
        .collect();
    let ratio = RatioData {
        omega: spectra.omega.clone(),
        h,
    };
    if ratio.valid_count() == 0 {
        return Err(Error::EstimationImpossible(
            "every bin of S_RV is below the guard floor".into(),
        ));
    }
    Ok(ratio)
}

/// Empirical transfer function estimate `S_VI / S_VV` (the raw per-bin
/// ratio `I / V` for a single segment).
pub fn etfe(spectra: &CrossSpectra) -> RatioData {
    RatioData {
        omega: spectra.omega.clone(),
        h: (0..spectra.len())
            .map(|k| (spectra.s_vv[k] > 0.0).then(|| spectra.s_vi[k] / spectra.s_vv[k]))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signals(r: Vec<Complex64>, i: Vec<Complex64>, v: Vec<Complex64>) -> ComplexDeviationSignals {
        ComplexDeviationSignals {
            fs: 1000.0,
            current: i,
            voltage: v,
            excitation: r,
            equivalent_voltage: None,
            current_ss: Complex64::new(0.0, 0.0),
            voltage_ss: Complex64::new(0.0, 0.0),
        }
    }

    fn lcg_noise(seed: u64, n: usize) -> Vec<Complex64> {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        (0..n).map(|_| Complex64::new(next(), next())).collect()
    }

    #[test]
    fn constant_measurements_give_zero_deviation() {
        let c = Complex64::new(0.9, -0.1);
        let meas = PccMeasurements {
            fs: 100.0,
            t_discard: 0.0,
            current: vec![c; 200],
            voltage: vec![c * 2.0; 200],
            excitation: vec![Complex64::new(1.0, 0.0); 200],
        };
        let sig = ComplexDeviationSignals::from_measurements(&meas, meas.analysis_window()).unwrap();
        assert!(sig.current.iter().all(|x| x.norm() < 1e-13));
        assert!(sig.voltage.iter().all(|x| x.norm() < 1e-13));
        assert_eq!(sig.excitation, meas.excitation);
        assert!((sig.voltage_ss - c * 2.0).norm() < 1e-14);
    }

    #[test]
    fn sinusoid_on_offset() {
        let n = 1000;
        let x: Vec<Complex64> = (0..n)
            .map(|k| Complex64::new(3.0, 1.0) + Complex64::from_polar(0.2, 0.05 * k as f64))
            .collect();
        let meas = PccMeasurements {
            fs: 100.0,
            t_discard: 0.0,
            current: x.clone(),
            voltage: x,
            excitation: vec![Complex64::new(0.0, 0.0); n],
        };
        let sig = ComplexDeviationSignals::from_measurements(&meas, meas.analysis_window()).unwrap();
        let m = sig.voltage.iter().sum::<Complex64>() / n as f64;
        assert!(m.norm() < 1e-12);
    }

    #[test]
    fn short_window_rejected() {
        let meas = PccMeasurements {
            fs: 100.0,
            t_discard: 0.0,
            current: vec![Complex64::new(0.0, 0.0); 20],
            voltage: vec![Complex64::new(0.0, 0.0); 20],
            excitation: vec![Complex64::new(0.0, 0.0); 20],
        };
        assert!(ComplexDeviationSignals::from_measurements(&meas, meas.analysis_window()).is_err());
        let late = PccMeasurements {
            t_discard: 0.1,
            ..meas
        };
        assert!(late.window_indices(TimeWindow::new(0.0, 0.2)).is_err());
    }

    #[test]
    fn auto_spectrum_is_real_and_scaled_linearity_holds() {
        let r = lcg_noise(1, 4096);
        let alpha = Complex64::new(0.3, -2.0);
        let v: Vec<Complex64> = r.iter().map(|x| x * alpha).collect();
        let sp = estimate_cross_spectra(&signals(r.clone(), v.clone(), v), 4).unwrap();
        assert_eq!(sp.segment_len, 1024);
        for k in 0..sp.len() {
            assert!(sp.s_rr[k] >= 0.0);
            let expected = alpha * sp.s_rr[k];
            assert!((sp.s_rv[k] - expected).norm() <= 1e-12 * expected.norm().max(1e-300));
        }
        let c = coherence(&sp);
        assert!(c.iter().all(|&c| (c - 1.0).abs() < 1e-9));
    }

    #[test]
    fn parseval() {
        let r = lcg_noise(7, 2048);
        let sp = estimate_cross_spectra(&signals(r.clone(), r.clone(), r.clone()), 2).unwrap();
        let total: f64 = sp.s_rr.iter().sum();
        let ms = r.iter().map(|x| x.norm_sqr()).sum::<f64>() / r.len() as f64;
        assert!((total - ms).abs() <= 1e-9 * ms);
    }

    #[test]
    fn too_few_samples_for_segments() {
        let r = lcg_noise(3, 100);
        assert!(estimate_cross_spectra(&signals(r.clone(), r.clone(), r), 8).is_err());
    }

    #[test]
    fn single_segment_coherence_degenerates_to_one() {
        let r = lcg_noise(5, 512);
        let v = lcg_noise(6, 512);
        let sp = estimate_cross_spectra(&signals(r, v.clone(), v), 1).unwrap();
        assert!(coherence(&sp).iter().all(|&c| (c - 1.0).abs() < 1e-9));
    }

    #[test]
    fn integer_bin_tone_concentrates() {
        let n = 256;
        let m = 17;
        let tone: Vec<Complex64> = (0..n)
            .map(|k| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * (m * k) as f64 / n as f64))
            .collect();
        let x = fft_scaled(&tone);
        let total: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        assert!(x[m].norm_sqr() >= 0.99 * total);
        let w = bin_frequencies(n, 100.0);
        assert!((w[m] - 2.0 * std::f64::consts::PI * 100.0 * m as f64 / n as f64).abs() < 1e-12);
        assert!(w[n - 1] < 0.0);
        let back = ifft(&x);
        assert!(back.iter().zip(&tone).all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn iv_ratio_exact_and_guarded() {
        let n = 64;
        let omega = bin_frequencies(n, 100.0);
        let s_rv: Vec<Complex64> = (0..n).map(|k| Complex64::new(1.0 + k as f64, 0.5)).collect();
        let y: Vec<Complex64> = (0..n).map(|k| Complex64::new(2.0, -(k as f64))).collect();
        let mut sp = CrossSpectra {
            fs: 100.0,
            segment_len: n,
            segments: 1,
            omega,
            s_ri: s_rv.iter().zip(&y).map(|(a, b)| a * b).collect(),
            s_rv,
            s_rr: vec![1.0; n],
            s_vv: vec![1.0; n],
            s_vi: vec![Complex64::new(0.0, 0.0); n],
            s_rvt: None,
        };
        let ratio = iv_ratio(&sp, 1e-6).unwrap();
        for k in 0..n {
            let h = ratio.h[k].unwrap();
            assert!((h - y[k]).norm() < 1e-12 * y[k].norm());
        }
        sp.s_rv[5] = Complex64::new(1e-12, 0.0);
        let ratio = iv_ratio(&sp, 1e-6).unwrap();
        assert!(ratio.h[5].is_none());
        assert_eq!(ratio.valid_count(), n - 1);

        sp.s_rv.iter_mut().for_each(|s| *s = Complex64::new(0.0, 0.0));
        assert!(matches!(iv_ratio(&sp, 1e-6), Err(Error::EstimationImpossible(_))));
    }
}
