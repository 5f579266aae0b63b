//! End-to-end identification at one PCC from that PCC's own measurements.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::discrim::{discriminate, FdConfig, FrequencyWeights, RejectReason};
use crate::error::{Error, Result};
use crate::grid::OMEGA_B;
use crate::params::{build_regression, solve_constrained_wls, ThetaEstimate, WlsConfig};
use crate::spectral::{
    bin_frequencies, estimate_cross_spectra, etfe, fft_scaled, iv_ratio, ComplexDeviationSignals,
    CrossSpectra, PccMeasurements, RatioData,
};
use crate::voltage::{
    dc_value, kf_run, reconstruct_freq, reconstruct_time, residual_sequence, CouplingEstimate,
    EquivalentVoltage, KfConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentificationSettings {
    /// Number of averaged spectral segments.
    pub segments: usize,
    /// Ratio guard floor relative to the median `|S_RV|`.
    pub guard_floor: f64,
    pub omega_b: f64,
    pub fd: FdConfig,
    pub wls: WlsConfig,
    pub kf: KfConfig,
}

impl Default for IdentificationSettings {
    fn default() -> Self {
        Self {
            segments: 8,
            guard_floor: 1e-6,
            omega_b: OMEGA_B,
            fd: FdConfig::default(),
            wls: WlsConfig::default(),
            kf: KfConfig::default(),
        }
    }
}

/// Keeps the non-negative frequency bins `0..=N/2`.
fn estimation_grid(ratio: &RatioData, weights: &FrequencyWeights, n: usize) -> (RatioData, FrequencyWeights) {
    let keep = n / 2 + 1;
    (
        RatioData {
            omega: ratio.omega[..keep].to_vec(),
            h: ratio.h[..keep].to_vec(),
        },
        FrequencyWeights {
            omega: weights.omega[..keep].to_vec(),
            w: weights.w[..keep].to_vec(),
            reason: weights.reason[..keep].to_vec(),
        },
    )
}

/// Everything the estimator at one PCC produces.
#[derive(Debug, Clone, PartialEq)]
pub struct Identification {
    pub spectra: CrossSpectra,
    /// Instrumental-variable ratio on the estimation grid.
    pub ratio: RatioData,
    /// Segment-averaged ETFE on the estimation grid.
    pub etfe: RatioData,
    pub weights: FrequencyWeights,
    pub theta: ThetaEstimate,
    /// Start of the reconstruction segment (s).
    pub segment_start: f64,
    /// Signed bin frequencies of the reconstruction segment (rad/s).
    pub segment_omega: Vec<f64>,
    /// Voltage deviation spectrum of the reconstruction segment.
    pub segment_dv: Vec<Complex64>,
    pub coupling: CouplingEstimate,
    pub voltage: EquivalentVoltage,
    pub current_ss: Complex64,
    pub voltage_ss: Complex64,
}

impl Identification {
    /// Omega values of the bins retained by frequency discrimination.
    pub fn retained_omega(&self) -> Vec<f64> {
        self.weights
            .omega
            .iter()
            .zip(&self.weights.w)
            .filter(|(_, &w)| w == 1)
            .map(|(&o, _)| o)
            .collect()
    }
}

/// Runs spectra, discrimination, constrained WLS, the coupling filter and the
/// voltage reconstruction on one PCC's measurements over its analysis window.
pub fn identify(meas: &PccMeasurements, settings: &IdentificationSettings) -> Result<Identification> {
    settings.fd.validate(meas.fs)?;
    settings.wls.validate()?;
    settings.kf.validate()?;
    let signals = ComplexDeviationSignals::from_measurements(meas, meas.analysis_window())?;
    let spectra = estimate_cross_spectra(&signals, settings.segments)?;
    let n = spectra.segment_len;

    let ratio_full = iv_ratio(&spectra, settings.guard_floor)?;
    let weights_full = discriminate(&spectra, &ratio_full, &settings.fd)?;
    let (ratio, weights) = estimation_grid(&ratio_full, &weights_full, n);
    let etfe_full = etfe(&spectra);
    let etfe = RatioData {
        omega: etfe_full.omega[..n / 2 + 1].to_vec(),
        h: etfe_full.h[..n / 2 + 1].to_vec(),
    };
    if weights.retained() == 0 {
        return Err(Error::EstimationImpossible(
            "no non-negative frequency bin passed discrimination".into(),
        ));
    }
    let rows = build_regression(&ratio, &weights, settings.omega_b, &settings.wls)?;
    let theta = solve_constrained_wls(&rows, &settings.wls)?;

    // Reconstruction segment: the last full segment of the analysis window.
    let start = signals.len() - n;
    let di = fft_scaled(&signals.current[start..]);
    let dv = fft_scaled(&signals.voltage[start..]);
    let segment_omega = bin_frequencies(n, meas.fs);
    let raw = RatioData {
        omega: segment_omega.clone(),
        h: (0..n)
            .map(|k| (dv[k].norm() > 0.0).then(|| di[k] / dv[k]))
            .collect(),
    };
    let all = FrequencyWeights {
        omega: segment_omega.clone(),
        w: raw.h.iter().map(|h| u8::from(h.is_some())).collect(),
        reason: raw
            .h
            .iter()
            .map(|h| if h.is_some() { RejectReason::None } else { RejectReason::InvalidRatio })
            .collect(),
    };
    let seg_rows = build_regression(&raw, &all, settings.omega_b, &settings.wls)?;
    let residuals = residual_sequence(&seg_rows, &theta, settings.kf.c1);
    let coupling = kf_run(&residuals, theta.gamma, &settings.kf)?;
    let mut spectrum = reconstruct_freq(&coupling, &dv)?;
    for (k, x) in spectrum.iter_mut().enumerate() {
        // A bin with no voltage content reconstructs to zero.
        if x.is_none() && dv[k].norm() == 0.0 {
            *x = Some(Complex64::new(0.0, 0.0));
        }
    }
    let dc = dc_value(&theta, signals.current_ss, signals.voltage_ss)?;
    let voltage = reconstruct_time(&spectrum, dc)?;

    let window_start = meas.window_indices(meas.analysis_window())?.start;
    Ok(Identification {
        spectra,
        ratio,
        etfe,
        weights,
        theta,
        segment_start: (window_start + start) as f64 / meas.fs,
        segment_omega,
        segment_dv: dv,
        coupling,
        voltage,
        current_ss: signals.current_ss,
        voltage_ss: signals.voltage_ss,
    })
}
