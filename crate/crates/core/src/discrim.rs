//! Per-bin accept/reject classification for parameter estimation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{coherence, CrossSpectra, RatioData};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdConfig {
    /// Coherence threshold.
    pub epsilon: f64,
    /// Band-pass lower cut-off (rad/s).
    pub omega_a: f64,
    /// Band-pass upper cut-off (rad/s).
    pub omega_b_cut: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            omega_a: 150.0,
            omega_b_cut: 3000.0,
        }
    }
}

impl FdConfig {
    pub fn validate(&self, fs: f64) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!(
                "coherence threshold must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        let nyquist = std::f64::consts::PI * fs;
        if !(self.omega_a > 0.0 && self.omega_a < self.omega_b_cut && self.omega_b_cut < nyquist) {
            return Err(Error::Config(format!(
                "band [{}, {}] rad/s must satisfy 0 < a < b < {nyquist:.1}",
                self.omega_a, self.omega_b_cut
            )));
        }
        Ok(())
    }

    pub fn in_band(&self, omega: f64) -> bool {
        (self.omega_a..=self.omega_b_cut).contains(&omega.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    None,
    Coherence,
    Bandpass,
    Passivity,
    InvalidRatio,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Coherence => "coherence",
            Self::Bandpass => "bandpass",
            Self::Passivity => "passivity",
            Self::InvalidRatio => "invalid-ratio",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyWeights {
    pub omega: Vec<f64>,
    pub w: Vec<u8>,
    pub reason: Vec<RejectReason>,
}

impl FrequencyWeights {
    pub fn retained(&self) -> usize {
        self.w.iter().filter(|&&w| w == 1).count()
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "omega,W,reason")?;
        for k in 0..self.len() {
            writeln!(out, "{:.16e},{},{}", self.omega[k], self.w[k], self.reason[k].as_str())?;
        }
        Ok(())
    }
}

/// Classifies a single bin; the first failing test gives the reason.
pub fn classify(coh: f64, omega: f64, h: Option<num_complex::Complex64>, config: &FdConfig) -> RejectReason {
    if coh < config.epsilon {
        RejectReason::Coherence
    } else if !config.in_band(omega) {
        RejectReason::Bandpass
    } else {
        match h {
            Some(h) if h.re < 0.0 => RejectReason::Passivity,
            Some(_) => RejectReason::None,
            None => RejectReason::InvalidRatio,
        }
    }
}

pub fn discriminate(
    spectra: &CrossSpectra,
    ratio: &RatioData,
    config: &FdConfig,
) -> Result<FrequencyWeights> {
    if spectra.omega.len() != ratio.omega.len()
        || spectra
            .omega
            .iter()
            .zip(&ratio.omega)
            .any(|(a, b)| (a - b).abs() > 1e-9 * a.abs().max(1.0))
    {
        return Err(Error::Argument(
            "spectra and ratio are on different frequency grids".into(),
        ));
    }
    let coh = coherence(spectra);
    let reason: Vec<RejectReason> = (0..spectra.len())
        .map(|k| classify(coh[k], spectra.omega[k], ratio.h[k], config))
        .collect();
    let w: Vec<u8> = reason
        .iter()
        .map(|r| u8::from(*r == RejectReason::None))
        .collect();
    if !w.contains(&1) {
        log::warn!("frequency discrimination rejected every bin");
    }
    Ok(FrequencyWeights {
        omega: spectra.omega.clone(),
        w,
        reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn single_criteria() {
        let cfg = FdConfig::default();
        let h = Some(Complex64::new(1.0, -5.0));
        assert_eq!(classify(0.5, 100.0, h, &cfg), RejectReason::Bandpass);
        assert_eq!(classify(0.04, 500.0, h, &cfg), RejectReason::Coherence);
        assert_eq!(
            classify(0.5, 500.0, Some(Complex64::new(-0.5, 1.0)), &cfg),
            RejectReason::Passivity
        );
        assert_eq!(classify(0.5, 500.0, None, &cfg), RejectReason::InvalidRatio);
        assert_eq!(classify(0.5, -500.0, h, &cfg), RejectReason::None);
        assert_eq!(classify(0.5, 3000.0, h, &cfg), RejectReason::None);
        assert_eq!(classify(0.04, 100.0, h, &cfg), RejectReason::Coherence);
    }

    #[test]
    fn config_validation() {
        assert!(FdConfig::default().validate(10e3).is_ok());
        assert!(FdConfig::default().validate(500.0).is_err());
        let bad = FdConfig {
            epsilon: 1.0,
            ..FdConfig::default()
        };
        assert!(bad.validate(10e3).is_err());
        let swapped = FdConfig {
            omega_a: 4000.0,
            ..FdConfig::default()
        };
        assert!(swapped.validate(10e3).is_err());
    }
}
