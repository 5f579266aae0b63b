//! Frequency-domain Kalman filter for the dynamic coupling `h~ = dv~ / dv`
//! and reconstruction of the equivalent grid voltage.

use std::io::Write;

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{admittance_from_theta, RegressionRow, ThetaEstimate};
use crate::spectral::ifft;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KfConfig {
    /// Random-walk variance per bin step. Zero gives a static-state filter.
    pub sigma_q: f64,
    pub d0: [f64; 2],
    pub p0: [[f64; 2]; 2],
    pub c1: f64,
}

impl Default for KfConfig {
    fn default() -> Self {
        Self {
            sigma_q: 1e-2,
            d0: [0.0, 0.0],
            p0: [[1e3, 0.0], [0.0, 1e3]],
            c1: 0.1,
        }
    }
}

fn mat(m: [[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1])
}

impl KfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_q >= 0.0 && self.sigma_q.is_finite()) {
            return Err(Error::Config(format!(
                "process variance must be non-negative, got {}",
                self.sigma_q
            )));
        }
        if !(self.c1 > 0.0) {
            return Err(Error::Config(format!("c1 must be positive, got {}", self.c1)));
        }
        let p = mat(self.p0);
        if (p - p.transpose()).abs().max() > 1e-12 * p.abs().max() || p.cholesky().is_none() {
            return Err(Error::Config("P0 must be symmetric positive definite".into()));
        }
        Ok(())
    }
}

/// Model residual of one bin and its measurement covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualBin {
    pub bin: usize,
    pub omega: f64,
    pub k_norm: f64,
    pub z: Vector2<f64>,
    pub r: Matrix2<f64>,
}

/// `z~ = z - H theta^` with `R_d = c1 I + H Sigma H^T`.
pub fn residual_sequence(rows: &[RegressionRow], theta: &ThetaEstimate, c1: f64) -> Vec<ResidualBin> {
    let th = theta.theta();
    let sigma = theta.covariance_matrix();
    rows.iter()
        .map(|row| {
            let r = Matrix2::identity() * c1 + row.h * sigma * row.h.transpose();
            ResidualBin {
                bin: row.bin,
                omega: row.omega,
                k_norm: row.k_norm,
                z: row.z - row.h * th,
                r: (r + r.transpose()) * 0.5,
            }
        })
        .collect()
}

/// Filtered coupling per bin, in the order of the input residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingEstimate {
    pub bin: Vec<usize>,
    pub omega: Vec<f64>,
    /// `(Re h~, Im h~)`.
    pub d: Vec<Vector2<f64>>,
    pub p: Vec<Matrix2<f64>>,
    pub innovation: Vec<Vector2<f64>>,
    pub innovation_cov: Vec<Matrix2<f64>>,
}

impl CouplingEstimate {
    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn coupling(&self, idx: usize) -> Complex64 {
        Complex64::new(self.d[idx][0], self.d[idx][1])
    }

    /// CSV with `omega, d1, d2, P11, P22`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "omega,d1,d2,P11,P22")?;
        for k in 0..self.len() {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.omega[k],
                self.d[k][0],
                self.d[k][1],
                self.p[k][(0, 0)],
                self.p[k][(1, 1)]
            )?;
        }
        Ok(())
    }
}

/// Runs the filter over the residuals. Non-negative and negative frequencies
/// form two independent sweeps, each in ascending `|omega|`. The measurement
/// matrix of a bin is `-(gamma / k_norm) I`, matching the normalized rows.
pub fn kf_run(residuals: &[ResidualBin], gamma: f64, config: &KfConfig) -> Result<CouplingEstimate> {
    config.validate()?;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Argument(format!(
            "coupling filter needs a positive gamma estimate, got {gamma}"
        )));
    }
    let n = residuals.len();
    let mut d_out = vec![Vector2::zeros(); n];
    let mut p_out = vec![Matrix2::zeros(); n];
    let mut nu_out = vec![Vector2::zeros(); n];
    let mut s_out = vec![Matrix2::zeros(); n];

    let mut positive: Vec<usize> = (0..n).filter(|&k| residuals[k].omega >= 0.0).collect();
    let mut negative: Vec<usize> = (0..n).filter(|&k| residuals[k].omega < 0.0).collect();
    for chain in [&mut positive, &mut negative] {
        chain.sort_by(|&a, &b| residuals[a].omega.abs().total_cmp(&residuals[b].omega.abs()));
        let q = Matrix2::identity() * config.sigma_q;
        let mut d = Vector2::new(config.d0[0], config.d0[1]);
        let mut p = mat(config.p0);
        for &k in chain.iter() {
            let res = &residuals[k];
            let r = (res.r + res.r.transpose()) * 0.5;
            if r.cholesky().is_none() {
                return Err(Error::Numerical {
                    bin: res.bin,
                    reason: "measurement covariance is not positive definite".into(),
                });
            }
            let c = gamma / res.k_norm;
            let h = Matrix2::identity() * -c;
            let p_prior = p + q;
            let s = h * p_prior * h.transpose() + r;
            let s = (s + s.transpose()) * 0.5;
            let s_inv = s.try_inverse().ok_or_else(|| Error::Numerical {
                bin: res.bin,
                reason: "innovation covariance is singular".into(),
            })?;
            let gain = p_prior * h.transpose() * s_inv;
            let nu = res.z - h * d;
            d += gain * nu;
            let ikh = Matrix2::identity() - gain * h;
            let p_post = ikh * p_prior * ikh.transpose() + gain * r * gain.transpose();
            p = (p_post + p_post.transpose()) * 0.5;
            if !(d.iter().all(|x| x.is_finite()) && p.iter().all(|x| x.is_finite())) {
                return Err(Error::Numerical {
                    bin: res.bin,
                    reason: "non-finite filter state".into(),
                });
            }
            d_out[k] = d;
            p_out[k] = p;
            nu_out[k] = nu;
            s_out[k] = s;
        }
    }

    Ok(CouplingEstimate {
        bin: residuals.iter().map(|r| r.bin).collect(),
        omega: residuals.iter().map(|r| r.omega).collect(),
        d: d_out,
        p: p_out,
        innovation: nu_out,
        innovation_cov: s_out,
    })
}

/// `dv~^(k) = dv(k) (d1 + j d2)` on a full spectrum of length `dv.len()`;
/// bins not covered by `coupling` stay `None`.
pub fn reconstruct_freq(coupling: &CouplingEstimate, dv: &[Complex64]) -> Result<Vec<Option<Complex64>>> {
    let mut out = vec![None; dv.len()];
    for (idx, &bin) in coupling.bin.iter().enumerate() {
        let v = dv.get(bin).ok_or_else(|| {
            Error::Argument(format!("coupling bin {bin} outside a {}-bin spectrum", dv.len()))
        })?;
        out[bin] = Some(v * coupling.coupling(idx));
    }
    Ok(out)
}

/// Steady-state equivalent voltage `v(j0) - i(j0) / Y^(j0)`.
pub fn dc_value(theta: &ThetaEstimate, i0: Complex64, v0: Complex64) -> Result<Complex64> {
    let y0 = admittance_from_theta(theta, 0.0)?;
    if y0.norm() < 1e-9 {
        return Err(Error::Singular(format!("|Y(j0)| = {:e}", y0.norm())));
    }
    let vss = v0 - i0 / y0;
    if !(0.5..=1.5).contains(&vss.norm()) {
        log::warn!("equivalent voltage magnitude {:.4} p.u. is implausible", vss.norm());
    }
    Ok(vss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalentVoltage {
    pub spectrum: Vec<Complex64>,
    pub dc: Complex64,
    pub d: Vec<f64>,
    pub q: Vec<f64>,
}

impl EquivalentVoltage {
    /// CSV with `time, vt_d, vt_q`; `t0` is the segment start time.
    pub fn write_time_csv<W: Write>(&self, fs: f64, t0: f64, mut out: W) -> Result<()> {
        writeln!(out, "time,vt_d,vt_q")?;
        for k in 0..self.d.len() {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e}",
                t0 + k as f64 / fs,
                self.d[k],
                self.q[k]
            )?;
        }
        Ok(())
    }

    /// CSV with `omega, magnitude, phase_deg` of the deviation spectrum.
    pub fn write_spectrum_csv<W: Write>(&self, omega: &[f64], mut out: W) -> Result<()> {
        writeln!(out, "omega,magnitude,phase_deg")?;
        for (w, x) in omega.iter().zip(&self.spectrum) {
            writeln!(out, "{:.16e},{:.16e},{:.16e}", w, x.norm(), x.arg().to_degrees())?;
        }
        Ok(())
    }
}

/// Inverse transform of the full deviation spectrum with the DC value added
/// at bin 0. Real part is the d trace, imaginary part the q trace.
pub fn reconstruct_time(spectrum: &[Option<Complex64>], dc: Complex64) -> Result<EquivalentVoltage> {
    if spectrum.is_empty() {
        return Err(Error::Argument("empty spectrum".into()));
    }
    let missing = spectrum.iter().filter(|x| x.is_none()).count();
    if missing > 0 {
        return Err(Error::Argument(format!(
            "{missing} of {} bins are missing from the reconstruction",
            spectrum.len()
        )));
    }
    let full: Vec<Complex64> = spectrum.iter().map(|x| x.expect("checked")).collect();
    let mut with_dc = full.clone();
    with_dc[0] += dc;
    let x = ifft(&with_dc);
    Ok(EquivalentVoltage {
        spectrum: full,
        dc,
        d: x.iter().map(|z| z.re).collect(),
        q: x.iter().map(|z| z.im).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::fft_scaled;

    fn theta(rho: f64, gamma: f64) -> ThetaEstimate {
        ThetaEstimate {
            rho,
            gamma,
            covariance: [[0.0; 2]; 2],
            active: [false; 2],
            residual_norm: 0.0,
        }
    }

    fn residuals(z: Vector2<f64>, n: usize) -> Vec<ResidualBin> {
        (0..n)
            .map(|k| ResidualBin {
                bin: k,
                omega: 10.0 * k as f64,
                k_norm: 1.0,
                z,
                r: Matrix2::identity() * 0.1,
            })
            .collect()
    }

    #[test]
    fn zero_innovation_keeps_zero() {
        let est = kf_run(&residuals(Vector2::zeros(), 50), 10.0, &KfConfig::default()).unwrap();
        assert!(est.d.iter().all(|d| d.norm() == 0.0));
    }

    #[test]
    fn constant_residual_converges_to_scaled_value() {
        let c = Vector2::new(0.3, -0.7);
        let cfg = KfConfig {
            sigma_q: 1e-8,
            ..KfConfig::default()
        };
        let est = kf_run(&residuals(c, 500), 8.0, &cfg).unwrap();
        let target = -c / 8.0;
        let last = est.d[499];
        assert!((last - target).norm() <= 1e-3 * target.norm());
    }

    #[test]
    fn covariance_propagation_degenerate() {
        let row = RegressionRow {
            bin: 0,
            omega: 1.0,
            z: Vector2::new(1.0, 2.0),
            h: Matrix2::new(-0.5, 1.0, 2.0, 0.0),
            sigma: 0.1,
            k_norm: 1.0,
            weight: 1,
        };
        let res = residual_sequence(&[row], &theta(0.0, 0.0), 0.1);
        assert_eq!(res[0].r, Matrix2::identity() * 0.1);
        assert_eq!(res[0].z, row.z);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = KfConfig {
            p0: [[1.0, 2.0], [2.0, 1.0]],
            ..KfConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(kf_run(&residuals(Vector2::zeros(), 3), 0.0, &KfConfig::default()).is_err());
        let mut bad = residuals(Vector2::zeros(), 3);
        bad[1].r = Matrix2::new(1.0, 0.0, 0.0, -1.0);
        assert!(matches!(
            kf_run(&bad, 1.0, &KfConfig::default()),
            Err(Error::Numerical { bin: 1, .. })
        ));
    }

    #[test]
    fn frequency_reconstruction_identities() {
        let dv = vec![Complex64::new(0.2, -0.1), Complex64::new(-1.0, 3.0)];
        let mut est = CouplingEstimate {
            bin: vec![0, 1],
            omega: vec![0.0, 1.0],
            d: vec![Vector2::zeros(); 2],
            p: vec![Matrix2::zeros(); 2],
            innovation: vec![Vector2::zeros(); 2],
            innovation_cov: vec![Matrix2::zeros(); 2],
        };
        let out = reconstruct_freq(&est, &dv).unwrap();
        assert!(out.iter().all(|x| x.unwrap().norm() == 0.0));
        est.d = vec![Vector2::new(1.0, 0.0); 2];
        let out = reconstruct_freq(&est, &dv).unwrap();
        assert_eq!(out[1].unwrap(), dv[1]);
    }

    #[test]
    fn dc_inversion() {
        let th = theta(0.1, 12.0);
        let v0 = Complex64::new(1.01, 0.02);
        assert_eq!(dc_value(&th, Complex64::new(0.0, 0.0), v0).unwrap(), v0);

        let vss = Complex64::new(0.98, -0.05);
        let y0 = admittance_from_theta(&th, 0.0).unwrap();
        let i0 = y0 * (v0 - vss);
        assert!((dc_value(&th, i0, v0).unwrap() - vss).norm() < 1e-12);
        assert!(matches!(
            dc_value(&theta(0.1, 1e-12), i0, v0),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn time_reconstruction() {
        let n = 64;
        let zero = vec![Some(Complex64::new(0.0, 0.0)); n];
        let v = reconstruct_time(&zero, Complex64::new(1.0, 0.0)).unwrap();
        assert!(v.d.iter().all(|&x| (x - 1.0).abs() < 1e-15));
        assert!(v.q.iter().all(|&x| x.abs() < 1e-15));

        let mut single = zero.clone();
        let a = Complex64::new(0.3, 0.4);
        single[5] = Some(a);
        let v = reconstruct_time(&single, Complex64::new(0.0, 0.0)).unwrap();
        for k in 0..n {
            let expect = a * Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * 5.0 * k as f64 / n as f64);
            assert!((Complex64::new(v.d[k], v.q[k]) - expect).norm() < 1e-12);
        }

        let series: Vec<Complex64> = (0..n).map(|k| Complex64::new((k as f64).sin(), (0.3 * k as f64).cos())).collect();
        let spec: Vec<Option<Complex64>> = fft_scaled(&series).into_iter().map(Some).collect();
        let v = reconstruct_time(&spec, Complex64::new(0.0, 0.0)).unwrap();
        for k in 0..n {
            assert!((Complex64::new(v.d[k], v.q[k]) - series[k]).norm() < 1e-12);
        }

        let mut holey = zero;
        holey[3] = None;
        assert!(matches!(reconstruct_time(&holey, Complex64::new(1.0, 0.0)), Err(Error::Argument(_))));
    }
}
