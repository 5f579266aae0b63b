//! Linear regression of the first-order admittance template on per-bin
//! ratio data, and its non-negativity constrained weighted solve.

use std::io::Write;

use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::discrim::FrequencyWeights;
use crate::error::{Error, Result};
use crate::grid::{true_equivalent_admittance, EquivalentAdmittanceTruth};
use crate::spectral::RatioData;

/// Condition number above which the normal matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionRow {
    /// Index of the source bin in the ratio data.
    pub bin: usize,
    /// Angular frequency (rad/s).
    pub omega: f64,
    pub z: Vector2<f64>,
    pub h: Matrix2<f64>,
    pub sigma: f64,
    pub k_norm: f64,
    pub weight: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WlsConfig {
    pub c1: f64,
    pub c2: f64,
    /// Feasibility and optimality tolerance of the active-set iteration.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for WlsConfig {
    fn default() -> Self {
        Self {
            c1: 0.1,
            c2: 1e20,
            tolerance: 1e-12,
            max_iter: 20,
        }
    }
}

impl WlsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c1.is_finite()) {
            return Err(Error::Config(format!("c1 must be positive, got {}", self.c1)));
        }
        if !(self.c2 / self.c1 >= 1e6) {
            return Err(Error::Config(format!(
                "c2 / c1 must be at least 1e6, got {:e}",
                self.c2 / self.c1
            )));
        }
        if self.max_iter == 0 || !(self.tolerance >= 0.0) {
            return Err(Error::Config("solver needs max_iter >= 1 and tolerance >= 0".into()));
        }
        Ok(())
    }

    pub fn sigma(&self, weight: u8) -> f64 {
        self.c1 + self.c2 * f64::from(1 - weight.min(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub rho: f64,
    pub gamma: f64,
    /// Row-major 2x2 covariance of `(rho, gamma)`.
    pub covariance: [[f64; 2]; 2],
    /// `[rho, gamma]` held at zero by the constraint.
    pub active: [bool; 2],
    /// Square root of the weighted residual sum of squares.
    pub residual_norm: f64,
}

impl ThetaEstimate {
    pub fn theta(&self) -> Vector2<f64> {
        Vector2::new(self.rho, self.gamma)
    }

    pub fn covariance_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(
            self.covariance[0][0],
            self.covariance[0][1],
            self.covariance[1][0],
            self.covariance[1][1],
        )
    }
}

/// Normalization divisor `max(1, |w|)` for normalized frequency `w`.
pub fn k_norm(w: f64) -> f64 {
    w.abs().max(1.0)
}

/// Regression pair `(z, H)` of one bin, before normalization.
pub fn regression_pair(h: Complex64, w: f64) -> (Vector2<f64>, Matrix2<f64>) {
    let z = Vector2::new(-(w + 1.0) * h.im, (w + 1.0) * h.re);
    let hm = Matrix2::new(-h.re, 1.0, -h.im, 0.0);
    (z, hm)
}

/// One row per bin with a defined ratio. Bins where the ratio is undefined
/// carry no information and are left out.
pub fn build_regression(
    ratio: &RatioData,
    weights: &FrequencyWeights,
    omega_b: f64,
    config: &WlsConfig,
) -> Result<Vec<RegressionRow>> {
    config.validate()?;
    if ratio.len() != weights.len() {
        return Err(Error::Argument(format!(
            "{} ratio bins but {} weights",
            ratio.len(),
            weights.len()
        )));
    }
    if !(omega_b > 0.0) {
        return Err(Error::Argument(format!("base frequency must be positive, got {omega_b}")));
    }
    let mut rows = Vec::new();
    for k in 0..ratio.len() {
        let Some(h) = ratio.h[k] else {
            if weights.w[k] == 1 {
                return Err(Error::Argument(format!("bin {k} has weight 1 but no ratio")));
            }
            continue;
        };
        let w = ratio.omega[k] / omega_b;
        let kn = k_norm(w);
        let (z, hm) = regression_pair(h, w);
        let weight = weights.w[k].min(1);
        rows.push(RegressionRow {
            bin: k,
            omega: ratio.omega[k],
            z: z / kn,
            h: hm / kn,
            sigma: config.sigma(weight),
            k_norm: kn,
            weight,
        });
    }
    if !rows.iter().any(|r| r.weight == 1) {
        return Err(Error::EstimationImpossible(
            "no frequency bin passed discrimination".into(),
        ));
    }
    Ok(rows)
}

struct Normal {
    a: Matrix2<f64>,
    b: Vector2<f64>,
}

fn normal_equations(rows: &[RegressionRow]) -> Normal {
    let mut a = Matrix2::zeros();
    let mut b = Vector2::zeros();
    for r in rows {
        let s = 1.0 / r.sigma;
        a += r.h.transpose() * r.h * s;
        b += r.h.transpose() * r.z * s;
    }
    Normal { a, b }
}

fn objective(rows: &[RegressionRow], theta: &Vector2<f64>) -> f64 {
    rows.iter()
        .map(|r| (r.z - r.h * theta).norm_squared() / r.sigma)
        .sum()
}

/// Minimizes `sum_k |z_k - H_k theta|^2 / sigma_k` over `theta >= 0`.
pub fn solve_constrained_wls(rows: &[RegressionRow], config: &WlsConfig) -> Result<ThetaEstimate> {
    config.validate()?;
    let used = rows.iter().filter(|r| r.weight == 1).count();
    if used < 2 {
        return Err(Error::EstimationImpossible(format!(
            "{used} usable bins; at least 2 are needed"
        )));
    }
    let n = normal_equations(rows);
    let eig = SymmetricEigen::new(n.a);
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }

    // Active-set iteration on the two bounds.
    let mut active = [false; 2];
    let mut theta = Vector2::zeros();
    let mut converged = false;
    for _ in 0..config.max_iter {
        theta = solve_free(&n, active);
        if let Some(j) = (0..2)
            .filter(|&j| !active[j] && theta[j] < -config.tolerance)
            .min_by(|&a, &b| theta[a].total_cmp(&theta[b]))
        {
            active[j] = true;
            continue;
        }
        // Multipliers of the active bounds: gradient of the objective / 2.
        let grad = n.a * theta - n.b;
        let scale = n.b.abs().max().max(f64::MIN_POSITIVE);
        if let Some(j) = (0..2)
            .filter(|&j| active[j] && grad[j] < -config.tolerance * scale)
            .min_by(|&a, &b| grad[a].total_cmp(&grad[b]))
        {
            active[j] = false;
            continue;
        }
        converged = true;
        break;
    }
    if !converged {
        return Err(Error::EstimationImpossible(format!(
            "active-set solver did not converge in {} iterations",
            config.max_iter
        )));
    }
    for j in 0..2 {
        if active[j] || theta[j] < 0.0 {
            theta[j] = 0.0;
        }
    }

    let mut cov = [[0.0; 2]; 2];
    match active {
        [false, false] => {
            let inv = n.a.try_inverse().ok_or(Error::IllConditioned { condition })?;
            let inv = (inv + inv.transpose()) * 0.5;
            cov = [[inv[(0, 0)], inv[(0, 1)]], [inv[(1, 0)], inv[(1, 1)]]];
        }
        [true, false] => cov[1][1] = 1.0 / n.a[(1, 1)],
        [false, true] => cov[0][0] = 1.0 / n.a[(0, 0)],
        [true, true] => {}
    }
    if active.iter().any(|&a| a) {
        log::debug!("non-negativity constraint active: {active:?}");
    }

    Ok(ThetaEstimate {
        rho: theta[0],
        gamma: theta[1],
        covariance: cov,
        active,
        residual_norm: objective(rows, &theta).sqrt(),
    })
}

fn solve_free(n: &Normal, active: [bool; 2]) -> Vector2<f64> {
    match active {
        [false, false] => n.a.lu().solve(&n.b).unwrap_or_else(Vector2::zeros),
        [true, false] => Vector2::new(0.0, n.b[1] / n.a[(1, 1)]),
        [false, true] => Vector2::new(n.b[0] / n.a[(0, 0)], 0.0),
        [true, true] => Vector2::zeros(),
    }
}

/// `gamma / (rho + j(w + 1))` at normalized frequency `w`.
pub fn admittance_from_theta(theta: &ThetaEstimate, w: f64) -> Result<Complex64> {
    let den = Complex64::new(theta.rho, w + 1.0);
    if !(theta.rho.is_finite() && theta.gamma.is_finite()) {
        return Err(Error::Argument("non-finite parameter estimate".into()));
    }
    if den.norm() == 0.0 {
        return Err(Error::Singular(
            "admittance template evaluated at rho = 0, w = -1".into(),
        ));
    }
    Ok(theta.gamma / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AdmittanceErrors {
    pub mean_magnitude_db: f64,
    pub max_magnitude_db: f64,
    pub mean_phase_deg: f64,
    pub max_phase_deg: f64,
}

/// Wraps an angle in degrees to `(-180, 180]`.
pub fn wrap_degrees(x: f64) -> f64 {
    let y = x.rem_euclid(360.0);
    if y > 180.0 {
        y - 360.0
    } else {
        y
    }
}

/// Magnitude (dB) and phase (deg) deviation of the template from the truth
/// at the given normalized frequencies.
pub fn estimation_errors_at(
    theta: &ThetaEstimate,
    truth: &EquivalentAdmittanceTruth,
    w: &[f64],
) -> Result<AdmittanceErrors> {
    if w.is_empty() {
        return Err(Error::Argument("no evaluation frequencies".into()));
    }
    let mut out = AdmittanceErrors::default();
    for &w in w {
        let est = admittance_from_theta(theta, w)?;
        let tru = true_equivalent_admittance(truth, w);
        let mag = (20.0 * est.norm().log10() - 20.0 * tru.norm().log10()).abs();
        let phase = wrap_degrees((est.arg() - tru.arg()).to_degrees()).abs();
        out.mean_magnitude_db += mag;
        out.mean_phase_deg += phase;
        out.max_magnitude_db = out.max_magnitude_db.max(mag);
        out.max_phase_deg = out.max_phase_deg.max(phase);
    }
    out.mean_magnitude_db /= w.len() as f64;
    out.mean_phase_deg /= w.len() as f64;
    Ok(out)
}

/// Errors at `n_points` log-spaced frequencies spanning `band` (rad/s).
pub fn estimation_errors(
    theta: &ThetaEstimate,
    truth: &EquivalentAdmittanceTruth,
    band: (f64, f64),
    n_points: usize,
    omega_b: f64,
) -> Result<AdmittanceErrors> {
    let (a, b) = band;
    if !(a > 0.0 && b >= a) || n_points == 0 {
        return Err(Error::Argument(format!("invalid band [{a}, {b}] with {n_points} points")));
    }
    let w: Vec<f64> = (0..n_points)
        .map(|k| {
            let f = if n_points == 1 { 0.0 } else { k as f64 / (n_points - 1) as f64 };
            a * (b / a).powf(f) / omega_b
        })
        .collect();
    estimation_errors_at(theta, truth, &w)
}

/// CSV of the regression rows: `omega, W, sigma, k_norm, z1, z2, H11, H12, H21, H22`.
pub fn write_rows_csv<W: Write>(rows: &[RegressionRow], mut out: W) -> Result<()> {
    writeln!(out, "omega,W,sigma,k_norm,z1,z2,H11,H12,H21,H22")?;
    for r in rows {
        writeln!(
            out,
            "{:.16e},{},{:e},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.omega,
            r.weight,
            r.sigma,
            r.k_norm,
            r.z[0],
            r.z[1],
            r.h[(0, 0)],
            r.h[(0, 1)],
            r.h[(1, 0)],
            r.h[(1, 1)]
        )?;
    }
    Ok(())
}
