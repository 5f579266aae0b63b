//! Synchronous-reference-frame PLL acting on complex (d + jq) voltages
//! expressed in the simulator's global rotating frame.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// PI gains of the SRF-PLL: `kp` in 1/s, `ki` in 1/s^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PllGains {
    pub kp: f64,
    pub ki: f64,
}

impl PllGains {
    /// Critically damped loop whose closed-loop -3 dB bandwidth is `bandwidth_hz`.
    pub fn critically_damped(bandwidth_hz: f64) -> Self {
        // For zeta = 1 the -3 dB bandwidth is sqrt(3 + sqrt(10)) * omega_n.
        let omega_n = 2.0 * std::f64::consts::PI * bandwidth_hz / (3.0 + 10f64.sqrt()).sqrt();
        Self {
            kp: 2.0 * omega_n,
            ki: omega_n * omega_n,
        }
    }
}

impl Default for PllGains {
    fn default() -> Self {
        Self::critically_damped(50.0)
    }
}

/// Angle estimate (rad, relative to the global frame) and integrator
/// output (rad/s frequency offset).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PllState {
    pub angle: f64,
    pub frequency: f64,
}

/// Phase-detector output: normalized q-component of `v` in the estimated frame.
pub fn phase_error(v_estimated_frame: Complex64) -> f64 {
    let mag = v_estimated_frame.norm();
    if mag > 1e-9 {
        v_estimated_frame.im / mag
    } else {
        0.0
    }
}

/// Time derivatives `(d angle/dt, d frequency/dt)` for a voltage given in the global frame.
pub fn derivative(gains: &PllGains, state: &PllState, v_global: Complex64) -> (f64, f64) {
    let e = phase_error(v_global * Complex64::from_polar(1.0, -state.angle));
    (gains.kp * e + state.frequency, gains.ki * e)
}

/// Advances the loop by `dt` given the voltage already rotated into the
/// current estimated frame. Returns the updated angle estimate.
pub fn pll_step(gains: &PllGains, state: &mut PllState, v_estimated_frame: Complex64, dt: f64) -> f64 {
    let e = phase_error(v_estimated_frame);
    state.frequency += gains.ki * e * dt;
    state.angle += (gains.kp * e + state.frequency) * dt;
    state.angle
}
