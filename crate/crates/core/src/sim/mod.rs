//! Average-value simulation of droop-controlled grid-forming converters
//! coupled through a resistive-inductive network.
//!
//! Every electrical state is a complex per-unit phasor in one global frame
//! rotating at the base frequency, so inductor and capacitor equations carry
//! the `1/omega_b` time scaling and the `-j omega_b` rotation term. Converter
//! and measurement frames are reached by rotating with their angle relative
//! to that global frame.
//!
//! Integration is fixed-step RK4 with `oversample` sub-steps per measurement
//! sample; the modulation reference is held constant over each sample.

pub mod pll;
pub mod prbs;
pub mod trace;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::NetworkTopology;

pub use pll::{pll_step, PllGains, PllState};
pub use prbs::{normalized_cross_correlation, prbs_complex, prbs_generate, PrbsChannels, PrbsConfig};
pub use trace::{steady_state_extract, Channel, SimulationTrace, TimeWindow, TraceDiagnostics};

const DIVERGENCE_LIMIT: f64 = 1e3;

/// Converter filter, droop controller and measurement PLL settings (p.u. unless noted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VscConfig {
    pub r_f: f64,
    pub l_f: f64,
    pub c_f: f64,
    /// Power low-pass cut-off (rad/s).
    pub omega_c: f64,
    /// Frequency droop gain (p.u. frequency per p.u. power).
    pub k_omega: f64,
    /// Voltage droop gain (p.u. voltage per p.u. reactive power).
    pub k_v: f64,
    pub omega_ref: f64,
    pub v_ref: f64,
    pub p_ref: f64,
    pub q_ref: f64,
    pub pll: PllGains,
    /// Initial converter angle (rad).
    pub theta0: f64,
}

impl Default for VscConfig {
    fn default() -> Self {
        Self {
            r_f: 0.015,
            l_f: 0.1,
            c_f: 0.0175,
            omega_c: 2.0 * std::f64::consts::PI * 7.5,
            k_omega: 8e-4,
            k_v: 6.6e-3,
            omega_ref: 1.0,
            v_ref: 1.0,
            p_ref: 1.0,
            q_ref: 0.0,
            pll: PllGains::default(),
            theta0: 0.0,
        }
    }
}

impl VscConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("r_f", self.r_f),
            ("l_f", self.l_f),
            ("c_f", self.c_f),
            ("omega_c", self.omega_c),
            ("k_omega", self.k_omega),
            ("k_v", self.k_v),
            ("pll_kp", self.pll.kp),
            ("pll_ki", self.pll.ki),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("omega_ref", self.omega_ref),
            ("v_ref", self.v_ref),
            ("p_ref", self.p_ref),
        ] {
            if !(0.5..=1.5).contains(&v) {
                return Err(Error::Config(format!(
                    "{name} = {v} is outside the [0.5, 1.5] p.u. sanity band"
                )));
            }
        }
        if !(self.q_ref.is_finite() && self.q_ref.abs() <= 1.5) {
            return Err(Error::Config(format!("q_ref = {} is out of range", self.q_ref)));
        }
        if !self.theta0.is_finite() {
            return Err(Error::Config("theta0 must be finite".into()));
        }
        Ok(())
    }
}

/// Frame in which PCC quantities are recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementFrame {
    /// Angle tracked by each converter's SRF-PLL.
    #[default]
    Pll,
    /// The converter's own modulation angle (ideal frame).
    Converter,
    /// The global simulation frame.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Measurement sampling frequency (Hz).
    pub f_s: f64,
    /// Total simulated time (s).
    pub duration: f64,
    /// Integration sub-steps per measurement sample.
    pub oversample: usize,
    /// Initial transient excluded from statistics (s).
    pub t_discard: f64,
    pub frame: MeasurementFrame,
    /// Base angular frequency of the per-unit system (rad/s).
    pub omega_b: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            f_s: 10e3,
            duration: 20.4,
            oversample: 4,
            t_discard: 1.6,
            frame: MeasurementFrame::Pll,
            omega_b: 100.0 * std::f64::consts::PI,
        }
    }
}

impl SimConfig {
    /// Number of recorded samples; `duration * f_s` must be an integer.
    pub fn n_total(&self) -> Result<usize> {
        if !(self.f_s > 0.0 && self.duration > 0.0 && self.omega_b > 0.0) {
            return Err(Error::Config(
                "f_s, duration and omega_b must be positive".into(),
            ));
        }
        if self.oversample == 0 {
            return Err(Error::Config("oversample must be at least 1".into()));
        }
        let n = self.duration * self.f_s;
        if (n - n.round()).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "duration * f_s = {n} is not an integer sample count"
            )));
        }
        if !(0.0..self.duration).contains(&self.t_discard) {
            return Err(Error::Config(format!(
                "t_discard = {} must lie in [0, duration)",
                self.t_discard
            )));
        }
        Ok(n.round() as usize)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct ConverterState {
    i_f: Complex64,
    v: Complex64,
    p_filt: f64,
    q_filt: f64,
    delta: f64,
    pll_angle: f64,
    pll_freq: f64,
}

impl ConverterState {
    fn axpy(&mut self, a: f64, x: &Self) {
        self.i_f += x.i_f * a;
        self.v += x.v * a;
        self.p_filt += a * x.p_filt;
        self.q_filt += a * x.q_filt;
        self.delta += a * x.delta;
        self.pll_angle += a * x.pll_angle;
        self.pll_freq += a * x.pll_freq;
    }
}

#[derive(Debug, Clone)]
struct State {
    conv: Vec<ConverterState>,
    lines: Vec<Complex64>,
}

impl State {
    fn copy_from(&mut self, other: &Self) {
        self.conv.copy_from_slice(&other.conv);
        self.lines.copy_from_slice(&other.lines);
    }

    fn axpy(&mut self, a: f64, x: &Self) {
        for (s, d) in self.conv.iter_mut().zip(&x.conv) {
            s.axpy(a, d);
        }
        for (s, d) in self.lines.iter_mut().zip(&x.lines) {
            *s += d * a;
        }
    }
}

struct Plant<'a> {
    topology: &'a NetworkTopology,
    vscs: &'a [VscConfig],
    omega_b: f64,
    line_gain: Vec<(f64, f64)>,
}

impl<'a> Plant<'a> {
    fn new(topology: &'a NetworkTopology, vscs: &'a [VscConfig], omega_b: f64) -> Self {
        let line_gain = topology
            .edges()
            .iter()
            .map(|e| (omega_b / e.line.l, e.line.r))
            .collect();
        Self {
            topology,
            vscs,
            omega_b,
            line_gain,
        }
    }

    fn pcc_currents(&self, x: &State, out: &mut [Complex64]) {
        out.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (e, i) in self.topology.edges().iter().zip(&x.lines) {
            out[e.i] += i;
            out[e.j] -= i;
        }
    }

    /// Writes dx/dt into `dx` for held modulation voltages `u` (global frame).
    fn derivative(&self, x: &State, u: &[Complex64], i_pcc: &mut [Complex64], dx: &mut State) {
        let wb = self.omega_b;
        let j = Complex64::new(0.0, 1.0);
        self.pcc_currents(x, i_pcc);
        for (k, cfg) in self.vscs.iter().enumerate() {
            let s = &x.conv[k];
            let d = &mut dx.conv[k];
            d.i_f = (u[k] - s.v - s.i_f * cfg.r_f) * (wb / cfg.l_f) - j * wb * s.i_f;
            d.v = (s.i_f - i_pcc[k]) * (wb / cfg.c_f) - j * wb * s.v;
            let s_inst = s.v * s.i_f.conj();
            d.p_filt = cfg.omega_c * (s_inst.re - s.p_filt);
            d.q_filt = cfg.omega_c * (s_inst.im - s.q_filt);
            let omega = cfg.omega_ref - cfg.k_omega * (s.p_filt - cfg.p_ref);
            d.delta = wb * (omega - 1.0);
            let (da, df) = pll::derivative(
                &cfg.pll,
                &PllState {
                    angle: s.pll_angle,
                    frequency: s.pll_freq,
                },
                s.v,
            );
            d.pll_angle = da;
            d.pll_freq = df;
        }
        for (n, e) in self.topology.edges().iter().enumerate() {
            let (g, r) = self.line_gain[n];
            let i = x.lines[n];
            dx.lines[n] = (x.conv[e.i].v - x.conv[e.j].v - i * r) * g - j * wb * i;
        }
    }
}

/// Voltage magnitude reference from the reactive-power droop.
fn droop_magnitude(cfg: &VscConfig, q_filt: f64) -> f64 {
    cfg.v_ref - cfg.k_v * (q_filt - cfg.q_ref)
}

/// No-load filter equilibrium for a modulation voltage `u` at nominal frequency.
fn no_load_equilibrium(cfg: &VscConfig, u: Complex64) -> (Complex64, Complex64) {
    let z_f = Complex64::new(cfg.r_f, cfg.l_f);
    let y_c = Complex64::new(0.0, cfg.c_f);
    let v = u / (Complex64::new(1.0, 0.0) + z_f * y_c);
    (y_c * v, v)
}

fn check_state(x: &State, t: f64) -> Result<()> {
    let fail = |state: String, value: f64| Error::Diverged {
        time: t,
        state,
        value,
    };
    for (k, s) in x.conv.iter().enumerate() {
        for (name, value) in [
            ("i_f", s.i_f.norm()),
            ("v", s.v.norm()),
            ("p_filt", s.p_filt.abs()),
            ("q_filt", s.q_filt.abs()),
            ("pll_frequency", s.pll_freq.abs() / 1e3),
        ] {
            if !value.is_finite() || value > DIVERGENCE_LIMIT {
                return Err(fail(format!("converter {k} {name}"), value));
            }
        }
        if !(s.delta.is_finite() && s.pll_angle.is_finite()) {
            return Err(fail(format!("converter {k} angle"), f64::NAN));
        }
    }
    for (n, i) in x.lines.iter().enumerate() {
        let value = i.norm();
        if !value.is_finite() || value > DIVERGENCE_LIMIT {
            return Err(fail(format!("line {n} current"), value));
        }
    }
    Ok(())
}

/// Simulates with PRBS excitation generated from `prbs` (one config per converter).
pub fn simulate(
    topology: &NetworkTopology,
    vscs: &[VscConfig],
    prbs: &[PrbsConfig],
    sim: &SimConfig,
) -> Result<SimulationTrace> {
    let n_total = sim.n_total()?;
    if prbs.len() != topology.n() {
        return Err(Error::Config(format!(
            "{} PRBS configs for {} converters",
            prbs.len(),
            topology.n()
        )));
    }
    let excitation = prbs
        .iter()
        .map(|p| prbs_complex(p, n_total))
        .collect::<Result<Vec<_>>>()?;
    simulate_with_excitation(topology, vscs, &excitation, sim)
}

/// Simulates with arbitrary sampled excitation sequences (one per converter,
/// each at least `duration * f_s` long), added to the modulation reference.
pub fn simulate_with_excitation(
    topology: &NetworkTopology,
    vscs: &[VscConfig],
    excitation: &[Vec<Complex64>],
    sim: &SimConfig,
) -> Result<SimulationTrace> {
    let n_total = sim.n_total()?;
    let n = topology.n();
    if vscs.len() != n || excitation.len() != n {
        return Err(Error::Config(format!(
            "{} converter configs and {} excitations for {n} nodes",
            vscs.len(),
            excitation.len()
        )));
    }
    for cfg in vscs {
        cfg.validate()?;
    }
    if let Some(short) = excitation.iter().position(|e| e.len() < n_total) {
        return Err(Error::Config(format!(
            "excitation {short} has fewer than {n_total} samples"
        )));
    }

    let plant = Plant::new(topology, vscs, sim.omega_b);
    let gamma_sum: Vec<f64> = (0..n).map(|i| topology.degree_gamma(i)).collect();

    let mut x = State {
        conv: vscs
            .iter()
            .map(|cfg| {
                let rot = Complex64::from_polar(1.0, cfg.theta0);
                // Filter states from the unloaded equilibrium at the voltage reference.
                let (i_f, v) = no_load_equilibrium(cfg, Complex64::new(cfg.v_ref, 0.0));
                let s = v * i_f.conj();
                ConverterState {
                    i_f: i_f * rot,
                    v: v * rot,
                    p_filt: s.re,
                    q_filt: s.im,
                    delta: cfg.theta0,
                    pll_angle: cfg.theta0,
                    pll_freq: 0.0,
                }
            })
            .collect(),
        lines: vec![Complex64::new(0.0, 0.0); topology.edges().len()],
    };
    let mut k1 = x.clone();
    let mut k2 = x.clone();
    let mut k3 = x.clone();
    let mut k4 = x.clone();
    let mut tmp = x.clone();
    let mut i_pcc = vec![Complex64::new(0.0, 0.0); n];
    let mut u = vec![Complex64::new(0.0, 0.0); n];

    let zeros = || vec![Vec::with_capacity(n_total); n];
    let mut current: Vec<Vec<Complex64>> = zeros();
    let mut voltage: Vec<Vec<Complex64>> = zeros();
    let mut excit: Vec<Vec<Complex64>> = zeros();
    let mut equivalent: Vec<Vec<Complex64>> = zeros();
    let mut frame_angle: Vec<Vec<f64>> = vec![Vec::with_capacity(n_total); n];
    let mut converter_angle: Vec<Vec<f64>> = vec![Vec::with_capacity(n_total); n];
    let mut line_current: Vec<Vec<Complex64>> =
        vec![Vec::with_capacity(n_total); topology.edges().len()];

    let h = 1.0 / (sim.f_s * sim.oversample as f64);
    for step in 0..n_total {
        let t = step as f64 / sim.f_s;

        // Record measurements at t_k.
        plant.pcc_currents(&x, &mut i_pcc);
        for k in 0..n {
            let s = &x.conv[k];
            let angle = match sim.frame {
                MeasurementFrame::Pll => s.pll_angle,
                MeasurementFrame::Converter => s.delta,
                MeasurementFrame::Global => 0.0,
            };
            let rot = Complex64::from_polar(1.0, -angle);
            current[k].push(i_pcc[k] * rot);
            voltage[k].push(s.v * rot);
            excit[k].push(excitation[k][step]);
            let vt = if gamma_sum[k] > 0.0 {
                topology
                    .neighbors(k)
                    .map(|(j, l)| x.conv[j].v * l.gamma())
                    .sum::<Complex64>()
                    / gamma_sum[k]
            } else {
                s.v
            };
            equivalent[k].push(vt * rot);
            frame_angle[k].push(angle);
            converter_angle[k].push(s.delta);
        }
        for (m, i) in x.lines.iter().enumerate() {
            line_current[m].push(*i);
        }

        // Zero-order hold on the modulation reference.
        for (k, cfg) in vscs.iter().enumerate() {
            let s = &x.conv[k];
            let u_local = Complex64::new(droop_magnitude(cfg, s.q_filt), 0.0) + excitation[k][step];
            u[k] = u_local * Complex64::from_polar(1.0, s.delta);
        }

        for _ in 0..sim.oversample {
            plant.derivative(&x, &u, &mut i_pcc, &mut k1);
            tmp.copy_from(&x);
            tmp.axpy(0.5 * h, &k1);
            plant.derivative(&tmp, &u, &mut i_pcc, &mut k2);
            tmp.copy_from(&x);
            tmp.axpy(0.5 * h, &k2);
            plant.derivative(&tmp, &u, &mut i_pcc, &mut k3);
            tmp.copy_from(&x);
            tmp.axpy(h, &k3);
            plant.derivative(&tmp, &u, &mut i_pcc, &mut k4);
            x.axpy(h / 6.0, &k1);
            x.axpy(h / 3.0, &k2);
            x.axpy(h / 3.0, &k3);
            x.axpy(h / 6.0, &k4);
        }
        check_state(&x, t + 1.0 / sim.f_s)?;
    }

    Ok(SimulationTrace {
        fs: sim.f_s,
        t_discard: sim.t_discard,
        current,
        voltage,
        excitation: excit,
        equivalent_voltage: equivalent,
        diagnostics: Some(TraceDiagnostics {
            frame_angle,
            converter_angle,
            line_current,
        }),
    })
}

/// Magnetic plus electric energy stored in filters and lines at one sample
/// (p.u., frame independent).
pub fn stored_energy(
    topology: &NetworkTopology,
    vscs: &[VscConfig],
    trace: &SimulationTrace,
    k: usize,
) -> Option<f64> {
    let diag = trace.diagnostics.as_ref()?;
    let mut e = 0.0;
    for (p, cfg) in vscs.iter().enumerate() {
        e += 0.5 * cfg.c_f * trace.voltage[p][k].norm_sqr();
    }
    for (m, edge) in topology.edges().iter().enumerate() {
        e += 0.5 * edge.line.l * diag.line_current[m][k].norm_sqr();
    }
    Some(e)
}
