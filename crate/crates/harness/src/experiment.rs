//! Parameter sampling, per-run pipeline execution and Monte-Carlo aggregation.

use std::time::Instant;

use gridid::grid::{
    line_admittance, true_equivalent_admittance, Edge, EquivalentAdmittanceTruth, LineParams,
    NetworkTopology,
};
use gridid::params::{admittance_from_theta, estimation_errors_at, AdmittanceErrors, ThetaEstimate};
use gridid::pipeline::{identify, Identification, IdentificationSettings};
use gridid::sim::{simulate, PllGains, PrbsConfig, SimConfig, SimulationTrace, VscConfig};
use gridid::spectral::{fft_scaled, ifft, PccMeasurements};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Range};
use crate::error::{HarnessError, Result};

/// Two lines count as sharing a resistance ratio below this separation.
pub const RHO_SEPARATION: f64 = 1e-6;
const MAX_REDRAWS: usize = 10_000;

/// Stream index of the line-parameter draws; run `m` uses stream `m + 1`.
const GRID_STREAM: u64 = 0;

fn draw(rng: &mut ChaCha8Rng, range: Range) -> f64 {
    let (a, b) = range.bounds();
    if a == b {
        a
    } else {
        rng.random_range(a..=b)
    }
}

/// Line parameters, fixed for all runs of an experiment.
pub fn sample_topology(config: &ExperimentConfig) -> Result<NetworkTopology> {
    let g = &config.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(config.experiment.seed);
    rng.set_stream(GRID_STREAM);
    let pairs: Vec<(usize, usize, Option<f64>, Option<f64>)> = if g.edges.is_empty() {
        (0..g.n)
            .flat_map(|i| (i + 1..g.n).map(move |j| (i, j, None, None)))
            .collect()
    } else {
        g.edges.iter().map(|e| (e.i, e.j, e.r, e.l)).collect()
    };
    let mut edges: Vec<Edge> = Vec::with_capacity(pairs.len());
    for (i, j, r_fixed, l_fixed) in pairs {
        let mut attempts = 0;
        let line = loop {
            let r = r_fixed.unwrap_or_else(|| draw(&mut rng, g.r_ij));
            let l = l_fixed.unwrap_or_else(|| draw(&mut rng, g.l_ij));
            let line = LineParams::new(r, l)?;
            let clash = edges
                .iter()
                .any(|e| (e.line.rho() - line.rho()).abs() < RHO_SEPARATION);
            if !clash {
                break line;
            }
            attempts += 1;
            if attempts > MAX_REDRAWS || (r_fixed.is_some() && l_fixed.is_some()) {
                return Err(HarnessError::Config(format!(
                    "cannot give line ({i}, {j}) a resistance ratio distinct from the other lines"
                )));
            }
        };
        edges.push(Edge { i, j, line });
    }
    Ok(NetworkTopology::new(g.n, edges)?)
}

/// Converter and excitation settings of one Monte-Carlo run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDraw {
    pub run: usize,
    pub vscs: Vec<VscConfig>,
    pub prbs: Vec<PrbsConfig>,
}

pub fn sample_run(config: &ExperimentConfig, run: usize) -> Result<RunDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.experiment.seed);
    rng.set_stream(run as u64 + 1);
    let base = config.grid.base();
    let mut vscs = Vec::with_capacity(config.grid.n);
    for i in 0..config.grid.n {
        let r = config.vsc.ranges(i);
        let r_f = draw(&mut rng, r.r_f);
        let l_f = draw(&mut rng, r.l_f);
        let c_f = draw(&mut rng, r.c_f);
        let omega_c = draw(&mut rng, r.omega_c);
        let k_omega = base.frequency_droop_to_pu(draw(&mut rng, r.k_omega));
        let k_v = base.voltage_droop_to_pu(draw(&mut rng, r.k_v));
        let omega_ref = draw(&mut rng, r.omega_ref);
        let v_ref = draw(&mut rng, r.v_ref);
        let p_ref = draw(&mut rng, r.p_ref);
        let q_ref = draw(&mut rng, r.q_ref);
        let bw = draw(&mut rng, r.pll_bandwidth);
        let vsc = VscConfig {
            r_f,
            l_f,
            c_f,
            omega_c,
            k_omega,
            k_v,
            omega_ref,
            v_ref,
            p_ref,
            q_ref,
            pll: PllGains::critically_damped(bw),
            theta0: 0.0,
        };
        vsc.validate()?;
        vscs.push(vsc);
    }
    let s = &config.sim;
    let prbs = (0..config.grid.n)
        .map(|_| PrbsConfig {
            seed: rng.random(),
            amplitude: s.prbs_amplitude,
            chip_period: s.prbs_chip_period,
            register_length: s.prbs_register,
            taps: None,
            channels: s.prbs_channels,
        })
        .collect();
    Ok(RunDraw { run, vscs, prbs })
}

pub fn sim_config(config: &ExperimentConfig) -> SimConfig {
    SimConfig {
        f_s: config.sim.f_s,
        duration: config.sim.duration,
        oversample: config.sim.oversample,
        t_discard: config.sim.t_discard,
        frame: config.sim.frame,
        omega_b: config.grid.omega_b,
    }
}

pub fn settings(config: &ExperimentConfig) -> IdentificationSettings {
    IdentificationSettings {
        segments: config.spectral.segments,
        guard_floor: config.spectral.guard_floor,
        omega_b: config.grid.omega_b,
        fd: config.fd,
        wls: config.wls,
        kf: config.kf,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VoltageMetrics {
    /// In-band relative RMS error of the deviation magnitude spectrum.
    pub relative_rms: f64,
    pub correlation_d: f64,
    pub correlation_q: f64,
    pub dc_estimate: [f64; 2],
    pub dc_truth: [f64; 2],
    /// `| |v^ss| - |v_true^ss| | / |v_true^ss|`.
    pub dc_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PccResult {
    pub pcc: usize,
    pub theta: ThetaEstimate,
    pub retained_bins: usize,
    pub admittance: AdmittanceErrors,
    /// Mean magnitude error (dB) of the segment-averaged ETFE on the retained bins.
    pub etfe_magnitude_db: f64,
    pub voltage: VoltageMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: usize,
    pub draw: RunDraw,
    pub pcc: Vec<PccResult>,
    /// Wall-clock seconds; excluded from determinism comparisons.
    pub elapsed_s: f64,
}

/// Per-PCC series kept for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageShowcase {
    pub pcc: usize,
    pub fs: f64,
    pub segment_start: f64,
    pub omega: Vec<f64>,
    pub estimated: Vec<Complex64>,
    pub truth: Vec<Complex64>,
    pub estimated_time: Vec<Complex64>,
    pub truth_time: Vec<Complex64>,
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Exact small-signal equivalent voltage over the reconstruction segment,
/// computed from the neighbors' voltages rotated into PCC `pcc`'s frame.
pub fn true_voltage_segment(
    trace: &SimulationTrace,
    topology: &NetworkTopology,
    pcc: usize,
    id: &Identification,
    omega_b: f64,
) -> Result<(Vec<Complex64>, Complex64)> {
    let diag = trace.diagnostics.as_ref().ok_or_else(|| {
        HarnessError::Config("voltage truth needs a simulated trace with diagnostics".into())
    })?;
    let window = trace.window_indices(trace.analysis_window())?;
    let n = id.segment_omega.len();
    let seg_start = window.end - n;
    let truth = EquivalentAdmittanceTruth::from_topology(topology, pcc);
    let frame_i = &diag.frame_angle[pcc];

    let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
    for line in &truth.lines {
        let j = line.node;
        let rotated: Vec<Complex64> = window
            .clone()
            .map(|t| trace.voltage[j][t] * Complex64::from_polar(1.0, diag.frame_angle[j][t] - frame_i[t]))
            .collect();
        let mean = rotated.iter().sum::<Complex64>() / rotated.len() as f64;
        let seg: Vec<Complex64> = rotated[seg_start - window.start..].iter().map(|v| v - mean).collect();
        let v = fft_scaled(&seg);
        for k in 0..n {
            spectrum[k] += line_admittance(line.gamma, line.rho, id.segment_omega[k] / omega_b) * v[k];
        }
    }
    for k in 0..n {
        spectrum[k] /= true_equivalent_admittance(&truth, id.segment_omega[k] / omega_b);
    }
    let vt = &trace.equivalent_voltage[pcc][window];
    let dc = vt.iter().sum::<Complex64>() / vt.len() as f64;
    Ok((spectrum, dc))
}

fn evaluate_pcc(
    trace: &SimulationTrace,
    topology: &NetworkTopology,
    pcc: usize,
    id: &Identification,
    config: &ExperimentConfig,
) -> Result<(PccResult, VoltageShowcase)> {
    let omega_b = config.grid.omega_b;
    let truth = EquivalentAdmittanceTruth::from_topology(topology, pcc);
    let retained = id.retained_omega();
    let w: Vec<f64> = retained.iter().map(|o| o / omega_b).collect();
    let admittance = estimation_errors_at(&id.theta, &truth, &w)?;

    let mut etfe_err = 0.0;
    for (k, h) in id.etfe.h.iter().enumerate() {
        if id.weights.w[k] == 1 {
            let y = true_equivalent_admittance(&truth, id.etfe.omega[k] / omega_b);
            let h = h.ok_or_else(|| HarnessError::Pcc {
                pcc,
                source: gridid::Error::Numerical {
                    bin: k,
                    reason: "ETFE undefined at a retained bin".into(),
                },
            })?;
            etfe_err += (20.0 * h.norm().log10() - 20.0 * y.norm().log10()).abs();
        }
    }
    etfe_err /= retained.len() as f64;

    let (true_spec, true_dc) = true_voltage_segment(trace, topology, pcc, id, omega_b)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (k, &o) in id.segment_omega.iter().enumerate() {
        if config.fd.in_band(o) {
            num += (id.voltage.spectrum[k].norm() - true_spec[k].norm()).powi(2);
            den += true_spec[k].norm_sqr();
        }
    }
    let mut with_dc = true_spec.clone();
    with_dc[0] += true_dc;
    let truth_time = ifft(&with_dc);
    let td: Vec<f64> = truth_time.iter().map(|z| z.re).collect();
    let tq: Vec<f64> = truth_time.iter().map(|z| z.im).collect();
    let dc = id.voltage.dc;
    let voltage = VoltageMetrics {
        relative_rms: (num / den).sqrt(),
        correlation_d: pearson(&id.voltage.d, &td),
        correlation_q: pearson(&id.voltage.q, &tq),
        dc_estimate: [dc.re, dc.im],
        dc_truth: [true_dc.re, true_dc.im],
        dc_relative_error: (dc.norm() - true_dc.norm()).abs() / true_dc.norm(),
    };
    let showcase = VoltageShowcase {
        pcc,
        fs: trace.fs,
        segment_start: id.segment_start,
        omega: id.segment_omega.clone(),
        estimated: id.voltage.spectrum.clone(),
        truth: true_spec,
        estimated_time: id
            .voltage
            .d
            .iter()
            .zip(&id.voltage.q)
            .map(|(&d, &q)| Complex64::new(d, q))
            .collect(),
        truth_time,
    };
    Ok((
        PccResult {
            pcc,
            theta: id.theta,
            retained_bins: retained.len(),
            admittance,
            etfe_magnitude_db: etfe_err,
            voltage,
        },
        showcase,
    ))
}

/// Simulates one run and identifies every PCC from its own channels only.
pub fn run_pipeline(
    config: &ExperimentConfig,
    topology: &NetworkTopology,
    draw: &RunDraw,
) -> Result<(RunResult, Vec<VoltageShowcase>)> {
    let start = Instant::now();
    let trace = simulate(topology, &draw.vscs, &draw.prbs, &sim_config(config))?;
    let settings = settings(config);
    let per_pcc: Vec<(PccResult, VoltageShowcase)> = (0..topology.n())
        .into_par_iter()
        .map(|pcc| {
            let meas = PccMeasurements::from_trace(&trace, pcc)?;
            let id = identify(&meas, &settings).map_err(|source| HarnessError::Pcc { pcc, source })?;
            evaluate_pcc(&trace, topology, pcc, &id, config)
        })
        .collect::<Result<_>>()?;
    let (pcc, showcase) = per_pcc.into_iter().unzip();
    Ok((
        RunResult {
            run: draw.run,
            draw: draw.clone(),
            pcc,
            elapsed_s: start.elapsed().as_secs_f64(),
        },
        showcase,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Statistic {
    pub mean: f64,
    pub max: f64,
    pub std: f64,
}

impl Statistic {
    pub fn from_samples(x: &[f64]) -> Self {
        if x.is_empty() {
            return Self::default();
        }
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = if x.len() > 1 {
            x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            max: x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stats {
    pub samples: usize,
    pub mean_magnitude_db: Statistic,
    pub max_magnitude_db: Statistic,
    pub mean_phase_deg: Statistic,
    pub max_phase_deg: Statistic,
    pub etfe_magnitude_db: Statistic,
    pub voltage_relative_rms: Statistic,
    pub voltage_correlation_d: Statistic,
    pub voltage_correlation_q: Statistic,
    pub dc_relative_error: Statistic,
    pub rho: Statistic,
    pub gamma: Statistic,
}

impl Stats {
    pub fn from_results<'a>(results: impl IntoIterator<Item = &'a PccResult>) -> Self {
        let r: Vec<&PccResult> = results.into_iter().collect();
        let col = |f: &dyn Fn(&PccResult) -> f64| {
            Statistic::from_samples(&r.iter().map(|p| f(p)).collect::<Vec<_>>())
        };
        Self {
            samples: r.len(),
            mean_magnitude_db: col(&|p| p.admittance.mean_magnitude_db),
            max_magnitude_db: col(&|p| p.admittance.max_magnitude_db),
            mean_phase_deg: col(&|p| p.admittance.mean_phase_deg),
            max_phase_deg: col(&|p| p.admittance.max_phase_deg),
            etfe_magnitude_db: col(&|p| p.etfe_magnitude_db),
            voltage_relative_rms: col(&|p| p.voltage.relative_rms),
            voltage_correlation_d: col(&|p| p.voltage.correlation_d),
            voltage_correlation_q: col(&|p| p.voltage.correlation_q),
            dc_relative_error: col(&|p| p.voltage.dc_relative_error),
            rho: col(&|p| p.theta.rho),
            gamma: col(&|p| p.theta.gamma),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run: usize,
    pub result: Option<RunResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub config: ExperimentConfig,
    pub topology: NetworkTopology,
    pub truth: Vec<EquivalentAdmittanceTruth>,
    /// Segment length of the estimation grid.
    pub segment_len: usize,
    pub runs: Vec<RunOutcome>,
    /// Some run failed.
    pub partial: bool,
    /// All PCCs of all successful runs.
    pub pooled: Stats,
    pub per_pcc: Vec<Stats>,
}

impl MonteCarloSummary {
    pub fn successful(&self) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().filter_map(|r| r.result.as_ref())
    }

    /// Copy with wall-clock fields zeroed.
    pub fn without_timing(&self) -> Self {
        let mut s = self.clone();
        for r in s.runs.iter_mut().filter_map(|r| r.result.as_mut()) {
            r.elapsed_s = 0.0;
        }
        s
    }

    /// Signed estimation-grid frequencies within the band (rad/s).
    pub fn band_omega(&self) -> Vec<f64> {
        let n = self.segment_len;
        let res = 2.0 * std::f64::consts::PI * self.config.sim.f_s / n as f64;
        (0..=n / 2)
            .map(|k| k as f64 * res)
            .filter(|&o| self.config.fd.in_band(o))
            .collect()
    }

    /// Per in-band bin: `(omega, |Y|, arg Y deg, mean |Y^|, std |Y^|, mean arg Y^ deg)`.
    pub fn admittance_bands(&self, pcc: usize) -> Result<Vec<[f64; 6]>> {
        let omega_b = self.config.grid.omega_b;
        let thetas: Vec<ThetaEstimate> = self.successful().map(|r| r.pcc[pcc].theta).collect();
        self.band_omega()
            .into_iter()
            .map(|o| {
                let w = o / omega_b;
                let y = true_equivalent_admittance(&self.truth[pcc], w);
                let est = thetas
                    .iter()
                    .map(|t| admittance_from_theta(t, w))
                    .collect::<gridid::Result<Vec<_>>>()?;
                let mags: Vec<f64> = est.iter().map(|y| y.norm()).collect();
                let m = Statistic::from_samples(&mags);
                let phase = if est.is_empty() {
                    0.0
                } else {
                    est.iter().map(|y| y.arg().to_degrees()).sum::<f64>() / est.len() as f64
                };
                Ok([o, y.norm(), y.arg().to_degrees(), m.mean, m.std, phase])
            })
            .collect()
    }
}

pub struct MonteCarloOutput {
    pub summary: MonteCarloSummary,
    /// Voltage plot data of the first successful run.
    pub showcase: Vec<VoltageShowcase>,
}

pub fn aggregate(
    config: &ExperimentConfig,
    topology: &NetworkTopology,
    segment_len: usize,
    runs: Vec<RunOutcome>,
) -> MonteCarloSummary {
    let ok: Vec<&RunResult> = runs.iter().filter_map(|r| r.result.as_ref()).collect();
    let pooled = Stats::from_results(ok.iter().flat_map(|r| r.pcc.iter()));
    let per_pcc = (0..topology.n())
        .map(|i| Stats::from_results(ok.iter().map(|r| &r.pcc[i])))
        .collect();
    MonteCarloSummary {
        config: config.clone(),
        topology: topology.clone(),
        truth: (0..topology.n())
            .map(|i| EquivalentAdmittanceTruth::from_topology(topology, i))
            .collect(),
        segment_len,
        partial: runs.iter().any(|r| r.result.is_none()),
        runs,
        pooled,
        per_pcc,
    }
}

/// Runs `config.experiment.runs` independent runs, concurrently when `parallel`.
pub fn monte_carlo(config: &ExperimentConfig, parallel: bool) -> Result<MonteCarloOutput> {
    config.validate()?;
    let topology = sample_topology(config)?;
    let draws = (0..config.experiment.runs)
        .map(|m| sample_run(config, m))
        .collect::<Result<Vec<_>>>()?;
    let job = |d: &RunDraw| run_pipeline(config, &topology, d);
    let outcomes: Vec<Result<(RunResult, Vec<VoltageShowcase>)>> = if parallel {
        draws.par_iter().map(job).collect()
    } else {
        draws.iter().map(job).collect()
    };

    let mut showcase = Vec::new();
    let mut runs = Vec::with_capacity(outcomes.len());
    for (m, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok((result, sc)) => {
                if showcase.is_empty() {
                    showcase = sc;
                }
                runs.push(RunOutcome {
                    run: m,
                    result: Some(result),
                    error: None,
                });
            }
            Err(e) => {
                log::error!("run {m} failed: {e}");
                runs.push(RunOutcome {
                    run: m,
                    result: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    let segment_len = segment_length(config)?;
    Ok(MonteCarloOutput {
        summary: aggregate(config, &topology, segment_len, runs),
        showcase,
    })
}

/// Segment length implied by the record length and segment count.
pub fn segment_length(config: &ExperimentConfig) -> Result<usize> {
    let samples = ((config.sim.duration - config.sim.t_discard) * config.sim.f_s).round() as usize;
    Ok(gridid::spectral::segment_length(samples, config.spectral.segments)?)
}
