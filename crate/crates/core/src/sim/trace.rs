//! Sampled simulation output and its CSV representation.

use std::io::{BufRead, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Diagnostics that only a simulator can know; absent on imported traces.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceDiagnostics {
    /// Measurement-frame angle per PCC (rad, relative to the global frame).
    pub frame_angle: Vec<Vec<f64>>,
    /// Converter modulation angle per PCC (rad, relative to the global frame).
    pub converter_angle: Vec<Vec<f64>>,
    /// Line currents in the global frame, in topology edge order, flowing `i -> j`.
    pub line_current: Vec<Vec<Complex64>>,
}

/// Per-PCC sampled series on a shared timestamp grid. Complex values are `d + jq`
/// in each PCC's measurement frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub fs: f64,
    pub t_discard: f64,
    /// Injected PCC current.
    pub current: Vec<Vec<Complex64>>,
    /// PCC voltage.
    pub voltage: Vec<Vec<Complex64>>,
    /// Excitation applied to the modulation reference during `[t_k, t_k+1)`.
    pub excitation: Vec<Vec<Complex64>>,
    /// Line-susceptance weighted mean of the neighbor voltages, in the PCC's frame.
    pub equivalent_voltage: Vec<Vec<Complex64>>,
    pub diagnostics: Option<TraceDiagnostics>,
}

/// Half-open time window `[start, end)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeWindow {
    pub start: f64,
    pub end: f64,
}

impl TimeWindow {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }
}

/// Which recorded series to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Current(usize),
    Voltage(usize),
    Excitation(usize),
    EquivalentVoltage(usize),
}

impl SimulationTrace {
    pub fn n_pcc(&self) -> usize {
        self.current.len()
    }

    pub fn len(&self) -> usize {
        self.current.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.fs
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.fs
    }

    pub fn channel(&self, channel: Channel) -> Result<&[Complex64]> {
        let (series, i) = match channel {
            Channel::Current(i) => (&self.current, i),
            Channel::Voltage(i) => (&self.voltage, i),
            Channel::Excitation(i) => (&self.excitation, i),
            Channel::EquivalentVoltage(i) => (&self.equivalent_voltage, i),
        };
        series
            .get(i)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Argument(format!("trace has no PCC {i}")))
    }

    /// Sample index range covered by `window`, validated against
    /// `[t_discard, duration]`.
    pub fn window_indices(&self, window: TimeWindow) -> Result<std::ops::Range<usize>> {
        let tol = 0.5 / self.fs;
        if window.start + tol < self.t_discard {
            return Err(Error::Argument(format!(
                "window starts at {} s, before the discarded transient ({} s)",
                window.start, self.t_discard
            )));
        }
        if window.end > self.duration() + tol || window.end <= window.start {
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
        if b <= a {
            return Err(Error::Argument("window contains no samples".into()));
        }
        Ok(a..b)
    }

    /// The analysis window `[t_discard, duration)`.
    pub fn analysis_window(&self) -> TimeWindow {
        TimeWindow::new(self.t_discard, self.duration())
    }

    /// Keeps only the channels of PCC `keep`; every other PCC is zeroed.
    pub fn isolate(&self, keep: usize) -> Self {
        let zero = |series: &Vec<Vec<Complex64>>| {
            series
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    if i == keep {
                        s.clone()
                    } else {
                        vec![Complex64::new(0.0, 0.0); s.len()]
                    }
                })
                .collect()
        };
        Self {
            fs: self.fs,
            t_discard: self.t_discard,
            current: zero(&self.current),
            voltage: zero(&self.voltage),
            excitation: zero(&self.excitation),
            equivalent_voltage: zero(&self.equivalent_voltage),
            diagnostics: None,
        }
    }

    /// Writes `time` plus `i_d_k, i_q_k, v_d_k, v_q_k, r_d_k, r_q_k, vt_d_k, vt_q_k`
    /// for each PCC `k = 1..n`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = vec!["time".to_string()];
        for k in 1..=self.n_pcc() {
            for name in ["i_d", "i_q", "v_d", "v_q", "r_d", "r_q", "vt_d", "vt_q"] {
                header.push(format!("{name}_{k}"));
            }
        }
        writeln!(out, "{}", header.join(","))?;
        let mut line = String::new();
        for t in 0..self.len() {
            line.clear();
            line.push_str(&format!("{:.16e}", self.time(t)));
            for p in 0..self.n_pcc() {
                for z in [
                    self.current[p][t],
                    self.voltage[p][t],
                    self.excitation[p][t],
                    self.equivalent_voltage[p][t],
                ] {
                    line.push_str(&format!(",{:.16e},{:.16e}", z.re, z.im));
                }
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Reads a trace written by [`SimulationTrace::write_csv`]. The sampling rate
    /// is recovered from the time column.
    pub fn read_csv<R: BufRead>(input: R, t_discard: f64) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or(Error::Parse {
                line: 1,
                reason: "empty file".into(),
            })??;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"time") || (cols.len() - 1) % 8 != 0 || cols.len() < 9 {
            return Err(Error::Parse {
                line: 1,
                reason: "expected `time` followed by 8 columns per PCC".into(),
            });
        }
        let n = (cols.len() - 1) / 8;
        for k in 1..=n {
            let base = 1 + 8 * (k - 1);
            if cols[base] != format!("i_d_{k}") || cols[base + 7] != format!("vt_q_{k}") {
                return Err(Error::Parse {
                    line: 1,
                    reason: format!("unexpected column layout for PCC {k}"),
                });
            }
        }

        let mut time = Vec::new();
        let mut series: Vec<Vec<Vec<Complex64>>> = vec![vec![Vec::new(); n]; 4];
        for (idx, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let values = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    line: idx + 2,
                    reason: e.to_string(),
                })?;
            if values.len() != cols.len() {
                return Err(Error::Parse {
                    line: idx + 2,
                    reason: format!("{} fields, expected {}", values.len(), cols.len()),
                });
            }
            time.push(values[0]);
            for p in 0..n {
                for (s, target) in series.iter_mut().enumerate() {
                    let c = 1 + 8 * p + 2 * s;
                    target[p].push(Complex64::new(values[c], values[c + 1]));
                }
            }
        }
        if time.len() < 2 {
            return Err(Error::Parse {
                line: 2,
                reason: "trace needs at least two samples".into(),
            });
        }
        let dt = (time[time.len() - 1] - time[0]) / (time.len() - 1) as f64;
        let mut it = series.into_iter();
        Ok(Self {
            fs: 1.0 / dt,
            t_discard,
            current: it.next().unwrap(),
            voltage: it.next().unwrap(),
            excitation: it.next().unwrap(),
            equivalent_voltage: it.next().unwrap(),
            diagnostics: None,
        })
    }
}

/// Arithmetic mean of a channel over `window` (the steady-state phasor).
pub fn steady_state_extract(
    trace: &SimulationTrace,
    channel: Channel,
    window: TimeWindow,
) -> Result<Complex64> {
    let range = trace.window_indices(window)?;
    let data = &trace.channel(channel)?[range];
    Ok(mean(data))
}

pub fn mean(data: &[Complex64]) -> Complex64 {
    data.iter().sum::<Complex64>() / data.len() as f64
}
