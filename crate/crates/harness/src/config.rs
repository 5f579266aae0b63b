//! TOML experiment configuration.
//!
//! Every randomizable parameter is a [`Range`], written either as a single
//! number or as `[lo, hi]`. Line parameters and filter values are p.u.;
//! `omega_c` is rad/s, `k_omega` rad/s per W and `k_v` V per var (converted to
//! p.u. with the configured bases).

use std::collections::BTreeMap;
use std::path::Path;

use gridid::discrim::FdConfig;
use gridid::grid::PerUnitBase;
use gridid::params::WlsConfig;
use gridid::sim::{MeasurementFrame, PrbsChannels};
use gridid::voltage::KfConfig;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Closed interval sampled uniformly; `lo == hi` is a fixed value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Range {
    Fixed(f64),
    Interval([f64; 2]),
}

impl Range {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Range::Fixed(x) => (x, x),
            Range::Interval([a, b]) => (a, b),
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let (a, b) = self.bounds();
        if !(a.is_finite() && b.is_finite()) || b < a {
            return Err(HarnessError::Config(format!("{name}: empty range [{a}, {b}]")));
        }
        Ok(())
    }

    pub fn within(&self, lo: f64, hi: f64) -> bool {
        let (a, b) = self.bounds();
        let tol = 1e-12 * hi.abs().max(1.0);
        a >= lo - tol && b <= hi + tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSpec {
    pub i: usize,
    pub j: usize,
    pub r: Option<f64>,
    pub l: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub n: usize,
    /// Explicit edges (0-based); empty means a complete graph.
    pub edges: Vec<LineSpec>,
    pub r_ij: Range,
    pub l_ij: Range,
    pub s_b: f64,
    pub omega_b: f64,
    pub v_b: f64,
    pub z_b: f64,
    pub l_b: f64,
    pub c_b: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        let base = PerUnitBase::reference();
        Self {
            n: 5,
            edges: Vec::new(),
            r_ij: Range::Interval([0.01, 0.03]),
            l_ij: Range::Interval([0.03, 0.3]),
            s_b: base.s_b,
            omega_b: base.omega_b,
            v_b: base.v_b,
            z_b: base.z_b,
            l_b: base.l_b,
            c_b: base.c_b,
        }
    }
}

impl GridSection {
    pub fn base(&self) -> PerUnitBase {
        PerUnitBase {
            s_b: self.s_b,
            omega_b: self.omega_b,
            v_b: self.v_b,
            z_b: self.z_b,
            l_b: self.l_b,
            c_b: self.c_b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VscRanges {
    pub r_f: Range,
    pub l_f: Range,
    pub c_f: Range,
    pub omega_c: Range,
    pub k_omega: Range,
    pub k_v: Range,
    pub omega_ref: Range,
    pub v_ref: Range,
    pub p_ref: Range,
    pub q_ref: Range,
    /// Closed-loop PLL bandwidth (Hz).
    pub pll_bandwidth: Range,
}

impl Default for VscRanges {
    fn default() -> Self {
        let tau = 2.0 * std::f64::consts::PI;
        Self {
            r_f: Range::Interval([0.01, 0.02]),
            l_f: Range::Interval([0.03, 0.4]),
            c_f: Range::Interval([0.015, 0.02]),
            omega_c: Range::Interval([tau * 5.0, tau * 10.0]),
            k_omega: Range::Interval([2e-5, 3e-5]),
            k_v: Range::Interval([2e-4, 3e-4]),
            omega_ref: Range::Fixed(1.0),
            v_ref: Range::Fixed(1.0),
            p_ref: Range::Interval([0.9, 1.1]),
            q_ref: Range::Fixed(0.0),
            pll_bandwidth: Range::Fixed(50.0),
        }
    }
}

impl VscRanges {
    fn fields(&self) -> [(&'static str, Range); 11] {
        [
            ("r_f", self.r_f),
            ("l_f", self.l_f),
            ("c_f", self.c_f),
            ("omega_c", self.omega_c),
            ("k_omega", self.k_omega),
            ("k_v", self.k_v),
            ("omega_ref", self.omega_ref),
            ("v_ref", self.v_ref),
            ("p_ref", self.p_ref),
            ("q_ref", self.q_ref),
            ("pll_bandwidth", self.pll_bandwidth),
        ]
    }
}

/// Default ranges plus per-converter overrides keyed by 1-based index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VscSection {
    pub defaults: VscRanges,
    pub overrides: BTreeMap<usize, VscRanges>,
}

impl VscSection {
    pub fn ranges(&self, converter: usize) -> &VscRanges {
        self.overrides.get(&(converter + 1)).unwrap_or(&self.defaults)
    }
}

impl Serialize for VscSection {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::Error as _;
        let mut table = toml::Table::try_from(&self.defaults).map_err(S::Error::custom)?;
        for (idx, r) in &self.overrides {
            let t = toml::Table::try_from(r).map_err(S::Error::custom)?;
            table.insert(idx.to_string(), toml::Value::Table(t));
        }
        table.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for VscSection {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let table = toml::Table::deserialize(de)?;
        let mut base = toml::Table::new();
        let mut nested = Vec::new();
        for (k, v) in table {
            match k.parse::<usize>() {
                Ok(idx) => nested.push((idx, v)),
                Err(_) => {
                    base.insert(k, v);
                }
            }
        }
        let defaults: VscRanges = toml::Value::Table(base.clone())
            .try_into()
            .map_err(D::Error::custom)?;
        let mut overrides = BTreeMap::new();
        for (idx, v) in nested {
            if idx == 0 {
                return Err(D::Error::custom("converter sections are numbered from 1"));
            }
            let toml::Value::Table(t) = v else {
                return Err(D::Error::custom(format!("[vsc.{idx}] must be a table")));
            };
            let mut merged = base.clone();
            merged.extend(t);
            let r: VscRanges = toml::Value::Table(merged).try_into().map_err(D::Error::custom)?;
            overrides.insert(idx, r);
        }
        Ok(Self {
            defaults,
            overrides,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub f_s: f64,
    pub duration: f64,
    pub oversample: usize,
    pub t_discard: f64,
    pub frame: MeasurementFrame,
    pub prbs_amplitude: f64,
    pub prbs_register: u32,
    pub prbs_chip_period: usize,
    pub prbs_channels: PrbsChannels,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            f_s: 10e3,
            duration: 20.4,
            oversample: 4,
            t_discard: 1.6,
            frame: MeasurementFrame::Pll,
            prbs_amplitude: 0.001,
            prbs_register: 31,
            prbs_chip_period: 1,
            prbs_channels: PrbsChannels::Dq,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralSection {
    pub segments: usize,
    pub guard_floor: f64,
}

impl Default for SpectralSection {
    fn default() -> Self {
        Self {
            segments: 8,
            guard_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Monte-Carlo run count.
    pub runs: usize,
    pub seed: u64,
    /// Permits ranges outside the reference parameter table.
    pub allow_out_of_range: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            runs: 5,
            seed: 2024,
            allow_out_of_range: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridSection,
    pub vsc: VscSection,
    pub sim: SimSection,
    pub spectral: SpectralSection,
    pub fd: FdConfig,
    pub wls: WlsConfig,
    pub kf: KfConfig,
    pub experiment: ExperimentSection,
}

/// Reference bounds of the randomized parameters.
const PARAMETER_BOUNDS: [(&str, f64, f64); 10] = [
    ("r_f", 0.01, 0.02),
    ("l_f", 0.03, 0.4),
    ("c_f", 0.015, 0.02),
    ("omega_c", 2.0 * std::f64::consts::PI * 5.0, 2.0 * std::f64::consts::PI * 10.0),
    ("k_omega", 2e-5, 3e-5),
    ("k_v", 2e-4, 3e-4),
    ("omega_ref", 1.0, 1.0),
    ("p_ref", 0.9, 1.1),
    ("q_ref", 0.0, 0.0),
    ("v_ref", 0.9, 1.1),
];

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// Restores the full record length and run count of the reference study.
    pub fn full_scale(mut self) -> Self {
        self.sim.duration = 81.6;
        self.experiment.runs = 20;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.n < 2 {
            return Err(HarnessError::Config("a network needs at least 2 converters".into()));
        }
        self.grid.base().validate()?;
        g.r_ij.validate("r_ij")?;
        g.l_ij.validate("l_ij")?;
        if g.r_ij.bounds().0 <= 0.0 || g.l_ij.bounds().0 <= 0.0 {
            return Err(HarnessError::Config("line r and l must be positive".into()));
        }
        for e in &g.edges {
            if e.i >= g.n || e.j >= g.n {
                return Err(HarnessError::Config(format!(
                    "edge ({}, {}) references a converter outside 0..{}",
                    e.i, e.j, g.n
                )));
            }
        }
        if let Some(&idx) = self.vsc.overrides.keys().find(|&&k| k > g.n) {
            return Err(HarnessError::Config(format!(
                "[vsc.{idx}] given for a {}-converter network",
                g.n
            )));
        }
        let strict = !self.experiment.allow_out_of_range;
        if strict {
            if !g.r_ij.within(0.01, 0.03) || !g.l_ij.within(0.03, 0.3) {
                return Err(HarnessError::Config(
                    "line ranges leave the reference table; set allow_out_of_range".into(),
                ));
            }
            for e in &g.edges {
                if e.r.is_some_and(|r| !(0.01..=0.03).contains(&r))
                    || e.l.is_some_and(|l| !(0.03..=0.3).contains(&l))
                {
                    return Err(HarnessError::Config(format!(
                        "edge ({}, {}) leaves the reference table; set allow_out_of_range",
                        e.i, e.j
                    )));
                }
            }
        }
        let sets = std::iter::once(&self.vsc.defaults).chain(self.vsc.overrides.values());
        for ranges in sets {
            for (name, r) in ranges.fields() {
                r.validate(name)?;
                if strict {
                    if let Some(&(_, lo, hi)) = PARAMETER_BOUNDS.iter().find(|b| b.0 == name) {
                        if !r.within(lo, hi) {
                            return Err(HarnessError::Config(format!(
                                "{name} range {:?} leaves the reference table [{lo}, {hi}]; \
                                 set allow_out_of_range",
                                r.bounds()
                            )));
                        }
                    }
                }
            }
            if ranges.pll_bandwidth.bounds().0 <= 0.0 {
                return Err(HarnessError::Config("pll_bandwidth must be positive".into()));
            }
        }
        let s = &self.sim;
        if !(s.t_discard >= 0.0 && s.t_discard < s.duration) {
            return Err(HarnessError::Config(format!(
                "t_discard = {} must lie in [0, duration = {})",
                s.t_discard, s.duration
            )));
        }
        if self.spectral.segments == 0 {
            return Err(HarnessError::Config("spectral.segments must be at least 1".into()));
        }
        if self.experiment.runs == 0 {
            return Err(HarnessError::Config("experiment.runs must be at least 1".into()));
        }
        self.fd.validate(s.f_s)?;
        self.wls.validate()?;
        self.kf.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.grid.n, 5);
        assert_eq!(cfg.experiment.runs, 5);
        assert_eq!(cfg.wls.c2, 1e20);
    }

    #[test]
    fn per_converter_overrides_inherit_defaults() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            [grid]
            n = 3
            [vsc]
            l_f = [0.03, 0.1]
            [vsc.2]
            r_f = 0.015
            "#,
        )
        .unwrap();
        assert_eq!(cfg.vsc.ranges(0).l_f, Range::Interval([0.03, 0.1]));
        assert_eq!(cfg.vsc.ranges(1).r_f, Range::Fixed(0.015));
        assert_eq!(cfg.vsc.ranges(1).l_f, Range::Interval([0.03, 0.1]));

        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn out_of_table_ranges_need_the_override() {
        let text = "[vsc]\nl_f = [0.001, 0.01]\n";
        assert!(matches!(
            ExperimentConfig::from_toml(text),
            Err(HarnessError::Config(_))
        ));
        let text = "[experiment]\nallow_out_of_range = true\n[vsc]\nl_f = [0.001, 0.01]\n";
        assert!(ExperimentConfig::from_toml(text).is_ok());
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "[grid]\nn = 1\n",
            "[grid]\nr_ij = [0.03, 0.01]\n",
            "[experiment]\nruns = 0\n",
            "[sim]\nt_discard = 30.0\n",
            "[fd]\nepsilon = 1.5\n",
            "[wls]\nc2 = 1.0\n",
            "[grid]\nunknown = 1\n",
            "[vsc.9]\nr_f = 0.01\n",
        ] {
            assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn full_scale_profile() {
        let cfg = ExperimentConfig::default().full_scale();
        assert_eq!(cfg.sim.duration, 81.6);
        assert_eq!(cfg.experiment.runs, 20);
    }
}
