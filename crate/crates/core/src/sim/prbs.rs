//! Maximal-length pseudo-random binary sequences from a Fibonacci LFSR.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which complex-coordinate channels of the modulation reference are excited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PrbsChannels {
    D,
    Q,
    #[default]
    Dq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrbsConfig {
    pub seed: u64,
    /// Level of each chip (p.u.); samples take the values `+-amplitude`.
    pub amplitude: f64,
    /// Samples per chip.
    pub chip_period: usize,
    pub register_length: u32,
    /// Feedback taps (1-based bit positions). `None` selects a known primitive set.
    pub taps: Option<Vec<u32>>,
    pub channels: PrbsChannels,
}

impl PrbsConfig {
    pub fn new(seed: u64, amplitude: f64) -> Self {
        Self {
            seed,
            amplitude,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude.is_finite() && self.amplitude > 0.0) {
            return Err(Error::Config(format!(
                "PRBS amplitude must be positive, got {}",
                self.amplitude
            )));
        }
        if self.chip_period == 0 {
            return Err(Error::Config("PRBS chip period must be at least 1".into()));
        }
        Lfsr::new(self.register_length, self.taps.as_deref(), self.seed).map(|_| ())
    }
}

impl Default for PrbsConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            amplitude: 0.001,
            chip_period: 1,
            register_length: 31,
            taps: None,
            channels: PrbsChannels::Dq,
        }
    }
}

/// Primitive feedback polynomials, one per register length 2..=32.
const MAXIMAL_TAPS: [&[u32]; 31] = [
    &[2, 1],
    &[3, 2],
    &[4, 3],
    &[5, 3],
    &[6, 5],
    &[7, 6],
    &[8, 6, 5, 4],
    &[9, 5],
    &[10, 7],
    &[11, 9],
    &[12, 11, 10, 4],
    &[13, 12, 11, 8],
    &[14, 13, 12, 2],
    &[15, 14],
    &[16, 15, 13, 4],
    &[17, 14],
    &[18, 11],
    &[19, 18, 17, 14],
    &[20, 17],
    &[21, 19],
    &[22, 21],
    &[23, 18],
    &[24, 23, 22, 17],
    &[25, 22],
    &[26, 6, 2, 1],
    &[27, 5, 2, 1],
    &[28, 25],
    &[29, 27],
    &[30, 6, 4, 1],
    &[31, 28],
    &[32, 22, 2, 1],
];

/// Largest register for which custom taps are verified by exhaustive cycling.
const MAX_VERIFIED_LENGTH: u32 = 24;

pub fn default_taps(register_length: u32) -> Option<&'static [u32]> {
    (2..=32)
        .contains(&register_length)
        .then(|| MAXIMAL_TAPS[(register_length - 2) as usize])
}

/// SplitMix64 finalizer, used to spread seeds over the register state space.
pub fn mix_seed(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct Lfsr {
    state: u64,
    mask: u64,
    length: u32,
}

impl Lfsr {
    pub fn new(length: u32, taps: Option<&[u32]>, seed: u64) -> Result<Self> {
        if !(2..=32).contains(&length) {
            return Err(Error::Config(format!(
                "LFSR register length must be in 2..=32, got {length}"
            )));
        }
        let taps: Vec<u32> = match taps {
            Some(t) => t.to_vec(),
            None => default_taps(length).expect("length checked").to_vec(),
        };
        if taps.iter().any(|&t| t == 0 || t > length) || !taps.contains(&length) {
            return Err(Error::Config(format!(
                "taps {taps:?} invalid for a {length}-bit register"
            )));
        }
        let mask = taps.iter().fold(0u64, |m, &t| m | 1 << (length - t));
        let width = (1u64 << length) - 1;
        let mut state = mix_seed(seed) & width;
        if state == 0 {
            state = 1;
        }
        let lfsr = Self {
            state,
            mask,
            length,
        };

        let known = default_taps(length).map(|d| {
            let mut a = d.to_vec();
            let mut b = taps.clone();
            a.sort_unstable();
            b.sort_unstable();
            a == b
        });
        if known != Some(true) {
            if length > MAX_VERIFIED_LENGTH {
                return Err(Error::Config(format!(
                    "cannot verify custom taps {taps:?} for a {length}-bit register"
                )));
            }
            let period = lfsr.clone().period();
            if period != width {
                return Err(Error::Config(format!(
                    "taps {taps:?} are not maximal: period {period} instead of {width}"
                )));
            }
        }
        Ok(lfsr)
    }

    pub fn next_bit(&mut self) -> bool {
        let out = self.state & 1 == 1;
        let feedback = (self.state & self.mask).count_ones() & 1;
        self.state = (self.state >> 1) | ((feedback as u64) << (self.length - 1));
        out
    }

    /// Steps until the starting state recurs.
    pub fn period(&mut self) -> u64 {
        let start = self.state;
        let mut count = 0u64;
        loop {
            self.next_bit();
            count += 1;
            if self.state == start || count > (1u64 << self.length) {
                return count;
            }
        }
    }
}

fn stream(register_length: u32, taps: Option<&[u32]>, seed: u64, config: &PrbsConfig, n: usize) -> Result<Vec<f64>> {
    let mut lfsr = Lfsr::new(register_length, taps, seed)?;
    let mut out = Vec::with_capacity(n);
    let mut level = 0.0;
    for k in 0..n {
        if k % config.chip_period == 0 {
            level = if lfsr.next_bit() {
                config.amplitude
            } else {
                -config.amplitude
            };
        }
        out.push(level);
    }
    Ok(out)
}

/// Real PRBS of `n_samples` values in `{+amplitude, -amplitude}`.
pub fn prbs_generate(config: &PrbsConfig, n_samples: usize) -> Result<Vec<f64>> {
    if n_samples == 0 {
        return Err(Error::Argument("PRBS length must be positive".into()));
    }
    config.validate()?;
    stream(
        config.register_length,
        config.taps.as_deref(),
        config.seed,
        config,
        n_samples,
    )
}

/// Complex excitation `r_d + j r_q`; the q stream uses an independent derived seed.
pub fn prbs_complex(config: &PrbsConfig, n_samples: usize) -> Result<Vec<Complex64>> {
    let d = prbs_generate(config, n_samples)?;
    let q_seed = mix_seed(config.seed ^ 0x5155_4144_5241_5455);
    let q = stream(
        config.register_length,
        config.taps.as_deref(),
        q_seed,
        config,
        n_samples,
    )?;
    Ok(d.into_iter()
        .zip(q)
        .map(|(d, q)| match config.channels {
            PrbsChannels::D => Complex64::new(d, 0.0),
            PrbsChannels::Q => Complex64::new(0.0, q),
            PrbsChannels::Dq => Complex64::new(d, q),
        })
        .collect())
}

/// `|sum a_k b_k| / sqrt(sum a^2 sum b^2)`.
pub fn normalized_cross_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for k in 0..n {
        ab += a[k] * b[k];
        aa += a[k] * a[k];
        bb += b[k] * b[k];
    }
    (ab / (aa * bb).sqrt()).abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_are_two_level() {
        let cfg = PrbsConfig::new(3, 0.001);
        let x = prbs_generate(&cfg, 10_000).unwrap();
        assert!(x.iter().all(|&v| v == 0.001 || v == -0.001));
        assert!(x.iter().any(|&v| v > 0.0) && x.iter().any(|&v| v < 0.0));
    }

    #[test]
    fn seven_bit_register_has_period_127() {
        let mut lfsr = Lfsr::new(7, None, 11).unwrap();
        assert_eq!(lfsr.period(), 127);
        let cfg = PrbsConfig {
            register_length: 7,
            ..PrbsConfig::new(5, 1.0)
        };
        let x = prbs_generate(&cfg, 127 * 3).unwrap();
        assert_eq!(&x[..127], &x[127..254]);
        assert_ne!(&x[..126], &x[1..127]);
    }

    #[test]
    fn default_taps_are_maximal_up_to_twenty_bits() {
        for len in 2..=20 {
            let mut lfsr = Lfsr::new(len, None, 1).unwrap();
            assert_eq!(lfsr.period(), (1u64 << len) - 1, "length {len}");
        }
    }

    #[test]
    fn rejects_non_maximal_taps() {
        // x^4 + x^2 + 1 is reducible.
        let err = Lfsr::new(4, Some(&[4, 2]), 1).unwrap_err();
        assert!(err.to_string().contains("not maximal"));
        assert!(Lfsr::new(4, Some(&[4, 3]), 1).is_ok());
        assert!(Lfsr::new(31, Some(&[31, 3, 2]), 1).is_err());
    }

    #[test]
    fn deterministic_and_seed_dependent() {
        let a = prbs_generate(&PrbsConfig::new(1, 1.0), 4096).unwrap();
        let b = prbs_generate(&PrbsConfig::new(1, 1.0), 4096).unwrap();
        let c = prbs_generate(&PrbsConfig::new(2, 1.0), 4096).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn distinct_seeds_are_nearly_orthogonal() {
        let n = 1 << 16;
        let a = prbs_generate(&PrbsConfig::new(1, 1.0), n).unwrap();
        let b = prbs_generate(&PrbsConfig::new(2, 1.0), n).unwrap();
        assert!(normalized_cross_correlation(&a, &b) < 0.05);
    }

    #[test]
    fn chip_period_holds_levels() {
        let cfg = PrbsConfig {
            chip_period: 4,
            ..PrbsConfig::new(9, 1.0)
        };
        let x = prbs_generate(&cfg, 400).unwrap();
        for chunk in x.chunks(4) {
            assert!(chunk.iter().all(|&v| v == chunk[0]));
        }
    }

    #[test]
    fn channel_selection() {
        let mut cfg = PrbsConfig::new(4, 0.5);
        cfg.channels = PrbsChannels::D;
        assert!(prbs_complex(&cfg, 64).unwrap().iter().all(|z| z.im == 0.0));
        cfg.channels = PrbsChannels::Q;
        assert!(prbs_complex(&cfg, 64).unwrap().iter().all(|z| z.re == 0.0));
        cfg.channels = PrbsChannels::Dq;
        let z = prbs_complex(&cfg, 1 << 14).unwrap();
        let d: Vec<f64> = z.iter().map(|z| z.re).collect();
        let q: Vec<f64> = z.iter().map(|z| z.im).collect();
        assert!(normalized_cross_correlation(&d, &q) < 0.05);
    }

    #[test]
    fn zero_length_is_an_error() {
        assert!(prbs_generate(&PrbsConfig::default(), 0).is_err());
        assert!(PrbsConfig::new(1, 0.0).validate().is_err());
    }
}
