//! Decentralized gray-box identification of the grid equivalent seen by each
//! grid-forming converter in an inductive network.
//!
//! Each converter injects a small PRBS into its modulation reference, measures
//! its own PCC current and voltage, and estimates a first-order equivalent
//! admittance `Y(jw) = gamma / (rho + j(w/w_b + 1))` together with the
//! equivalent grid voltage behind it.

pub mod discrim;
pub mod error;
pub mod grid;
pub mod params;
pub mod pipeline;
pub mod sim;
pub mod spectral;
pub mod voltage;

pub use error::{Error, Result};
