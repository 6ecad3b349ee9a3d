//! Achievable rates and capacity of Rayleigh block-fading channels observed
//! through one-bit ADCs.
//!
//! The crate covers two sides of the same problem:
//!
//! * closed-form single-antenna theory ([`siso`]): the QPSK rate, the
//!   capacity with its low-SNR time-sharing segment, the pilot-based LS lower
//!   bound, and the joint pilot-data (JPD) rate, all built on the moment
//!   kernel [`psi::PsiEvaluator`];
//! * a Monte-Carlo multiuser uplink ([`mimo`]) with round-robin pilots, LS
//!   channel estimation and maximum-ratio combining, whose per-user rate is
//!   lower-bounded by a grid-quantized mutual-information estimate ([`mi`]).
//!
//! [`experiment`] composes both into figure-style sweeps written as CSV.

pub mod error;
pub mod experiment;
pub mod mi;
pub mod mimo;
pub mod model;
pub mod psi;
pub mod rng;
pub mod siso;
pub mod special;

pub use error::{Error, Result};
pub use mi::{GridSpec, JointHistogram, MiEstimate};
pub use mimo::{CsiMode, PilotSchedule, SimConfig, UplinkFrame};
pub use model::{
    ChannelMatrix, Constellation, ConstellationKind, CorrelationMode, QuantizedMatrix,
};
pub use psi::PsiEvaluator;
pub use rng::RngStream;
pub use siso::RateResult;

pub use num_complex::Complex64;

/// Converts an SNR in dB to a linear power ratio.
pub fn db_to_linear(snr_db: f64) -> f64 {
    10f64.powf(snr_db / 10.0)
}

/// Converts a linear power ratio to dB.
pub fn linear_to_db(snr: f64) -> f64 {
    10.0 * snr.log10()
}
