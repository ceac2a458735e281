//! Pulsed-EPR simulation and analysis toolkit.
//!
//! Units throughout: frequencies in MHz (h = 1), times in µs, fields in Gauss.

// Validation uses `!(x > 0.0)` so that NaN is rejected along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod decoherence;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod instrument;
pub mod pulse;
pub mod rng;
pub mod spectrum;
pub mod spin_core;
pub mod trace;

pub use analysis::{FftPeak, FitParam, FitResult};
pub use error::{Error, Result};
pub use trace::DecayTrace;
