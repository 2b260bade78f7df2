//! Multi-exponential T2 relaxometry with neural-network surrogates.
//!
//! * [`epg`] — extended-phase-graph forward model of CPMG echo trains.
//! * [`fit`] — conventional χ²-regularized NNLS fitting.
//! * [`relaxometry`] — T2 grids, distributions, MWF and GMT2.
//! * [`phantom`] — synthetic cohorts, noise, apodization, `ECUBE1` I/O.
//! * [`nn`] — dense surrogate networks, training and inference.
//! * [`eval`] — agreement metrics, Wilcoxon test, experiments and the speed benchmark.

// `!(x > 0.0)` is the idiom for rejecting NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod epg;
pub mod error;
pub mod eval;
pub mod fit;
pub mod nn;
pub mod phantom;
pub mod relaxometry;

pub use error::{Error, Result};
