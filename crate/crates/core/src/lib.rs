//! Behavioral simulator of a compressive-sensing photoacoustic receiver and
//! its reconstruction backend.
//!
//! The signal chain runs phantom acoustics ([`phantom`]) through the analog
//! front end ([`afe`]) into ternary matrix-vector multiplying SAR ADCs
//! ([`mvm_adc`]), recovers channel data with FISTA over a wavelet basis
//! ([`recon`]), and forms volumes by delay-and-sum backprojection
//! ([`imaging`]).

// Validation uses `!(x > 0.0)` so that NaN is rejected along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod afe;
pub mod block;
pub mod error;
pub mod imaging;
pub mod io;
pub mod matrices;
pub mod metrics;
pub mod mvm_adc;
pub mod phantom;
pub mod pipeline;
pub mod recon;
mod rng;
pub mod wavelet;

pub use block::RawSignalBlock;
pub use error::{Error, Result};
pub use imaging::{GridSpec, ImageVolume};
pub use matrices::MeasurementMatrix;
pub use mvm_adc::{AdcConfig, CompressedBlock};
pub use phantom::{AcousticConfig, Phantom, ScanSchedule, TransducerArray};
pub use recon::{FistaConfig, ReconstructedBlock};
