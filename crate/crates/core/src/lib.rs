//! Energy-efficiency maximization for a multi-cluster downlink in which an
//! ambient backscatter tag assists cooperative NOMA users.
//!
//! The crate is organized bottom-up:
//!
//! - [`channel`]: geometry, ULA steering vectors, Rician/Rayleigh draws and
//!   the cascaded AP→tag→user channels.
//! - [`clustering`]: near/far user pairing by correlation and gain difference.
//! - [`beamforming`]: zero-forcing active beamformers.
//! - [`power`]: link metrics, the logarithmic SCA bound and the Dinkelbach
//!   power-allocation solver (quartic stationarity + dual updates).
//! - [`psd`]: a small log-barrier solver over the Hermitian PSD cone.
//! - [`passive`]: reflection-coefficient optimization through a lifted,
//!   rank-one penalized surrogate.
//! - [`pipeline`]: the alternating two-stage algorithm and the
//!   non-cooperative baseline.
//! - [`harness`]: Monte-Carlo sweeps, CSV output and run manifests.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beamforming;
pub mod channel;
pub mod clustering;
pub mod config;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod passive;
pub mod pipeline;
pub mod power;
pub mod psd;

pub use config::ScenarioConfig;
pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
/// Dense complex column vector.
pub type CVector = nalgebra::DVector<C64>;
/// Dense complex matrix.
pub type CMatrix = nalgebra::DMatrix<C64>;
