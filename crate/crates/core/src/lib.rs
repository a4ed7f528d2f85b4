//! Multi-user multi-cell MIMO downlink beamforming under two channel
//! knowledge regimes: perfect instantaneous CSIT and pathwise covariance
//! CSIT, where only the slow multipath parameters (amplitudes, angles) are
//! known at the transmitters and the path phases are random.
//!
//! Module map:
//!
//! - [`numkern`]: Hermitian and generalized eigensolvers, water-filling,
//!   orthogonal-complement projections.
//! - [`channel`]: steering vectors, pathwise links, scenarios and channel
//!   sampling.
//! - [`rate`]: receive covariances, MMSE receivers, WSR, the Massive EWSR
//!   limit and its Monte-Carlo counterpart.
//! - [`optim`]: WSMSE and minorization beamformer designs.
//! - [`asympt`]: low/high SNR reference rates and pathwise zero-forcing.
//! - [`harness`]: sweep configuration, SNR sweeps and CSV output.

pub mod asympt;
pub mod channel;
pub mod error;
pub mod harness;
pub mod numkern;
pub mod optim;
pub mod rate;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
/// Dense complex matrix.
pub type CMat = nalgebra::DMatrix<C64>;
/// Dense complex column vector.
pub type CVec = nalgebra::DVector<C64>;
