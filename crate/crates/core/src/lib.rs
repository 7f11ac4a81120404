//! Relative transfer matrix (ReTM) estimation and speaker separation with
//! microphone arrays.
//!
//! A ReTM maps the STFT of one microphone group onto another for a fixed
//! set of active sources. Covariances of independent sources add, so the
//! ReTM of "everything except talker l" can be built from short
//! calibration recordings (noise alone, noise plus each talker) and then
//! used to cancel the other sources from a live mixture:
//! `s_l = m_A - R_l m_B`.
//!
//! Modules, bottom up:
//!
//! - [`linalg`]: complex matrices and the pseudoinverse
//! - [`stft`]: sqrt-Hann STFT with perfect reconstruction
//! - [`audio`]: multichannel buffers, WAV I/O, resampling
//! - [`roomsim`]: image-source room simulator and scenario rendering
//! - [`covariance`]: per-bin spatial covariances and their algebra
//! - [`retm`]: the ReTM estimators
//! - [`separation`]: extraction and resynthesis
//! - [`metrics`]: BSS-eval SIR/SDR and the CSV report
//! - [`pipeline`]: simulate / separate / evaluate as used by the `retm` binary
//!
//! [`model`] holds analytic transfer-matrix sets for oracle checks.

pub mod audio;
pub mod covariance;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
mod persist;
pub mod pipeline;
pub mod retm;
pub mod roomsim;
pub mod separation;
pub mod stft;
