//! Multi-channel far-field speech front-end.
//!
//! The crate covers the full enhancement chain for a distributed microphone
//! array given oracle speaker segments:
//!
//! - [`signal`]: STFT analysis/synthesis and the shared wave/spectrogram types.
//! - [`sim`]: an anechoic multi-channel scene simulator with exact fractional
//!   delays, used as ground truth for everything else.
//! - [`localization`]: GCC-PHAT, energy-weighted SRP-PHAT, per-speaker DOA
//!   estimation and the two channel selection criteria (energy/phase and
//!   max-SNR).
//! - [`gss`]: segment-guided CACGMM mask estimation and the guided source
//!   separation chain.
//! - [`beamform`]: batch and recursively smoothed spatial covariance
//!   estimation, steering-vector and reference-channel MVDR.
//! - [`metrics`]: SI-SDR, SNR gain and DOA error.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beamform;
pub mod error;
pub mod gss;
mod linalg;
pub mod localization;
pub mod metrics;
pub mod signal;
pub mod sim;

pub use error::{Error, Result};
pub use gss::SegmentAnnotation;
pub use num_complex::Complex64;
pub use signal::{MultiChannelWave, Spectrogram, StftParams, Window};
