//! Core of a multi-task audio-visual noise suppressor.
//!
//! A convolutional recurrent network (CRN) predicts a bounded two-channel
//! mask over the complex STFT of noisy speech. Visual feature sequences can
//! be aligned to the audio frame rate and fused at one of four taps of the
//! network, and an auxiliary acoustic-event-detection (AED) head supervises
//! the visual pathway.
//!
//! The crate is `no_std` (with `alloc`). File formats, IO and the command
//! line live in the companion `avns` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod crn;
pub mod data;
mod error;
pub mod eval;
pub mod fusion;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
mod scalar;
pub mod signal;
pub mod tensor;
pub mod train;
pub mod visual;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Sample rate of every waveform handled by the pipeline.
pub const SAMPLE_RATE: u32 = 16_000;
