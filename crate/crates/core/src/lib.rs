//! Signal chain of a cough-detection sound camera.
//!
//! Audio I/O and segmentation, spectrogram-family features with their
//! velocity/acceleration maps ("Spectroflow"), from-scratch inference for the
//! V-net, G-net and R-net binary classifiers, noise-mixing augmentation,
//! delay-and-sum beamforming over a simulated microphone array, the streaming
//! detector and the evaluation metrics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio_io;
pub mod augmentation;
pub mod beamforming;
pub mod cnn;
pub mod detector;
pub mod error;
pub mod features;
pub mod label;
pub mod metrics;
pub mod selftest;

pub use audio_io::AudioClip;
pub use error::{Error, Result};
pub use label::Label;

/// Sample rate every model-facing component works at.
pub const MODEL_SAMPLE_RATE: u32 = 16_000;
