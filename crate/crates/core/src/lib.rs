//! Corpus degradation for radio-channel ASR training data and
//! ROVER-style system combination with confidence calibration and scoring.

pub mod audio;
pub mod channel;
pub mod codec;
pub mod error;
pub mod fusion;
pub mod manifest;
pub mod noise;
pub mod pipeline;
pub mod reverb;
pub mod scoring;
pub mod synth;
pub mod vad;

pub use audio::{AudioBuffer, LevelReport};
pub use error::{Error, Result};
