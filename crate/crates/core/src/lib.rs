//! Gait index estimation from Kinect-style skeleton sequences.
//!
//! Three LSTM sequence autoencoders (one per coordinate axis) are trained on
//! normal walking only. Their reconstruction errors are weak abnormality
//! indices that get fused into one weighted index per window and averaged
//! over a whole sequence.

pub mod autoencoder;
pub mod dataset;
pub mod error;
pub mod gait_index;
pub mod lstm;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod skeleton;
pub mod synth;
pub mod training;

pub use error::{GaitError, Result};
