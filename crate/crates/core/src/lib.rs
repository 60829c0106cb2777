//! Conscious-state estimation from single-lead ECG.
//!
//! A convolutional temporal encoder turns each second of raw ECG into one
//! token, a small transformer with paired key/value heads and half-width
//! rotary embeddings relates the tokens, and a linear head on a
//! classification token scores conscious vs. unconscious. Around the model
//! sit the training loop (mixup, focal loss with effective-number class
//! weights, AdamW), ECG preprocessing, a synthetic ECG generator, and the
//! cross-validated evaluation protocol.

pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod task;
pub mod training;

pub use error::{Error, Result};
pub use task::Task;
