//! Short-utterance-robust speech anti-spoofing: a Res2Net encoder with
//! squeeze-and-excitation, AM-Softmax with duration-adaptive margins,
//! dynamic chunk size batching, and a duration-binned EER harness.

pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
