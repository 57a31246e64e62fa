//! Anomalous sound detection with log-Gammatone features and convolutional
//! autoencoders trained on normal machine sounds only.

pub mod autodiff;
pub mod dsp;
pub mod error;
pub mod evaluator;
pub mod io;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
