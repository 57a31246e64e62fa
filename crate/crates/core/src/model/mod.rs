//! Model families: convolutional autoencoder, semi-supervised variant with a
//! classifier head, and the dense baseline.

pub mod config;
pub mod graph;
pub mod segment;

pub use config::{AeConfig, LossWeights, ModelFamily, N_BLOCKS};
pub use graph::{
    build, build_baseline_dense, build_semisupervised, build_unsupervised, Forward, ModelGraph,
    ModelMetadata,
};
pub use segment::{model_inputs, segment_spectrogram, segment_starts};
