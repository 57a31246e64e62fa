//! Audio frontend: WAV ingestion, framing, gammatone / Mel filterbank
//! spectrograms, per-bin normalization and the feature cache format.

pub mod featfile;
pub mod filterbank;
pub mod norm;
pub mod spectrogram;
pub mod wave;

pub use filterbank::{build_gammatone_bank, build_mel_bank, FilterbankSpec};
pub use norm::{apply_norm, fit_norm_stats, invert_norm, NormStats, STD_FLOOR};
pub use spectrogram::{
    baseline_mel_vectors, frame_count, frame_signal, gammatone_spectrogram, stack_frames,
    Analyzer, FrontendConfig, FrontendTag, Spectrogram, LOG_EPS,
};
pub use wave::{read_wav, write_wav, Waveform, SAMPLE_RATE};
