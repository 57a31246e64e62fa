use serde::{Deserialize, Serialize};

use crate::dsp::FrontendTag;
use crate::error::{Error, Result};
use crate::io::short_hash;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    Unsupervised,
    #[serde(alias = "semisupervised")]
    SemiSupervised,
    #[serde(alias = "baseline")]
    BaselineDense,
}

impl ModelFamily {
    pub fn frontend(self) -> FrontendTag {
        match self {
            ModelFamily::BaselineDense => FrontendTag::Mel128,
            _ => FrontendTag::Gammatone64,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unsupervised" | "u" => Ok(ModelFamily::Unsupervised),
            "semisupervised" | "semi-supervised" | "ss" => Ok(ModelFamily::SemiSupervised),
            "baseline" | "baseline-dense" | "b" => Ok(ModelFamily::BaselineDense),
            other => Err(Error::config(format!("unknown model family '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Unsupervised => "unsupervised",
            ModelFamily::SemiSupervised => "semi-supervised",
            ModelFamily::BaselineDense => "baseline-dense",
        }
    }
}

/// Weights of the reconstruction (`alpha`) and classification (`beta`)
/// terms. They must be nonnegative and sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl LossWeights {
    pub const UNSUPERVISED: LossWeights = LossWeights {
        alpha: 1.0,
        beta: 0.0,
    };

    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let w = LossWeights { alpha, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || (self.alpha + self.beta - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "loss weights must be nonnegative with alpha + beta = 1, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    pub fn combine(&self, mse: f64, cce: f64) -> f64 {
        self.alpha * mse + self.beta * cce
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::UNSUPERVISED
    }
}

/// Architecture of every model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeConfig {
    pub family: ModelFamily,
    /// Frequency bins of the conv input.
    pub input_bins: usize,
    /// Frames per conv input segment.
    pub frames_per_segment: usize,
    /// Hop between consecutive segments, in frames.
    pub hop_frames: usize,
    pub encoder_filters: Vec<usize>,
    pub bottleneck_dim: usize,
    /// Semi-supervised only.
    pub n_classes: Option<usize>,
    pub loss_weights: LossWeights,
    pub baseline_input_dim: usize,
    pub baseline_hidden: usize,
    pub baseline_bottleneck: usize,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig {
            family: ModelFamily::Unsupervised,
            input_bins: 64,
            frames_per_segment: 64,
            hop_frames: 32,
            encoder_filters: vec![32, 64, 128],
            bottleneck_dim: 128,
            n_classes: None,
            loss_weights: LossWeights::UNSUPERVISED,
            baseline_input_dim: 640,
            baseline_hidden: 128,
            baseline_bottleneck: 8,
        }
    }
}

/// Number of 2x poolings in the encoder.
pub const N_BLOCKS: usize = 3;

impl AeConfig {
    pub fn unsupervised() -> Self {
        Self::default()
    }

    pub fn semi_supervised(n_classes: usize, weights: LossWeights) -> Self {
        AeConfig {
            family: ModelFamily::SemiSupervised,
            n_classes: Some(n_classes),
            loss_weights: weights,
            ..Self::default()
        }
    }

    pub fn baseline() -> Self {
        AeConfig {
            family: ModelFamily::BaselineDense,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_weights.validate()?;
        match self.family {
            ModelFamily::BaselineDense => {
                if self.baseline_input_dim == 0
                    || self.baseline_hidden == 0
                    || self.baseline_bottleneck == 0
                {
                    return Err(Error::config("baseline layer widths must be positive"));
                }
                return Ok(());
            }
            ModelFamily::Unsupervised => {
                if self.n_classes.is_some() {
                    return Err(Error::config("unsupervised model takes no n_classes"));
                }
                if self.loss_weights != LossWeights::UNSUPERVISED {
                    return Err(Error::config(
                        "unsupervised model trains on reconstruction only (alpha=1, beta=0)",
                    ));
                }
            }
            ModelFamily::SemiSupervised => match self.n_classes {
                Some(k) if k >= 2 => {}
                _ => {
                    return Err(Error::config(
                        "semi-supervised model needs n_classes >= 2",
                    ))
                }
            },
        }
        if self.encoder_filters.len() != N_BLOCKS || self.encoder_filters.contains(&0) {
            return Err(Error::config(format!(
                "encoder needs exactly {N_BLOCKS} positive filter counts, got {:?}",
                self.encoder_filters
            )));
        }
        let div = 1 << N_BLOCKS;
        if self.input_bins == 0
            || self.frames_per_segment == 0
            || !self.input_bins.is_multiple_of(div)
            || !self.frames_per_segment.is_multiple_of(div)
        {
            return Err(Error::config(format!(
                "input {}x{} must be divisible by {div}",
                self.input_bins, self.frames_per_segment
            )));
        }
        if self.hop_frames == 0 || self.bottleneck_dim == 0 {
            return Err(Error::config("hop_frames and bottleneck_dim must be positive"));
        }
        if self.hop_frames > self.frames_per_segment {
            return Err(Error::config("hop_frames larger than a segment leaves gaps"));
        }
        Ok(())
    }

    /// Per-sample input shape, without the batch axis.
    pub fn sample_shape(&self) -> Vec<usize> {
        match self.family {
            ModelFamily::BaselineDense => vec![self.baseline_input_dim],
            _ => vec![1, self.input_bins, self.frames_per_segment],
        }
    }

    /// `(channels, height, width)` after the encoder's last pooling.
    pub fn encoder_output(&self) -> (usize, usize, usize) {
        let div = 1 << N_BLOCKS;
        (
            *self.encoder_filters.last().unwrap_or(&0),
            self.input_bins / div,
            self.frames_per_segment / div,
        )
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        short_hash(self.to_toml().as_bytes())
    }
}
