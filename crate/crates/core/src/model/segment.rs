use crate::autodiff::Tensor;
use crate::dsp::{stack_frames, Spectrogram};
use crate::error::{Error, Result};
use crate::model::{AeConfig, ModelFamily};

/// Start frames of the segments covering `t` frames.
pub fn segment_starts(t: usize, frames_per_segment: usize, hop: usize) -> Vec<usize> {
    let hop = hop.max(1);
    if t <= frames_per_segment {
        return vec![0];
    }
    let last = t - frames_per_segment;
    let mut starts: Vec<usize> = (0..=last).step_by(hop).collect();
    if *starts.last().unwrap() != last {
        starts.push(last);
    }
    starts
}

/// Frame index of position `i` after symmetric reflection (edge not
/// repeated) of a sequence of length `t`.
fn reflect(i: usize, t: usize) -> usize {
    if t == 1 {
        return 0;
    }
    let period = 2 * (t - 1);
    let j = i % period;
    if j < t {
        j
    } else {
        period - j
    }
}

/// Cuts a spectrogram into `[1, F, F_t]` tensors. Clips shorter than one
/// segment are reflection-padded to a single segment; otherwise the last
/// segment is anchored at the end of the clip.
pub fn segment_spectrogram(spec: &Spectrogram, frames_per_segment: usize, hop: usize) -> Vec<Tensor> {
    let (f, t) = (spec.n_bins(), spec.n_frames());
    segment_starts(t, frames_per_segment, hop)
        .into_iter()
        .map(|s| {
            let mut data = Vec::with_capacity(f * frames_per_segment);
            for bin in 0..f {
                let row = spec.bin_row(bin);
                data.extend((0..frames_per_segment).map(|k| row[reflect(s + k, t)]));
            }
            Tensor::new(vec![1, f, frames_per_segment], data).expect("segment shape")
        })
        .collect()
}

/// Model inputs for one normalized spectrogram: `[1, F, F_t]` segments for
/// the convolutional families, stacked-frame vectors for the baseline.
pub fn model_inputs(config: &AeConfig, normalized: &Spectrogram) -> Result<Vec<Tensor>> {
    if normalized.tag() != config.family.frontend() {
        return Err(Error::shape(format!(
            "{} model cannot read {} features",
            config.family.name(),
            normalized.tag()
        )));
    }
    match config.family {
        ModelFamily::BaselineDense => stack_frames(normalized)?
            .into_iter()
            .map(|v| {
                if v.len() != config.baseline_input_dim {
                    return Err(Error::shape(format!(
                        "stacked frame has {} values, model expects {}",
                        v.len(),
                        config.baseline_input_dim
                    )));
                }
                Tensor::new(vec![v.len()], v)
            })
            .collect(),
        _ => {
            if normalized.n_bins() != config.input_bins {
                return Err(Error::shape(format!(
                    "spectrogram has {} bins, model expects {}",
                    normalized.n_bins(),
                    config.input_bins
                )));
            }
            Ok(segment_spectrogram(
                normalized,
                config.frames_per_segment,
                config.hop_frames,
            ))
        }
    }
}
