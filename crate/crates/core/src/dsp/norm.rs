//! Per-bin standardization statistics.

use std::path::Path;

use crate::dsp::spectrogram::{FrontendTag, Spectrogram};
use crate::error::{Error, Result};
use crate::io::{short_hash, write_atomic};
use crate::par;

/// Lower bound applied to every fitted standard deviation.
pub const STD_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub tag: FrontendTag,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub n_frames_fitted: f64,
}

/// Per-bin partial sums from one shard of spectrograms. Merging is
/// order-sensitive only at the rounding level.
#[derive(Debug, Clone, PartialEq)]
struct Partial {
    frames: usize,
    sums: Vec<f64>,
}

impl Partial {
    fn merge(mut self, other: &Partial) -> Partial {
        self.frames += other.frames;
        self.sums.iter_mut().zip(&other.sums).for_each(|(a, b)| *a += b);
        self
    }
}

/// Two-pass fit: per-bin means, then per-bin mean squared deviation
/// (population variance). Each pass is a sharded sum over spectrograms.
pub fn fit_norm_stats(specs: &[Spectrogram]) -> Result<NormStats> {
    let first = specs
        .first()
        .ok_or_else(|| Error::Fit("no spectrograms to fit".into()))?;
    let (f, tag) = (first.n_bins(), first.tag());
    if let Some(bad) = specs.iter().find(|s| s.n_bins() != f || s.tag() != tag) {
        return Err(Error::Fit(format!(
            "mixed inputs: {} x{} vs {} x{}",
            tag,
            f,
            bad.tag(),
            bad.n_bins()
        )));
    }
    let zero = Partial {
        frames: 0,
        sums: vec![0.0; f],
    };
    let totals = par::map(specs, |s| Partial {
        frames: s.n_frames(),
        sums: (0..f).map(|i| s.bin_row(i).iter().sum()).collect(),
    })
    .iter()
    .fold(zero.clone(), Partial::merge);
    if totals.frames < 2 {
        return Err(Error::Fit(format!(
            "need at least 2 frames, got {}",
            totals.frames
        )));
    }
    let n = totals.frames as f64;
    let mean: Vec<f64> = totals.sums.iter().map(|s| s / n).collect();
    let sq = par::map(specs, |s| Partial {
        frames: s.n_frames(),
        sums: (0..f)
            .map(|i| s.bin_row(i).iter().map(|v| (v - mean[i]).powi(2)).sum())
            .collect(),
    })
    .iter()
    .fold(zero, Partial::merge);
    let std = sq
        .sums
        .iter()
        .map(|ss| (ss / n).sqrt().max(STD_FLOOR))
        .collect();
    Ok(NormStats {
        tag,
        mean,
        std,
        n_frames_fitted: n,
    })
}

/// `out[i, t] = (in[i, t] - mean[i]) / std[i]`.
pub fn apply_norm(spec: &Spectrogram, stats: &NormStats) -> Result<Spectrogram> {
    if spec.n_bins() != stats.mean.len() || spec.tag() != stats.tag {
        return Err(Error::shape(format!(
            "normalization stats for {} x{} applied to {} x{}",
            stats.tag,
            stats.mean.len(),
            spec.tag(),
            spec.n_bins()
        )));
    }
    let mut out = spec.clone();
    let t = spec.n_frames();
    for (i, row) in out.values_mut().chunks_mut(t.max(1)).enumerate() {
        let (m, s) = (stats.mean[i], stats.std[i]);
        row.iter_mut().for_each(|v| *v = (*v - m) / s);
    }
    Ok(out)
}

/// Inverse of [`apply_norm`].
pub fn invert_norm(spec: &Spectrogram, stats: &NormStats) -> Result<Spectrogram> {
    let mut out = spec.clone();
    let t = spec.n_frames();
    if spec.n_bins() != stats.mean.len() {
        return Err(Error::shape("invert_norm: bin count mismatch"));
    }
    for (i, row) in out.values_mut().chunks_mut(t.max(1)).enumerate() {
        row.iter_mut()
            .for_each(|v| *v = *v * stats.std[i] + stats.mean[i]);
    }
    Ok(out)
}

const MAGIC: &[u8; 8] = b"ASDNORM\0";
const VERSION: u8 = 1;

impl NormStats {
    /// `magic, version u8, tag u8, F u32, n_frames_fitted f64, mean[F] f64, std[F] f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(22 + 16 * self.mean.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.tag.code());
        out.extend_from_slice(&(self.mean.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.n_frames_fitted.to_le_bytes());
        for v in self.mean.iter().chain(&self.std) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |r: &str| Error::format(origin, r.to_owned());
        if bytes.len() < 22 || &bytes[..8] != MAGIC {
            return Err(bad("not a normalization stats file"));
        }
        if bytes[8] != VERSION {
            return Err(bad("unsupported version"));
        }
        let tag = FrontendTag::from_code(bytes[9]).ok_or_else(|| bad("unknown frontend"))?;
        let f = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
        if bytes.len() != 22 + 16 * f {
            return Err(bad("length does not match bin count"));
        }
        let n = f64::from_le_bytes(bytes[14..22].try_into().unwrap());
        let vals: Vec<f64> = bytes[22..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(NormStats {
            tag,
            mean: vals[..f].to_vec(),
            std: vals[f..].to_vec(),
            n_frames_fitted: n,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, path)
    }

    /// Content hash, recorded in the metadata of models trained on these stats.
    pub fn hash(&self) -> String {
        short_hash(&self.to_bytes())
    }

    /// Identity statistics (mean 0, std 1).
    pub fn identity(tag: FrontendTag) -> Self {
        let f = tag.n_bins();
        NormStats {
            tag,
            mean: vec![0.0; f],
            std: vec![1.0; f],
            n_frames_fitted: 0.0,
        }
    }
}
