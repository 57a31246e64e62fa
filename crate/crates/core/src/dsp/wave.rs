use std::path::Path;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

/// Shortest accepted clip: one 40 ms analysis window at 16 kHz.
pub const MIN_SAMPLES: usize = 640;

/// Mono 16 kHz audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::param(format!(
                "sample rate {} Hz not supported (expected {})",
                sample_rate, SAMPLE_RATE
            )));
        }
        if samples.len() < MIN_SAMPLES {
            return Err(Error::ClipTooShort {
                samples: samples.len(),
                needed: MIN_SAMPLES,
            });
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Reads a 16-bit PCM mono 16 kHz WAV file. Anything else is rejected.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let audio_err = |reason: String| Error::Audio {
        path: path.to_owned(),
        reason,
    };
    let reader = hound::WavReader::open(path).map_err(|e| audio_err(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(audio_err(format!(
            "{} channels; only mono is accepted",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(audio_err(format!(
            "{:?} {}-bit samples; only 16-bit PCM is accepted",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(audio_err(format!(
            "sample rate {} Hz; expected {}",
            spec.sample_rate, SAMPLE_RATE
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| audio_err(e.to_string()))?;
    Waveform::new(samples, spec.sample_rate).map_err(|e| audio_err(e.to_string()))
}

/// Writes samples (clipped to `[-1, 1]`) as 16-bit PCM mono.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_io = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Audio {
            path: path.to_owned(),
            reason: other.to_string(),
        },
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(to_io)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(to_io)?;
    }
    w.finalize().map_err(to_io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_rate_and_short_clips() {
        assert!(Waveform::new(vec![0.0; 1000], 44_100).is_err());
        assert!(matches!(
            Waveform::new(vec![0.0; 639], SAMPLE_RATE),
            Err(Error::ClipTooShort { samples: 639, .. })
        ));
        assert!(Waveform::new(vec![0.0; 640], SAMPLE_RATE).is_ok());
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let s: Vec<f64> = (0..800).map(|i| (i as f64 * 0.05).sin() * 0.5).collect();
        write_wav(&p, &s, SAMPLE_RATE).unwrap();
        let w = read_wav(&p).unwrap();
        assert_eq!(w.len(), 800);
        for (a, b) in w.samples().iter().zip(&s) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn stereo_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: SAMPLE_RATE,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for _ in 0..2000 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        let err = read_wav(&p).unwrap_err();
        assert!(err.to_string().contains("mono"));
    }
}
