use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dsp::filterbank::{build_gammatone_bank, build_mel_bank, FilterbankSpec};
use crate::dsp::wave::Waveform;
use crate::error::{Error, Result};

/// Floor added before the logarithm.
pub const LOG_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrontendTag {
    Gammatone64,
    Mel128,
}

impl FrontendTag {
    pub fn n_bins(self) -> usize {
        match self {
            FrontendTag::Gammatone64 => 64,
            FrontendTag::Mel128 => 128,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            FrontendTag::Gammatone64 => 0,
            FrontendTag::Mel128 => 1,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(FrontendTag::Gammatone64),
            1 => Some(FrontendTag::Mel128),
            _ => None,
        }
    }
}

impl fmt::Display for FrontendTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FrontendTag::Gammatone64 => "gammatone64",
            FrontendTag::Mel128 => "mel128",
        })
    }
}

/// Log-energy time-frequency matrix, `n_bins x n_frames` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    values: Vec<f64>,
    n_bins: usize,
    n_frames: usize,
    tag: FrontendTag,
}

impl Spectrogram {
    pub fn new(values: Vec<f64>, n_bins: usize, n_frames: usize, tag: FrontendTag) -> Result<Self> {
        if n_bins != tag.n_bins() {
            return Err(Error::shape(format!(
                "{tag} spectrogram must have {} bins, got {n_bins}",
                tag.n_bins()
            )));
        }
        if values.len() != n_bins * n_frames {
            return Err(Error::shape(format!(
                "{} values for {n_bins}x{n_frames}",
                values.len()
            )));
        }
        Ok(Spectrogram {
            values,
            n_bins,
            n_frames,
            tag,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn tag(&self) -> FrontendTag {
        self.tag
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.values[bin * self.n_frames + frame]
    }

    pub fn bin_row(&self, bin: usize) -> &[f64] {
        &self.values[bin * self.n_frames..(bin + 1) * self.n_frames]
    }

    /// All bins of one frame.
    pub fn frame(&self, t: usize) -> Vec<f64> {
        (0..self.n_bins).map(|i| self.get(i, t)).collect()
    }
}

/// Frame geometry and filterbank range for one frontend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontendConfig {
    pub tag: FrontendTag,
    pub window_ms: f64,
    pub overlap: f64,
    pub f_min: f64,
    pub f_max: f64,
}

impl FrontendConfig {
    pub fn gammatone() -> Self {
        FrontendConfig {
            tag: FrontendTag::Gammatone64,
            window_ms: 40.0,
            overlap: 0.5,
            f_min: 50.0,
            f_max: 8000.0,
        }
    }

    /// Frontend of the dense baseline: 128 Mel bands, 64 ms, 50 % overlap.
    pub fn mel() -> Self {
        FrontendConfig {
            tag: FrontendTag::Mel128,
            window_ms: 64.0,
            overlap: 0.5,
            f_min: 0.0,
            f_max: 8000.0,
        }
    }

    pub fn for_tag(tag: FrontendTag) -> Self {
        match tag {
            FrontendTag::Gammatone64 => Self::gammatone(),
            FrontendTag::Mel128 => Self::mel(),
        }
    }

    pub fn window_samples(&self, sr: u32) -> usize {
        (self.window_ms * sr as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self, sr: u32) -> usize {
        ((self.window_samples(sr) as f64 * (1.0 - self.overlap)).round() as usize).max(1)
    }

    /// Smallest power of two holding one window.
    pub fn n_fft(&self, sr: u32) -> usize {
        self.window_samples(sr).next_power_of_two()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_ms > 0.0) || !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::config(format!(
                "window_ms must be > 0 and overlap in [0, 1), got {} / {}",
                self.window_ms, self.overlap
            )));
        }
        Ok(())
    }
}

/// Number of full windows in `n` samples.
pub fn frame_count(n: usize, window: usize, hop: usize) -> Result<usize> {
    if hop == 0 || window == 0 {
        return Err(Error::param("window and hop must be >= 1"));
    }
    if n < window {
        return Err(Error::ClipTooShort {
            samples: n,
            needed: window,
        });
    }
    Ok(1 + (n - window) / hop)
}

/// Views of consecutive windows; frame `k` starts at `k * hop`. A trailing
/// partial window is dropped.
pub fn frame_signal(samples: &[f64], window: usize, hop: usize) -> Result<Vec<&[f64]>> {
    let n = frame_count(samples.len(), window, hop)?;
    Ok((0..n).map(|k| &samples[k * hop..k * hop + window]).collect())
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// Framed, windowed power spectra followed by a filterbank and log.
pub struct Analyzer {
    config: FrontendConfig,
    bank: FilterbankSpec,
    window: Vec<f64>,
    hop: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Analyzer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Analyzer")
            .field("config", &self.config)
            .field("hop", &self.hop)
            .finish()
    }
}

impl Analyzer {
    pub fn new(config: &FrontendConfig, sample_rate: u32) -> Result<Self> {
        config.validate()?;
        let n_fft = config.n_fft(sample_rate);
        let sr = sample_rate as f64;
        let bank = match config.tag {
            FrontendTag::Gammatone64 => {
                build_gammatone_bank(64, config.f_min, config.f_max, n_fft, sr)?
            }
            FrontendTag::Mel128 => build_mel_bank(128, config.f_min, config.f_max, n_fft, sr)?,
        };
        Ok(Self::with_bank(config, bank, sample_rate))
    }

    pub fn with_bank(config: &FrontendConfig, bank: FilterbankSpec, sample_rate: u32) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(bank.n_fft);
        Analyzer {
            config: config.clone(),
            window: hann(config.window_samples(sample_rate)),
            hop: config.hop_samples(sample_rate),
            bank,
            fft,
        }
    }

    pub fn bank(&self) -> &FilterbankSpec {
        &self.bank
    }

    pub fn tag(&self) -> FrontendTag {
        self.config.tag
    }

    /// Pre-log filterbank energies, `n_filters x T` row-major.
    pub fn band_energies(&self, wave: &Waveform) -> Result<(Vec<f64>, usize)> {
        let frames = frame_signal(wave.samples(), self.window.len(), self.hop)?;
        let t = frames.len();
        let nf = self.bank.n_filters;
        let n_fft = self.bank.n_fft;
        let mut out = vec![0.0; nf * t];
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; self.bank.n_bins()];
        let mut bands = vec![0.0; nf];
        for (ti, frame) in frames.iter().enumerate() {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (b, (s, w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                b.re = s * w;
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            self.bank.apply(&power, &mut bands);
            for (i, &e) in bands.iter().enumerate() {
                out[i * t + ti] = e;
            }
        }
        Ok((out, t))
    }

    /// `log(energy + LOG_EPS)` spectrogram (not normalized).
    pub fn spectrogram(&self, wave: &Waveform) -> Result<Spectrogram> {
        let (mut e, t) = self.band_energies(wave)?;
        e.iter_mut().for_each(|v| *v = (*v + LOG_EPS).ln());
        Spectrogram::new(e, self.bank.n_filters, t, self.config.tag)
    }
}

/// Log-Gammatone spectrogram with the given filterbank and the default
/// 40 ms / 50 % framing.
pub fn gammatone_spectrogram(wave: &Waveform, bank: &FilterbankSpec) -> Result<Spectrogram> {
    let cfg = FrontendConfig::gammatone();
    if bank.n_filters != 64 || bank.n_fft != cfg.n_fft(wave.sample_rate()) {
        return Err(Error::param(format!(
            "gammatone frontend needs 64 filters over {} FFT bins",
            cfg.n_fft(wave.sample_rate())
        )));
    }
    Analyzer::with_bank(&cfg, bank.clone(), wave.sample_rate()).spectrogram(wave)
}

/// Number of frames concatenated per baseline input vector.
pub const STACK_FRAMES: usize = 5;

/// Concatenates frames `t-2..=t+2` of a Mel spectrogram for every centre
/// `t` with a full context, giving `T - 4` vectors of `5 * n_bins` values.
pub fn stack_frames(spec: &Spectrogram) -> Result<Vec<Vec<f64>>> {
    let t = spec.n_frames();
    if t < STACK_FRAMES {
        return Err(Error::ClipTooShort {
            samples: t,
            needed: STACK_FRAMES,
        });
    }
    let frames: Vec<Vec<f64>> = (0..t).map(|i| spec.frame(i)).collect();
    Ok(frames
        .windows(STACK_FRAMES)
        .map(|w| w.concat())
        .collect())
}

/// 640-dim stacked log-Mel vectors for the dense baseline.
pub fn baseline_mel_vectors(wave: &Waveform) -> Result<Vec<Vec<f64>>> {
    let analyzer = Analyzer::new(&FrontendConfig::mel(), wave.sample_rate())?;
    stack_frames(&analyzer.spectrogram(wave)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::wave::SAMPLE_RATE;

    fn enumerate_starts(n: usize, w: usize, h: usize) -> usize {
        let mut count = 0;
        let mut s = 0;
        while s + w <= n {
            count += 1;
            s += h;
        }
        count
    }

    #[test]
    fn frame_counts() {
        assert_eq!(frame_count(160_000, 640, 320).unwrap(), 499);
        assert_eq!(enumerate_starts(160_000, 640, 320), 499);
        assert_eq!(frame_count(640, 640, 320).unwrap(), 1);
        assert!(matches!(
            frame_count(639, 640, 320),
            Err(Error::ClipTooShort { .. })
        ));
    }

    #[test]
    fn frames_start_at_multiples_of_hop() {
        let s: Vec<f64> = (0..2000).map(|i| i as f64).collect();
        let f = frame_signal(&s, 640, 320).unwrap();
        assert_eq!(f.len(), 5);
        for (k, fr) in f.iter().enumerate() {
            assert_eq!(fr[0], (k * 320) as f64);
            assert_eq!(fr.len(), 640);
        }
    }

    #[test]
    fn default_geometry() {
        let g = FrontendConfig::gammatone();
        assert_eq!(g.window_samples(SAMPLE_RATE), 640);
        assert_eq!(g.hop_samples(SAMPLE_RATE), 320);
        assert_eq!(g.n_fft(SAMPLE_RATE), 1024);
        let m = FrontendConfig::mel();
        assert_eq!(m.window_samples(SAMPLE_RATE), 1024);
        assert_eq!(m.hop_samples(SAMPLE_RATE), 512);
    }

    #[test]
    fn silence_maps_to_log_floor() {
        let w = Waveform::new(vec![0.0; 16000], SAMPLE_RATE).unwrap();
        let a = Analyzer::new(&FrontendConfig::gammatone(), SAMPLE_RATE).unwrap();
        let s = a.spectrogram(&w).unwrap();
        assert_eq!(s.n_bins(), 64);
        assert!(s.values().iter().all(|&v| v == LOG_EPS.ln()));
    }

    #[test]
    fn sine_peaks_in_nearest_band() {
        let samples: Vec<f64> = (0..16000)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 16000.0).sin())
            .collect();
        let w = Waveform::new(samples, SAMPLE_RATE).unwrap();
        let a = Analyzer::new(&FrontendConfig::gammatone(), SAMPLE_RATE).unwrap();
        let s = a.spectrogram(&w).unwrap();
        let nearest = (0..64)
            .min_by(|&i, &j| {
                let di = (a.bank().center_freqs[i] - 1000.0).abs();
                let dj = (a.bank().center_freqs[j] - 1000.0).abs();
                di.partial_cmp(&dj).unwrap()
            })
            .unwrap();
        for t in 0..s.n_frames() {
            let frame = s.frame(t);
            let argmax = (0..64)
                .max_by(|&i, &j| frame[i].partial_cmp(&frame[j]).unwrap())
                .unwrap();
            assert_eq!(argmax, nearest, "frame {t}");
        }
    }

    #[test]
    fn stacking_counts() {
        let one = Spectrogram::new(vec![0.0; 128 * 5], 128, 5, FrontendTag::Mel128).unwrap();
        let v = stack_frames(&one).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].len(), 640);
        let hundred = Spectrogram::new(vec![0.0; 128 * 100], 128, 100, FrontendTag::Mel128).unwrap();
        assert_eq!(stack_frames(&hundred).unwrap().len(), 96);
        let four = Spectrogram::new(vec![0.0; 128 * 4], 128, 4, FrontendTag::Mel128).unwrap();
        assert!(stack_frames(&four).is_err());
    }

    #[test]
    fn stacked_vector_layout() {
        let vals: Vec<f64> = (0..128 * 6).map(|i| i as f64).collect();
        let s = Spectrogram::new(vals, 128, 6, FrontendTag::Mel128).unwrap();
        let v = stack_frames(&s).unwrap();
        // Second vector is centred on frame 3: its first block is frame 1.
        for b in 0..128 {
            assert_eq!(v[1][b], s.get(b, 1));
            assert_eq!(v[1][4 * 128 + b], s.get(b, 5));
        }
    }
}
