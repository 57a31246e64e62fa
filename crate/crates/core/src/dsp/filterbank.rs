//! Spectral weighting matrices: 4th-order gammatone on an ERB-rate grid,
//! and triangular Mel filters for the dense baseline.

use crate::error::{Error, Result};

/// Gammatone filter order.
pub const GAMMATONE_ORDER: i32 = 4;

/// Glasberg & Moore ERB-rate (number of ERBs below `hz`).
pub fn hz_to_erb_rate(hz: f64) -> f64 {
    21.4 * (1.0 + 0.00437 * hz).log10()
}

pub fn erb_rate_to_hz(erb: f64) -> f64 {
    (10f64.powf(erb / 21.4) - 1.0) / 0.00437
}

/// Equivalent rectangular bandwidth (Hz) of the auditory filter at `hz`.
pub fn erb_bandwidth(hz: f64) -> f64 {
    24.7 * (4.37 * hz / 1000.0 + 1.0)
}

/// Magnitude response of an order-4 gammatone filter centred at `fc`,
/// normalized to 1 at `fc`.
pub fn gammatone_magnitude(f: f64, fc: f64) -> f64 {
    let b = 1.019 * erb_bandwidth(fc);
    let r = (f - fc) / b;
    (1.0 + r * r).powf(-(GAMMATONE_ORDER as f64) / 2.0)
}

/// Rows of nonnegative weights over the `n_fft/2 + 1` one-sided FFT bins.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterbankSpec {
    pub n_filters: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub n_fft: usize,
    pub sample_rate: f64,
    pub center_freqs: Vec<f64>,
    /// `n_filters x (n_fft/2 + 1)`, row-major.
    pub weights: Vec<f64>,
}

impl FilterbankSpec {
    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let nb = self.n_bins();
        &self.weights[i * nb..(i + 1) * nb]
    }

    /// `out[i] = sum_k W[i, k] * power[k]`.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).iter().zip(power).map(|(w, p)| w * p).sum();
        }
    }
}

fn check_range(n_filters: usize, f_min: f64, f_max: f64, n_fft: usize, sr: f64) -> Result<()> {
    if n_filters == 0 {
        return Err(Error::param("n_filters must be >= 1"));
    }
    if !(f_min > 0.0 && f_min < f_max) {
        return Err(Error::param(format!(
            "need 0 < f_min < f_max, got {f_min} / {f_max}"
        )));
    }
    if f_max > sr / 2.0 {
        return Err(Error::param(format!(
            "f_max {f_max} Hz above Nyquist {} Hz",
            sr / 2.0
        )));
    }
    if n_fft < 2 {
        return Err(Error::param("n_fft must be >= 2"));
    }
    Ok(())
}

/// Gammatone weights with centre frequencies spaced uniformly in ERB-rate
/// from `f_min` to `f_max` (both included). A single filter sits at the
/// ERB-rate midpoint. Each row is peak-normalized over the sampled bins.
pub fn build_gammatone_bank(
    n_filters: usize,
    f_min: f64,
    f_max: f64,
    n_fft: usize,
    sample_rate: f64,
) -> Result<FilterbankSpec> {
    check_range(n_filters, f_min, f_max, n_fft, sample_rate)?;
    let (lo, hi) = (hz_to_erb_rate(f_min), hz_to_erb_rate(f_max));
    let center_freqs: Vec<f64> = if n_filters == 1 {
        vec![erb_rate_to_hz(0.5 * (lo + hi))]
    } else {
        (0..n_filters)
            .map(|i| {
                let e = lo + (hi - lo) * i as f64 / (n_filters - 1) as f64;
                erb_rate_to_hz(e).clamp(f_min, f_max)
            })
            .collect()
    };
    let n_bins = n_fft / 2 + 1;
    let bin_hz = sample_rate / n_fft as f64;
    let mut weights = Vec::with_capacity(n_filters * n_bins);
    for &fc in &center_freqs {
        let row: Vec<f64> = (0..n_bins)
            .map(|k| gammatone_magnitude(k as f64 * bin_hz, fc))
            .collect();
        let peak = row.iter().copied().fold(0.0, f64::max);
        weights.extend(row.into_iter().map(|w| w / peak));
    }
    Ok(FilterbankSpec {
        n_filters,
        f_min,
        f_max,
        n_fft,
        sample_rate,
        center_freqs,
        weights,
    })
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-Mel filters with unit peak between `f_min` and `f_max`.
/// Triangles narrower than a bin are widened to reach their nearest bins so
/// that every row keeps positive weight.
pub fn build_mel_bank(
    n_filters: usize,
    f_min: f64,
    f_max: f64,
    n_fft: usize,
    sample_rate: f64,
) -> Result<FilterbankSpec> {
    if n_filters == 0 || !(f_min >= 0.0 && f_min < f_max) || f_max > sample_rate / 2.0 {
        return Err(Error::param(format!(
            "invalid mel bank: {n_filters} filters over {f_min}..{f_max} Hz"
        )));
    }
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_filters + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_filters + 1) as f64))
        .collect();
    let n_bins = n_fft / 2 + 1;
    let bin_hz = sample_rate / n_fft as f64;
    let mut weights = vec![0.0; n_filters * n_bins];
    for m in 0..n_filters {
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut weights[m * n_bins..(m + 1) * n_bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let up = (f - l) / (c - l);
            let down = (r - f) / (r - c);
            *w = up.min(down).max(0.0);
        }
        if row.iter().all(|&w| w == 0.0) {
            let k = ((c / bin_hz).round() as usize).min(n_bins - 1);
            row[k] = 1.0;
        }
    }
    Ok(FilterbankSpec {
        n_filters,
        f_min,
        f_max,
        n_fft,
        sample_rate,
        center_freqs: edges[1..=n_filters].to_vec(),
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_bank() -> FilterbankSpec {
        build_gammatone_bank(64, 50.0, 8000.0, 1024, 16000.0).unwrap()
    }

    #[test]
    fn erb_rate_round_trip() {
        for hz in [50.0, 440.0, 1000.0, 7999.0] {
            assert!((erb_rate_to_hz(hz_to_erb_rate(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn centers_span_the_range_and_increase() {
        let b = default_bank();
        assert_eq!(b.center_freqs.len(), 64);
        assert!((b.center_freqs[0] - 50.0).abs() < 1e-6);
        assert!((b.center_freqs[63] - 8000.0).abs() < 1e-6);
        assert!(b.center_freqs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn rows_are_positive_and_peak_normalized() {
        let b = default_bank();
        for i in 0..b.n_filters {
            let row = b.row(i);
            assert!(row.iter().all(|&w| w >= 0.0));
            let peak = row.iter().copied().fold(0.0, f64::max);
            assert!((peak - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn adjacent_rows_overlap() {
        let b = default_bank();
        for i in 0..63 {
            let ip: f64 = b.row(i).iter().zip(b.row(i + 1)).map(|(a, c)| a * c).sum();
            assert!(ip > 0.0, "rows {i},{} disjoint", i + 1);
        }
    }

    #[test]
    fn single_filter_peaks_at_its_center() {
        let b = build_gammatone_bank(1, 50.0, 8000.0, 1024, 16000.0).unwrap();
        let fc = b.center_freqs[0];
        let row = b.row(0);
        let argmax = (0..row.len())
            .max_by(|&a, &c| row[a].partial_cmp(&row[c]).unwrap())
            .unwrap();
        let bin_hz = 16000.0 / 1024.0;
        assert!((argmax as f64 * bin_hz - fc).abs() <= bin_hz / 2.0 + 1e-9);
    }

    #[test]
    fn above_nyquist_is_rejected() {
        assert!(build_gammatone_bank(64, 50.0, 8001.0, 1024, 16000.0).is_err());
        assert!(build_gammatone_bank(0, 50.0, 8000.0, 1024, 16000.0).is_err());
    }

    #[test]
    fn mel_rows_nonempty() {
        let b = build_mel_bank(128, 0.0, 8000.0, 1024, 16000.0).unwrap();
        for i in 0..128 {
            assert!(b.row(i).iter().any(|&w| w > 0.0));
        }
        assert!(b.center_freqs.windows(2).all(|w| w[0] < w[1]));
    }
}
