//! On-disk spectrogram cache entries.
//!
//! `magic b"ASDFEAT\0", version u8, tag u8, F u32, T u32, values F*T f32`
//! (little endian, row-major).

use std::path::Path;

use crate::dsp::spectrogram::{FrontendTag, Spectrogram};
use crate::error::{Error, Result};
use crate::io::write_atomic;

const MAGIC: &[u8; 8] = b"ASDFEAT\0";
pub const FEATURE_VERSION: u8 = 1;
const HEADER: usize = 8 + 1 + 1 + 4 + 4;

pub fn encode(spec: &Spectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 4 * spec.values().len());
    out.extend_from_slice(MAGIC);
    out.push(FEATURE_VERSION);
    out.push(spec.tag().code());
    out.extend_from_slice(&(spec.n_bins() as u32).to_le_bytes());
    out.extend_from_slice(&(spec.n_frames() as u32).to_le_bytes());
    for &v in spec.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<Spectrogram> {
    let bad = |r: &str| Error::format(origin, r.to_owned());
    if bytes.len() < HEADER || &bytes[..8] != MAGIC {
        return Err(bad("not a feature file"));
    }
    if bytes[8] != FEATURE_VERSION {
        return Err(bad("unsupported feature version"));
    }
    let tag = FrontendTag::from_code(bytes[9]).ok_or_else(|| bad("unknown frontend tag"))?;
    let f = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let t = u32::from_le_bytes(bytes[14..18].try_into().unwrap()) as usize;
    if bytes.len() != HEADER + 4 * f * t {
        return Err(bad("size does not match header"));
    }
    let values = bytes[HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Spectrogram::new(values, f, t, tag)
}

pub fn save(path: &Path, spec: &Spectrogram) -> Result<()> {
    write_atomic(path, &encode(spec))
}

pub fn load(path: &Path) -> Result<Spectrogram> {
    decode(&std::fs::read(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_stores_f32() {
        let vals: Vec<f64> = (0..64 * 3).map(|i| i as f64 * 0.1 - 5.0).collect();
        let s = Spectrogram::new(vals.clone(), 64, 3, FrontendTag::Gammatone64).unwrap();
        let back = decode(&encode(&s), Path::new("f")).unwrap();
        assert_eq!(back.n_frames(), 3);
        assert_eq!(back.tag(), FrontendTag::Gammatone64);
        for (a, b) in back.values().iter().zip(&vals) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn truncated_file_rejected() {
        let s = Spectrogram::new(vec![0.0; 128 * 2], 128, 2, FrontendTag::Mel128).unwrap();
        let mut bytes = encode(&s);
        bytes.pop();
        assert!(decode(&bytes, Path::new("f")).is_err());
    }
}
