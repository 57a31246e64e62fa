//! Synthetic machine-sound corpus: a stable harmonic tone with low noise
//! for normal clips, plus broadband noise bursts for anomalous ones.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dsp::{write_wav, SAMPLE_RATE};
use crate::error::Result;
use crate::evaluator::Label;
use crate::pipeline::manifest::{write_manifest, ManifestEntry, Split};
use crate::rng::substream;

pub const MANIFEST_NAME: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub machine_types: Vec<String>,
    pub n_train: usize,
    pub n_test_normal: usize,
    pub n_test_anomaly: usize,
    pub seconds: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            machine_types: vec!["synth".into()],
            n_train: 60,
            n_test_normal: 20,
            n_test_anomaly: 20,
            seconds: 2.0,
            noise_std: 0.01,
            seed: 0,
        }
    }
}

/// One clip of machine `type_index`.
pub fn synth_clip(type_index: usize, anomalous: bool, spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let n = (spec.seconds * sr).round() as usize;
    let f0 = 220.0 * (1.0 + 0.37 * type_index as f64);
    let phases: Vec<f64> = (0..5).map(|_| rng.gen::<f64>() * TAU).collect();
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let tone: f64 = phases
                .iter()
                .enumerate()
                .map(|(h, ph)| 0.3 / (h + 1) as f64 * (TAU * f0 * (h + 1) as f64 * t + ph).sin())
                .sum();
            tone + spec.noise_std * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    if anomalous {
        let bursts = rng.gen_range(3..=5);
        for _ in 0..bursts {
            let len = (rng.gen_range(0.05..0.15) * sr) as usize;
            let start = rng.gen_range(0..n.saturating_sub(len).max(1));
            for v in &mut x[start..(start + len).min(n)] {
                *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    x
}

/// Writes the corpus under `dir` and returns the manifest path.
pub fn generate_synthetic(dir: &Path, spec: &SynthSpec) -> Result<PathBuf> {
    let mut entries = Vec::new();
    for (ti, mt) in spec.machine_types.iter().enumerate() {
        let mut rng = substream(spec.seed, &format!("synth/{mt}"));
        let plan = std::iter::repeat_n((Split::Train, Label::Normal), spec.n_train)
            .chain(std::iter::repeat_n((Split::Test, Label::Normal), spec.n_test_normal))
            .chain(std::iter::repeat_n((Split::Test, Label::Anomaly), spec.n_test_anomaly));
        for (i, (split, label)) in plan.enumerate() {
            let name = match label {
                Label::Anomaly => "anomaly",
                _ => "normal",
            };
            let clip_id = format!("{mt}/{}/{name}_id_00_{i:08}.wav", split.as_str());
            let path = dir.join(&clip_id);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            write_wav(&path, &synth_clip(ti, label == Label::Anomaly, spec, &mut rng), SAMPLE_RATE)?;
            entries.push(ManifestEntry {
                clip_id,
                path,
                machine_type: mt.clone(),
                machine_id: "id_00".into(),
                split,
                label,
            });
        }
    }
    let manifest = dir.join(MANIFEST_NAME);
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}
