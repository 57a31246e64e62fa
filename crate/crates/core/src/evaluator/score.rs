use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Mode, Tensor};
use crate::dsp::{apply_norm, NormStats, Spectrogram};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::{model_inputs, ModelGraph};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomaly,
    Unknown,
}

impl Label {
    pub fn parse(s: &str) -> Option<Label> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Some(Label::Normal),
            "anomaly" | "anomalous" => Some(Label::Anomaly),
            "unknown" | "" => Some(Label::Unknown),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub clip_id: String,
    pub machine_type: String,
    pub machine_id: String,
    pub label: Label,
    pub anomaly_score: f64,
}

const SCORE_BATCH: usize = 32;

/// Reconstruction MSE of each input, in order, with BN in inference mode.
pub fn segment_scores(model: &ModelGraph, inputs: &[Tensor]) -> Result<Vec<f64>> {
    let mut m = model.clone();
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(SCORE_BATCH) {
        let x = Tensor::stack(&chunk.iter().collect::<Vec<_>>())?;
        let r = m.reconstruct(&x, Mode::Inference)?;
        let per = x.len() / chunk.len();
        out.extend(
            x.data()
                .chunks(per)
                .zip(r.data().chunks(per))
                .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>() / per as f64),
        );
    }
    Ok(out)
}

fn check_lineage(model: &ModelGraph, spec: &Spectrogram, stats: &NormStats) -> Result<()> {
    if spec.tag() != model.metadata.frontend || stats.tag != spec.tag() {
        return Err(Error::shape(format!(
            "model frontend {}, clip {}, stats {}",
            model.metadata.frontend,
            spec.tag(),
            stats.tag
        )));
    }
    if let Some(h) = &model.metadata.norm_stats_hash {
        if *h != stats.hash() {
            return Err(Error::Lineage(format!(
                "model was trained with normalization stats {h}, got {}",
                stats.hash()
            )));
        }
    }
    Ok(())
}

/// Mean over segments of the per-segment reconstruction MSE of the
/// normalized clip. A classifier head, if any, is not used.
pub fn anomaly_score(model: &ModelGraph, spec: &Spectrogram, stats: &NormStats) -> Result<f64> {
    check_lineage(model, spec, stats)?;
    let normed = apply_norm(spec, stats)?;
    let inputs = model_inputs(&model.config, &normed)?;
    let s = segment_scores(model, &inputs)?;
    let score = s.iter().sum::<f64>() / s.len() as f64;
    if !score.is_finite() {
        return Err(Error::Metric("non-finite anomaly score".into()));
    }
    Ok(score)
}

/// Scores many clips, in parallel over clips when enabled.
pub fn score_clips(model: &ModelGraph, specs: &[Spectrogram], stats: &NormStats) -> Vec<Result<f64>> {
    par::map(specs, |s| anomaly_score(model, s, stats))
}

/// Provenance written as the first line of a scores file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lineage {
    pub run_config: String,
    pub data: String,
}

impl Lineage {
    fn line(&self) -> String {
        format!("# run_config={} data={}\n", self.run_config, self.data)
    }

    fn parse(line: &str) -> Option<Lineage> {
        let rest = line.trim().strip_prefix('#')?;
        let mut rc = None;
        let mut data = None;
        for kv in rest.split_whitespace() {
            match kv.split_once('=') {
                Some(("run_config", v)) => rc = Some(v.to_owned()),
                Some(("data", v)) => data = Some(v.to_owned()),
                _ => {}
            }
        }
        Some(Lineage {
            run_config: rc?,
            data: data?,
        })
    }
}

pub fn write_scores(path: &Path, records: &[ScoreRecord], lineage: Option<&Lineage>) -> Result<()> {
    let mut buf = Vec::new();
    if let Some(l) = lineage {
        buf.write_all(l.line().as_bytes())?;
    }
    let mut w = csv::Writer::from_writer(buf);
    for r in records {
        if !r.anomaly_score.is_finite() {
            return Err(Error::Metric(format!("non-finite score for {}", r.clip_id)));
        }
        w.serialize(r)?;
    }
    let buf = w.into_inner().expect("in-memory writer");
    write_atomic(path, &buf)
}

pub fn read_scores(path: &Path) -> Result<(Option<Lineage>, Vec<ScoreRecord>)> {
    let file = std::fs::File::open(path)?;
    let mut first = String::new();
    BufReader::new(file).read_line(&mut first)?;
    let lineage = Lineage::parse(&first);
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let records: Vec<ScoreRecord> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    if let Some(bad) = records.iter().find(|r| !r.anomaly_score.is_finite()) {
        return Err(Error::format(path, format!("non-finite score for {}", bad.clip_id)));
    }
    Ok((lineage, records))
}
