//! The pipeline stages and their on-disk workspace:
//!
//! ```text
//! <root>/ingested.json
//! <root>/features/<frontend hash>/<clip sha>.feat
//! <root>/features/<frontend hash>/norm.bin
//! <root>/runs/<run hash>/{run.toml, lineage.json, best.ckpt, final.ckpt,
//!                         history.csv, scores.csv}
//! <root>/results/{auc.csv, pauc.csv}
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::dsp::{apply_norm, featfile, fit_norm_stats, read_wav, Analyzer, NormStats, Spectrogram, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::evaluator::{
    column_order, evaluate_corpus, read_scores, score_clips, write_scores, Lineage, Metric,
    ResultTable, ScoreRecord, REPORTED_AUC, REPORTED_PAUC,
};
use crate::io::{sha256_hex, short_hash, write_atomic};
use crate::model::{build, model_inputs, ModelFamily, ModelGraph};
use crate::par;
use crate::pipeline::config::RunConfig;
use crate::pipeline::manifest::{ingest_manifest, ManifestEntry, Split};
use crate::trainer::{split_train_val, train, EpochRecord, Sample, TrainHistory, BEST_CKPT};

pub const INGESTED: &str = "ingested.json";
pub const NORM_FILE: &str = "norm.bin";
pub const RUN_TOML: &str = "run.toml";
pub const LINEAGE_JSON: &str = "lineage.json";
pub const SCORES_CSV: &str = "scores.csv";
pub const AUC_CSV: &str = "auc.csv";
pub const PAUC_CSV: &str = "pauc.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestedClip {
    #[serde(flatten)]
    pub entry: ManifestEntry,
    /// SHA-256 of the file contents.
    pub sha: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ingested {
    pub clips: Vec<IngestedClip>,
    /// Hash of ids, metadata and contents; independent of where files live.
    pub data_hash: String,
}

impl Ingested {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &IngestedClip> {
        self.clips.iter().filter(move |c| c.entry.split == split)
    }
}

/// Provenance of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLineage {
    pub run_config: String,
    pub data: String,
    pub frontend: String,
    pub norm_stats: String,
    /// Class names of the semi-supervised head, in index order.
    pub classes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn ingested_path(&self) -> PathBuf {
        self.root.join(INGESTED)
    }

    pub fn features_dir(&self, frontend_hash: &str) -> PathBuf {
        self.root.join("features").join(frontend_hash)
    }

    pub fn feature_path(&self, frontend_hash: &str, sha: &str) -> PathBuf {
        self.features_dir(frontend_hash).join(format!("{sha}.feat"))
    }

    pub fn norm_path(&self, frontend_hash: &str) -> PathBuf {
        self.features_dir(frontend_hash).join(NORM_FILE)
    }

    pub fn run_dir(&self, run_hash: &str) -> PathBuf {
        self.root.join("runs").join(run_hash)
    }

    pub fn results_dir(&self) -> PathBuf {
        self.root.join("results")
    }

    pub fn load_ingested(&self) -> Result<Ingested> {
        let p = self.ingested_path();
        if !p.exists() {
            return Err(Error::Missing(format!(
                "{} not found; run `asd ingest <manifest.csv>` first",
                p.display()
            )));
        }
        serde_json::from_slice(&std::fs::read(&p)?)
            .map_err(|e| Error::format(&p, e.to_string()))
    }

    pub fn load_norm(&self, cfg: &RunConfig) -> Result<NormStats> {
        let p = self.norm_path(&cfg.frontend_hash());
        if !p.exists() {
            return Err(Error::Missing(format!(
                "normalization stats {} not found; run `asd extract-features` (or `asd fit-norm`) first",
                p.display()
            )));
        }
        NormStats::load(&p)
    }

    /// Cached features of `clips`, failing on the first missing one.
    pub fn load_features<'a>(
        &self,
        cfg: &RunConfig,
        clips: impl IntoIterator<Item = &'a IngestedClip>,
    ) -> Result<Vec<Spectrogram>> {
        let fh = cfg.frontend_hash();
        let clips: Vec<&IngestedClip> = clips.into_iter().collect();
        par::map(&clips, |c| {
            let p = self.feature_path(&fh, &c.sha);
            if !p.exists() {
                return Err(Error::Missing(format!(
                    "features for {} not cached; run `asd extract-features` first",
                    c.entry.clip_id
                )));
            }
            featfile::load(&p)
        })
        .into_iter()
        .collect()
    }
}

fn data_hash(clips: &[IngestedClip]) -> String {
    let mut doc = String::new();
    for c in clips {
        let e = &c.entry;
        doc.push_str(&format!(
            "{},{},{},{},{:?},{}\n",
            e.clip_id,
            e.machine_type,
            e.machine_id,
            e.split.as_str(),
            e.label,
            c.sha
        ));
    }
    short_hash(doc.as_bytes())
}

/// Validates the manifest, hashes every clip and records the result.
pub fn ingest(ws: &Workspace, manifest: &Path) -> Result<Ingested> {
    let entries = ingest_manifest(manifest)?;
    let hashed = par::map(&entries, |e| -> Result<IngestedClip> {
        Ok(IngestedClip {
            entry: e.clone(),
            sha: sha256_hex(&std::fs::read(&e.path)?),
        })
    });
    let clips: Vec<IngestedClip> = hashed.into_iter().collect::<Result<_>>()?;
    let ingested = Ingested {
        data_hash: data_hash(&clips),
        clips,
    };
    let json = serde_json::to_vec_pretty(&ingested).map_err(|e| Error::config(e.to_string()))?;
    write_atomic(&ws.ingested_path(), &json)?;
    info!(
        "ingested {} clips ({} train), data {}",
        ingested.clips.len(),
        ingested.split(Split::Train).count(),
        ingested.data_hash
    );
    Ok(ingested)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractReport {
    pub computed: usize,
    pub cached: usize,
    /// `(clip id, reason)` of clips whose features could not be computed.
    pub failures: Vec<(String, String)>,
    pub norm_written: bool,
}

/// Computes missing features, then refits the normalization statistics on
/// the train split. Per-clip failures are collected, not fatal.
pub fn extract_features(ws: &Workspace, cfg: &RunConfig) -> Result<ExtractReport> {
    let ingested = ws.load_ingested()?;
    let fh = cfg.frontend_hash();
    let analyzer = Analyzer::new(&cfg.frontend(), SAMPLE_RATE)?;
    std::fs::create_dir_all(ws.features_dir(&fh))?;
    let outcomes = par::map(&ingested.clips, |c| -> Result<bool> {
        let p = ws.feature_path(&fh, &c.sha);
        if p.exists() {
            return Ok(false);
        }
        let spec = analyzer.spectrogram(&read_wav(&c.entry.path)?)?;
        featfile::save(&p, &spec)?;
        Ok(true)
    });
    let mut report = ExtractReport {
        computed: 0,
        cached: 0,
        failures: Vec::new(),
        norm_written: false,
    };
    let mut train_ok = Vec::new();
    for (c, o) in ingested.clips.iter().zip(outcomes) {
        match o {
            Ok(true) => report.computed += 1,
            Ok(false) => report.cached += 1,
            Err(e) => {
                warn!("{}: {e}", c.entry.clip_id);
                report.failures.push((c.entry.clip_id.clone(), e.to_string()));
                continue;
            }
        }
        if c.entry.split == Split::Train {
            train_ok.push(c);
        }
    }
    if train_ok.is_empty() {
        return Err(Error::Fit("no train clip has usable features".into()));
    }
    report.norm_written = write_norm(ws, cfg, train_ok)?.1;
    Ok(report)
}

fn write_norm(ws: &Workspace, cfg: &RunConfig, train: Vec<&IngestedClip>) -> Result<(NormStats, bool)> {
    let specs = ws.load_features(cfg, train)?;
    let stats = fit_norm_stats(&specs)?;
    let p = ws.norm_path(&cfg.frontend_hash());
    let bytes = stats.to_bytes();
    if std::fs::read(&p).ok().as_deref() == Some(bytes.as_slice()) {
        return Ok((stats, false));
    }
    write_atomic(&p, &bytes)?;
    Ok((stats, true))
}

/// Refits normalization on the cached train-split features.
pub fn fit_norm(ws: &Workspace, cfg: &RunConfig) -> Result<NormStats> {
    let ingested = ws.load_ingested()?;
    Ok(write_norm(ws, cfg, ingested.split(Split::Train).collect())?.0)
}

fn samples_of(
    model_cfg: &crate::model::AeConfig,
    specs: &[Spectrogram],
    stats: &NormStats,
    classes: &[Option<usize>],
) -> Result<Vec<Vec<Sample>>> {
    par::map(specs, |s| model_inputs(model_cfg, &apply_norm(s, stats)?))
        .into_iter()
        .zip(classes)
        .map(|(inputs, &class)| {
            Ok(inputs?
                .into_iter()
                .map(|input| Sample { input, class })
                .collect())
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub history: TrainHistory,
    pub model: ModelGraph,
}

/// Trains the configured model family on the normalized train split and
/// writes the run directory.
pub fn train_stage(
    ws: &Workspace,
    cfg: &RunConfig,
    progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let ingested = ws.load_ingested()?;
    let stats = ws.load_norm(cfg)?;
    let clips: Vec<&IngestedClip> = ingested.split(Split::Train).collect();
    let specs = ws.load_features(cfg, clips.iter().copied())?;
    let run_hash = cfg.hash();

    let mut cfg = cfg.clone();
    let classes: Vec<String> = if cfg.model.family == ModelFamily::SemiSupervised {
        let names: BTreeSet<&str> = clips.iter().map(|c| c.entry.machine_type.as_str()).collect();
        let names: Vec<String> = names.into_iter().map(str::to_owned).collect();
        match cfg.model.n_classes {
            None => cfg.model.n_classes = Some(names.len()),
            Some(k) if k != names.len() => {
                return Err(Error::config(format!(
                    "n_classes = {k} but the train split has {} machine types",
                    names.len()
                )))
            }
            Some(_) => {}
        }
        names
    } else {
        Vec::new()
    };
    let cfg = cfg.resolve()?;
    let class_of: Vec<Option<usize>> = clips
        .iter()
        .map(|c| classes.iter().position(|n| *n == c.entry.machine_type))
        .collect();

    let strata: Vec<&str> = clips.iter().map(|c| c.entry.machine_type.as_str()).collect();
    let (tr_idx, va_idx) = split_train_val(&strata, cfg.train.val_fraction, cfg.seed)?;
    let per_clip = samples_of(&cfg.model, &specs, &stats, &class_of)?;
    let gather = |idx: &[usize]| -> Vec<Sample> {
        idx.iter().flat_map(|&i| per_clip[i].iter().cloned()).collect()
    };
    let (train_set, val_set) = (gather(&tr_idx), gather(&va_idx));
    info!(
        "{} model: {} train / {} validation clips, {} / {} inputs",
        cfg.model.family.name(),
        tr_idx.len(),
        va_idx.len(),
        train_set.len(),
        val_set.len()
    );

    let run_dir = ws.run_dir(&run_hash);
    std::fs::create_dir_all(&run_dir)?;
    write_atomic(&run_dir.join(RUN_TOML), cfg.to_toml().as_bytes())?;
    let lineage = RunLineage {
        run_config: run_hash.clone(),
        data: ingested.data_hash.clone(),
        frontend: cfg.frontend_hash(),
        norm_stats: stats.hash(),
        classes,
    };
    let lj = serde_json::to_vec_pretty(&lineage).map_err(|e| Error::config(e.to_string()))?;
    write_atomic(&run_dir.join(LINEAGE_JSON), &lj)?;

    let mut model = build(&cfg.model, cfg.seed)?;
    model.metadata.config_hash = run_hash;
    model.metadata.frontend_hash = Some(lineage.frontend.clone());
    model.metadata.norm_stats_hash = Some(lineage.norm_stats.clone());
    let (model, history) = train(model, &train_set, &val_set, &cfg.train, Some(&run_dir), progress)?;
    Ok(TrainOutcome {
        run_dir,
        history,
        model,
    })
}

/// Loads a run's lineage, failing with a pointer to `asd train`.
pub fn load_lineage(run_dir: &Path) -> Result<RunLineage> {
    let p = run_dir.join(LINEAGE_JSON);
    if !p.exists() {
        return Err(Error::Missing(format!(
            "{} not found; run `asd train` first",
            p.display()
        )));
    }
    serde_json::from_slice(&std::fs::read(&p)?).map_err(|e| Error::format(&p, e.to_string()))
}

#[derive(Debug, Clone)]
pub struct ScoreOutcome {
    pub path: PathBuf,
    pub records: Vec<ScoreRecord>,
}

/// Scores every test clip with the run's best checkpoint (or `checkpoint`)
/// and writes the scores CSV into the run directory (or `out`).
pub fn score_stage(
    ws: &Workspace,
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    out: Option<&Path>,
) -> Result<ScoreOutcome> {
    let run_dir = ws.run_dir(&cfg.hash());
    let ckpt = checkpoint.map_or_else(|| run_dir.join(BEST_CKPT), Path::to_path_buf);
    if !ckpt.exists() {
        return Err(Error::Missing(format!(
            "checkpoint {} not found; run `asd train` first",
            ckpt.display()
        )));
    }
    let model = ModelGraph::load(&ckpt)?;
    let fh = cfg.frontend_hash();
    if model.metadata.frontend_hash.as_deref() != Some(fh.as_str()) {
        return Err(Error::Lineage(format!(
            "checkpoint features came from frontend {}, the cache has {fh}",
            model.metadata.frontend_hash.as_deref().unwrap_or("<unknown>")
        )));
    }
    let ingested = ws.load_ingested()?;
    let stats = ws.load_norm(cfg)?;
    let test: Vec<&IngestedClip> = ingested.split(Split::Test).collect();
    if test.is_empty() {
        return Err(Error::Missing("manifest has no test clips".into()));
    }
    let specs = ws.load_features(cfg, test.iter().copied())?;
    let scores = score_clips(&model, &specs, &stats);
    let records = test
        .iter()
        .zip(scores)
        .map(|(c, s)| {
            Ok(ScoreRecord {
                clip_id: c.entry.clip_id.clone(),
                machine_type: c.entry.machine_type.clone(),
                machine_id: c.entry.machine_id.clone(),
                label: c.entry.label,
                anomaly_score: s?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let path = out.map_or_else(|| run_dir.join(SCORES_CSV), Path::to_path_buf);
    let lineage = Lineage {
        run_config: model.metadata.config_hash.clone(),
        data: ingested.data_hash.clone(),
    };
    write_scores(&path, &records, Some(&lineage))?;
    Ok(ScoreOutcome { path, records })
}

/// One scores file to evaluate, with the row name it gets in the tables.
#[derive(Debug, Clone)]
pub struct ScoresInput {
    pub name: String,
    pub path: PathBuf,
}

impl ScoresInput {
    /// `name=path`, or a bare path named after its parent directory.
    pub fn parse(arg: &str) -> Self {
        match arg.split_once('=') {
            Some((n, p)) if !n.is_empty() => ScoresInput {
                name: n.to_owned(),
                path: PathBuf::from(p),
            },
            _ => {
                let path = PathBuf::from(arg);
                let name = path
                    .parent()
                    .and_then(Path::file_name)
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| arg.to_owned());
                ScoresInput { name, path }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub auc: ResultTable,
    pub pauc: ResultTable,
    /// Cells left absent and why.
    pub warnings: Vec<String>,
}

/// AUC and pAUC tables, one row per scores file. Files must share a data
/// lineage unless `force`.
pub fn evaluate_stage(inputs: &[ScoresInput], p: f64, force: bool) -> Result<EvalOutcome> {
    if inputs.is_empty() {
        return Err(Error::Metric("no scores files given".into()));
    }
    let mut loaded = Vec::new();
    for i in inputs {
        let (lin, recs) = read_scores(&i.path)?;
        loaded.push((i, lin, recs));
    }
    let datas: BTreeSet<Option<&str>> = loaded.iter().map(|(_, l, _)| l.as_ref().map(|l| l.data.as_str())).collect();
    if datas.len() > 1 || datas.contains(&None) {
        let msg = format!(
            "scores files have mixed or missing data lineage ({})",
            loaded
                .iter()
                .map(|(i, l, _)| format!(
                    "{}: {}",
                    i.path.display(),
                    l.as_ref().map_or("none", |l| l.data.as_str())
                ))
                .collect::<Vec<_>>()
                .join(", ")
        );
        if !force {
            return Err(Error::Lineage(format!("{msg}; pass --force to compare anyway")));
        }
        warn!("{msg}");
    }
    let mut per_file = Vec::new();
    let mut warnings = Vec::new();
    for (i, _, recs) in &loaded {
        let m = evaluate_corpus(recs, p)?;
        for (t, r) in &m {
            if let Err(e) = r {
                warnings.push(format!("{}: {t} absent: {e}", i.name));
            }
        }
        per_file.push((i.name.clone(), m));
    }
    let cols = column_order(per_file.iter().flat_map(|(_, m)| m.keys()));
    let mut auc = ResultTable::new(cols.clone());
    let mut pauc = ResultTable::new(cols);
    for (name, m) in &per_file {
        auc.push_metrics(name, m, Metric::Auc);
        pauc.push_metrics(name, m, Metric::Pauc);
    }
    Ok(EvalOutcome {
        auc,
        pauc,
        warnings,
    })
}

/// Writes `auc.csv` and `pauc.csv` into `dir`.
pub fn save_tables(out: &EvalOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    out.auc.save(&dir.join(AUC_CSV))?;
    out.pauc.save(&dir.join(PAUC_CSV))
}

/// Evaluation tables followed by the published rows.
pub fn report_stage(inputs: &[ScoresInput], p: f64, force: bool) -> Result<EvalOutcome> {
    let mut out = evaluate_stage(inputs, p, force)?;
    for (name, v) in REPORTED_AUC {
        out.auc.push_reported(&format!("{name} (reported)"), &v);
    }
    for (name, v) in REPORTED_PAUC {
        out.pauc.push_reported(&format!("{name} (reported)"), &v);
    }
    Ok(out)
}
