//! End-to-end orchestration: manifests, run configuration, the feature
//! cache, and the train / score / evaluate stages.

pub mod config;
pub mod manifest;
pub mod selftest;
pub mod stages;
pub mod synth;

pub use config::{load_config, parse_override, RunConfig, DEFAULT_ROOT, ROOT_ENV};
pub use manifest::{ingest_manifest, scan_dcase, write_manifest, ManifestEntry, Split};
pub use stages::{
    evaluate_stage, extract_features, fit_norm, ingest, report_stage, save_tables, score_stage,
    train_stage, EvalOutcome, ExtractReport, Ingested, ScoresInput, TrainOutcome, Workspace,
};
pub use synth::{generate_synthetic, SynthSpec};
