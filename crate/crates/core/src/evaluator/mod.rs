//! Anomaly scores, AUC / partial AUC, and per-machine-type result tables.

pub mod metrics;
pub mod score;
pub mod table;

pub use metrics::{auc, pauc, pauc_normals, roc_curve, DEFAULT_P};
pub use score::{
    anomaly_score, read_scores, score_clips, segment_scores, write_scores, Label, Lineage,
    ScoreRecord,
};
pub use table::{
    column_order, evaluate_corpus, CorpusMetrics, Metric, ResultRow, ResultTable, TypeMetrics,
    MACHINE_TYPES, REPORTED_AUC, REPORTED_PAUC,
};
