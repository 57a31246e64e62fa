use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evaluator::metrics::{auc, pauc};
use crate::evaluator::score::{Label, ScoreRecord};
use crate::io::write_atomic;

/// Column order of the result tables.
pub const MACHINE_TYPES: [&str; 6] = ["ToyCar", "ToyConveyor", "fan", "pump", "slider", "valve"];

/// Metrics of one machine type, as fractions in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypeMetrics {
    pub auc: f64,
    pub pauc: f64,
    pub n_normal: usize,
    pub n_anomaly: usize,
}

/// Per-type metrics, or the reason a type could not be scored (no normal
/// or no anomalous clips, too few normals for the partial AUC).
pub type CorpusMetrics = BTreeMap<String, std::result::Result<TypeMetrics, String>>;

pub fn evaluate_corpus(records: &[ScoreRecord], p: f64) -> Result<CorpusMetrics> {
    let mut by_type: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in records {
        let e = by_type.entry(r.machine_type.clone()).or_default();
        match r.label {
            Label::Normal => e.0.push(r.anomaly_score),
            Label::Anomaly => e.1.push(r.anomaly_score),
            Label::Unknown => {}
        }
    }
    if by_type.is_empty() {
        return Err(Error::Metric("no score records".into()));
    }
    let mut out = CorpusMetrics::new();
    for (t, (n, a)) in by_type {
        let m = match (auc(&n, &a), pauc(&n, &a, p)) {
            (Ok(auc), Ok(pauc)) => Ok(TypeMetrics {
                auc,
                pauc,
                n_normal: n.len(),
                n_anomaly: a.len(),
            }),
            (Err(e), _) | (_, Err(e)) => Err(format!("{t}: {e}")),
        };
        out.insert(t, m);
    }
    Ok(out)
}

/// Canonical types first, any others alphabetically after.
pub fn column_order<'a>(types: impl IntoIterator<Item = &'a String>) -> Vec<String> {
    let mut cols: Vec<String> = MACHINE_TYPES.iter().map(|s| s.to_string()).collect();
    let mut extra: Vec<String> = types
        .into_iter()
        .filter(|t| !MACHINE_TYPES.contains(&t.as_str()))
        .cloned()
        .collect();
    extra.sort();
    extra.dedup();
    cols.extend(extra);
    cols
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub framework: String,
    /// Percent values, aligned with [`ResultTable::columns`].
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<ResultRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Auc,
    Pauc,
}

impl ResultTable {
    pub fn new(columns: Vec<String>) -> Self {
        ResultTable {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push_metrics(&mut self, framework: &str, metrics: &CorpusMetrics, which: Metric) {
        let values = self
            .columns
            .iter()
            .map(|c| {
                metrics.get(c).and_then(|r| r.as_ref().ok()).map(|m| {
                    100.0
                        * match which {
                            Metric::Auc => m.auc,
                            Metric::Pauc => m.pauc,
                        }
                })
            })
            .collect();
        self.rows.push(ResultRow {
            framework: framework.to_owned(),
            values,
        });
    }

    /// Adds a row of published percentages for the canonical types.
    pub fn push_reported(&mut self, framework: &str, values: &[f64; 6]) {
        let values = self
            .columns
            .iter()
            .map(|c| {
                MACHINE_TYPES
                    .iter()
                    .position(|t| t == c)
                    .map(|i| values[i])
            })
            .collect();
        self.rows.push(ResultRow {
            framework: framework.to_owned(),
            values,
        });
    }

    /// CSV with a `framework` column; absent cells are empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("framework");
        for c in &self.columns {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.framework);
            for v in &r.values {
                s.push(',');
                if let Some(v) = v {
                    s.push_str(&format!("{v:.2}"));
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    /// Fixed-width text rendering for terminals.
    pub fn render(&self, title: &str) -> String {
        let w0 = self
            .rows
            .iter()
            .map(|r| r.framework.len())
            .chain([title.len()])
            .max()
            .unwrap_or(0);
        let widths: Vec<usize> = self.columns.iter().map(|c| c.len().max(6)).collect();
        let mut s = format!("{title:<w0$}");
        for (c, w) in self.columns.iter().zip(&widths) {
            s.push_str(&format!("  {c:>w$}"));
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("{:<w0$}", r.framework));
            for (v, w) in r.values.iter().zip(&widths) {
                match v {
                    Some(v) => s.push_str(&format!("  {v:>w$.2}")),
                    None => s.push_str(&format!("  {:>w$}", "-")),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Published AUC rows (percent) in [`MACHINE_TYPES`] order.
pub const REPORTED_AUC: [(&str, [f64; 6]); 6] = [
    ("B", [78.77, 72.53, 65.83, 72.89, 84.76, 66.28]),
    ("U", [95.67, 96.63, 79.87, 81.51, 80.86, 82.85]),
    ("U FD", [91.12, 93.36, 80.40, 82.61, 81.16, 83.19]),
    ("SS-0.7-0.3", [87.27, 90.35, 78.63, 80.33, 78.94, 80.94]),
    ("SS-0.5-0.5", [73.16, 80.82, 70.82, 71.84, 70.53, 71.77]),
    ("SS-0.3-0.7", [63.82, 74.65, 63.41, 64.09, 62.15, 64.18]),
];

/// Published pAUC rows (percent, p = 0.1).
pub const REPORTED_PAUC: [(&str, [f64; 6]); 6] = [
    ("B", [67.58, 60.43, 52.45, 59.99, 66.53, 50.98]),
    ("U", [87.14, 90.45, 70.78, 70.99, 70.69, 71.62]),
    ("U FD", [73.41, 80.32, 72.56, 72.23, 69.94, 72.34]),
    ("SS-0.7-0.3", [74.21, 81.50, 71.26, 70.94, 70.08, 70.83]),
    ("SS-0.5-0.5", [60.42, 71.63, 60.32, 58.88, 58.51, 58.70]),
    ("SS-0.3-0.7", [55.58, 68.18, 57.33, 55.67, 55.07, 55.39]),
];

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: &str, label: Label, s: f64) -> ScoreRecord {
        ScoreRecord {
            clip_id: format!("{t}-{s}"),
            machine_type: t.into(),
            machine_id: "id_00".into(),
            label,
            anomaly_score: s,
        }
    }

    fn perfect(t: &str) -> Vec<ScoreRecord> {
        let mut v: Vec<_> = (0..10).map(|i| rec(t, Label::Normal, i as f64 * 0.01)).collect();
        v.extend((0..3).map(|i| rec(t, Label::Anomaly, 1.0 + i as f64)));
        v
    }

    #[test]
    fn perfect_type_reports_hundred() {
        let m = evaluate_corpus(&perfect("fan"), 0.1).unwrap();
        let mut t = ResultTable::new(column_order(m.keys()));
        t.push_metrics("run", &m, Metric::Auc);
        let csv = t.to_csv();
        assert_eq!(
            csv,
            "framework,ToyCar,ToyConveyor,fan,pump,slider,valve\nrun,,,100.00,,,\n"
        );
    }

    #[test]
    fn missing_class_is_absent_not_zero() {
        let mut recs = perfect("fan");
        recs.push(rec("pump", Label::Normal, 0.5));
        recs.push(rec("pump", Label::Unknown, 9.0));
        let m = evaluate_corpus(&recs, 0.1).unwrap();
        assert!(m["pump"].as_ref().unwrap_err().contains("pump"));
        assert!(m["fan"].is_ok());
    }

    #[test]
    fn types_are_independent() {
        let mut recs = perfect("fan");
        let mut pump = perfect("pump");
        pump.iter_mut()
            .filter(|r| r.label == Label::Anomaly)
            .for_each(|r| r.anomaly_score = -1.0);
        recs.extend(pump);
        let m = evaluate_corpus(&recs, 0.1).unwrap();
        assert_eq!(m["fan"].as_ref().unwrap().auc, 1.0);
        assert_eq!(m["pump"].as_ref().unwrap().auc, 0.0);
        let mut shuffled = recs.clone();
        shuffled.reverse();
        assert_eq!(evaluate_corpus(&shuffled, 0.1).unwrap(), m);
    }

    #[test]
    fn reported_rows_and_extra_columns() {
        let extra = vec!["zzz".to_string()];
        let mut t = ResultTable::new(column_order(&extra));
        t.push_reported("B", &REPORTED_AUC[0].1);
        assert_eq!(t.rows[0].values[0], Some(78.77));
        assert_eq!(t.rows[0].values[2], Some(65.83));
        assert_eq!(t.rows[0].values[6], None);
        assert!(t.render("AUC").contains("78.77"));
    }
}
