use crate::error::{Error, Result};

/// Default upper false-positive rate for the partial AUC.
pub const DEFAULT_P: f64 = 0.1;

/// Slack for `floor(p * n)` when the product lands just below an integer.
const FLOOR_SLACK: f64 = 1e-9;

fn check(normals: &[f64], anomalies: &[f64]) -> Result<()> {
    if normals.is_empty() || anomalies.is_empty() {
        return Err(Error::Metric(format!(
            "need at least one normal and one anomalous score, got {} and {}",
            normals.len(),
            anomalies.len()
        )));
    }
    if normals.iter().chain(anomalies).any(|v| v.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    Ok(())
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Number of entries of ascending `sorted` strictly greater than `x`.
fn count_above(sorted: &[f64], x: f64) -> usize {
    sorted.len() - sorted.partition_point(|&v| v <= x)
}

fn pair_count(normals: &[f64], sorted_anomalies: &[f64]) -> u64 {
    normals
        .iter()
        .map(|&n| count_above(sorted_anomalies, n) as u64)
        .sum()
}

/// Fraction of (normal, anomaly) pairs where the anomaly scores strictly
/// higher. Ties count zero.
pub fn auc(normals: &[f64], anomalies: &[f64]) -> Result<f64> {
    check(normals, anomalies)?;
    let a = sorted(anomalies);
    Ok(pair_count(normals, &a) as f64 / (normals.len() * anomalies.len()) as f64)
}

/// Number of normals entering the partial AUC.
pub fn pauc_normals(n_normals: usize, p: f64) -> Result<usize> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Metric(format!("p must lie in (0, 1], got {p}")));
    }
    let k = (p * n_normals as f64 + FLOOR_SLACK).floor() as usize;
    if k == 0 {
        return Err(Error::Metric(format!(
            "floor(p * N-) is 0 for p={p} and N-={n_normals}; use more normal clips or a larger p"
        )));
    }
    Ok(k.min(n_normals))
}

/// AUC restricted to the `floor(p * N-)` highest-scoring normals.
pub fn pauc(normals: &[f64], anomalies: &[f64], p: f64) -> Result<f64> {
    check(normals, anomalies)?;
    let k = pauc_normals(normals.len(), p)?;
    let n = sorted(normals);
    let top = &n[n.len() - k..];
    let a = sorted(anomalies);
    Ok(pair_count(top, &a) as f64 / (k * anomalies.len()) as f64)
}

/// ROC points `(fpr, tpr)`, one per distinct threshold, where a clip is
/// flagged when its score is at least the threshold. Starts at (0, 0).
pub fn roc_curve(normals: &[f64], anomalies: &[f64]) -> Result<Vec<(f64, f64)>> {
    check(normals, anomalies)?;
    let mut thresholds: Vec<f64> = normals.iter().chain(anomalies).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (n, a) = (sorted(normals), sorted(anomalies));
    let at_least = |s: &[f64], t: f64| (s.len() - s.partition_point(|&v| v < t)) as f64;
    let mut out = vec![(0.0, 0.0)];
    out.extend(thresholds.into_iter().map(|t| {
        (
            at_least(&n, t) / n.len() as f64,
            at_least(&a, t) / a.len() as f64,
        )
    }));
    Ok(out)
}
