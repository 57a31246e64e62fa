use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Mean of squared differences and its gradient with respect to `pred`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "mse_loss: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let d = p - t;
            sum += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((sum / n, Tensor::new(pred.shape().to_vec(), grad)?))
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (_, k) = logits.dims2()?;
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Mean categorical cross-entropy of `softmax(logits)` against class
/// indices, with gradient `(softmax - onehot) / B`.
pub fn softmax_cce_loss(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, k) = logits.dims2()?;
    if labels.len() != b {
        return Err(Error::shape(format!(
            "softmax_cce_loss: {} labels for batch of {}",
            labels.len(),
            b
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::param(format!(
            "label {} out of range for {} classes",
            bad, k
        )));
    }
    let x = logits.data();
    let mut grad = vec![0.0; b * k];
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = &x[i * k..(i + 1) * k];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[label];
        for j in 0..k {
            let p = (row[j] - lse).exp();
            let onehot = if j == label { 1.0 } else { 0.0 };
            grad[i * k + j] = (p - onehot) / b as f64;
        }
    }
    Ok((total / b as f64, Tensor::new(vec![b, k], grad)?))
}
