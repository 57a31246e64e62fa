use crate::autodiff::checkpoint::Dtype;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::trainer::config::AdamConfig;

/// First and second moments for every parameter tensor, in the order the
/// model yields them.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[&mut Tensor]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update using the gradients stored on `params`.
/// Gradients are checked for finiteness before anything is modified.
pub fn adam_step(
    params: &mut [&mut Tensor],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
    dtype: Dtype,
) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(Error::shape(format!(
            "adam state tracks {} tensors, got {}",
            state.m.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if p.len() != state.m[i].len() {
            return Err(Error::shape(format!("adam state tensor {i} has wrong length")));
        }
        if let Some(g) = p.grad() {
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gradient in parameter tensor {i} (shape {:?}) at element {j}",
                    p.shape()
                )));
            }
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let (val, grad) = p.value_and_grad_mut();
        for j in 0..val.len() {
            let g = grad[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let step = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.eps);
            val[j] = dtype.quantize(val[j] - step);
        }
    }
    Ok(())
}
