//! Batch normalization over axis 1 of `[B, C, ...]` inputs.
//!
//! Statistics are per channel over the batch and all trailing (spatial)
//! positions, so `[B, D]` inputs normalize each feature over the batch.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Inference,
}

/// Per-channel batch-norm state: learned affine plus running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BnParams {
    pub fn new(channels: usize) -> Self {
        BnParams {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// What the backward pass needs from a forward call.
#[derive(Debug, Clone)]
pub struct BnCache {
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    mode: Mode,
    shape: Vec<usize>,
}

fn layout(shape: &[usize], channels: usize) -> Result<(usize, usize)> {
    if shape.len() < 2 || shape[1] != channels {
        return Err(Error::shape(format!(
            "batchnorm: input {:?} does not have {} channels on axis 1",
            shape, channels
        )));
    }
    Ok((shape[0], shape[2..].iter().product()))
}

pub fn batchnorm(input: &Tensor, params: &mut BnParams, mode: Mode) -> Result<(Tensor, BnCache)> {
    let c = params.channels();
    let (b, spatial) = layout(input.shape(), c)?;
    let count = b * spatial;
    if mode == Mode::Train && count < 2 {
        return Err(Error::shape(
            "batchnorm: train mode needs at least two values per channel",
        ));
    }
    let x = input.data();
    let mut x_hat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; c];
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        let (mean, var) = match mode {
            Mode::Train => {
                let mut sum = 0.0;
                for n in 0..b {
                    sum += x[(n * c + ch) * spatial..][..spatial].iter().sum::<f64>();
                }
                let mean = sum / count as f64;
                let mut ss = 0.0;
                for n in 0..b {
                    ss += x[(n * c + ch) * spatial..][..spatial]
                        .iter()
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f64>();
                }
                let var = ss / count as f64;
                let rm = &mut params.running_mean.data_mut()[ch];
                *rm = BN_MOMENTUM * *rm + (1.0 - BN_MOMENTUM) * mean;
                let rv = &mut params.running_var.data_mut()[ch];
                *rv = BN_MOMENTUM * *rv + (1.0 - BN_MOMENTUM) * var;
                (mean, var)
            }
            Mode::Inference => (
                params.running_mean.data()[ch],
                params.running_var.data()[ch],
            ),
        };
        let is = 1.0 / (var + BN_EPS).sqrt();
        inv_std[ch] = is;
        let g = params.gamma.data()[ch];
        let be = params.beta.data()[ch];
        for n in 0..b {
            let off = (n * c + ch) * spatial;
            for i in off..off + spatial {
                let xh = (x[i] - mean) * is;
                x_hat[i] = xh;
                out[i] = g * xh + be;
            }
        }
    }
    let cache = BnCache {
        x_hat,
        inv_std,
        mode,
        shape: input.shape().to_vec(),
    };
    Ok((Tensor::new(input.shape().to_vec(), out)?, cache))
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batchnorm_backward(
    grad_out: &Tensor,
    cache: &BnCache,
    gamma: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    if grad_out.shape() != cache.shape.as_slice() {
        return Err(Error::shape(format!(
            "batchnorm_backward: grad {:?} vs cached {:?}",
            grad_out.shape(),
            cache.shape
        )));
    }
    let c = gamma.len();
    let (b, spatial) = layout(&cache.shape, c)?;
    let count = (b * spatial) as f64;
    let g = grad_out.data();
    let mut gx = vec![0.0; g.len()];
    let mut ggamma = vec![0.0; c];
    let mut gbeta = vec![0.0; c];
    for ch in 0..c {
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for n in 0..b {
            let off = (n * c + ch) * spatial;
            for i in off..off + spatial {
                sum_g += g[i];
                sum_gx += g[i] * cache.x_hat[i];
            }
        }
        ggamma[ch] = sum_gx;
        gbeta[ch] = sum_g;
        let scale = gamma.data()[ch] * cache.inv_std[ch];
        for n in 0..b {
            let off = (n * c + ch) * spatial;
            for i in off..off + spatial {
                gx[i] = match cache.mode {
                    Mode::Train => {
                        scale * (g[i] - sum_g / count - cache.x_hat[i] * sum_gx / count)
                    }
                    Mode::Inference => scale * g[i],
                };
            }
        }
    }
    Ok((
        Tensor::new(cache.shape.clone(), gx)?,
        Tensor::new(vec![c], ggamma)?,
        Tensor::new(vec![c], gbeta)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn channel_values(t: &Tensor, ch: usize) -> Vec<f64> {
        let (b, c, h, w) = t.dims4().unwrap();
        (0..b)
            .flat_map(|n| t.data()[(n * c + ch) * h * w..][..h * w].to_vec())
            .collect()
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut x = Tensor::randn(&[4, 3, 5, 5], &mut rng);
        // Large spread so eps_bn is negligible next to the variance.
        x.data_mut().iter_mut().for_each(|v| *v = *v * 300.0 + 7.0);
        let mut p = BnParams::new(3);
        let (y, _) = batchnorm(&x, &mut p, Mode::Train).unwrap();
        for ch in 0..3 {
            let v = channel_values(&y, ch);
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn affine_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Tensor::randn(&[3, 2, 4, 4], &mut rng);
        let mut plain = BnParams::new(2);
        let (xh, _) = batchnorm(&x, &mut plain, Mode::Train).unwrap();
        let mut p = BnParams::new(2);
        p.gamma = Tensor::full(&[2], 2.0);
        p.beta = Tensor::full(&[2], 3.0);
        let (y, _) = batchnorm(&x, &mut p, Mode::Train).unwrap();
        for (a, b) in y.data().iter().zip(xh.data()) {
            assert!((a - (2.0 * b + 3.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn inference_with_unit_running_stats_is_near_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::randn(&[2, 2, 3, 3], &mut rng);
        let mut p = BnParams::new(2);
        let (y, _) = batchnorm(&x, &mut p, Mode::Inference).unwrap();
        let s = 1.0 / (1.0 + BN_EPS).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * s).abs() < 1e-12);
            assert!((a - b).abs() < 1e-3 * b.abs() + 1e-12);
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = Tensor::new(vec![2, 1], vec![1.0, 3.0]).unwrap();
        let mut p = BnParams::new(1);
        batchnorm(&x, &mut p, Mode::Train).unwrap();
        assert!((p.running_mean.data()[0] - 0.01 * 2.0).abs() < 1e-15);
        assert!((p.running_var.data()[0] - (0.99 + 0.01 * 1.0)).abs() < 1e-15);
    }

    #[test]
    fn single_element_batch_rejected_in_train_mode() {
        let x = Tensor::zeros(&[1, 4]);
        let mut p = BnParams::new(4);
        assert!(batchnorm(&x, &mut p, Mode::Train).is_err());
        assert!(batchnorm(&x, &mut p, Mode::Inference).is_ok());
    }
}
