//! Stateful layers for static-sequence backpropagation. Each layer keeps
//! whatever its backward pass needs from the most recent forward call.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;

use crate::autodiff::batchnorm::{self, BnCache, BnParams, Mode};
use crate::autodiff::{conv, ops, Tensor};
use crate::error::{Error, Result};

/// Glorot-uniform limit for the given fan-in / fan-out.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    saved: Option<Tensor>,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let taps = conv::KERNEL * conv::KERNEL;
        let limit = glorot_limit(c_in * taps, c_out * taps);
        Conv2d {
            weight: Tensor::uniform(&[c_out, c_in, conv::KERNEL, conv::KERNEL], limit, rng),
            bias: Tensor::zeros(&[c_out]),
            saved: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    saved: Option<Tensor>,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Dense {
            weight: Tensor::uniform(&[d_in, d_out], glorot_limit(d_in, d_out), rng),
            bias: Tensor::zeros(&[d_out]),
            saved: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = ops::dense(x, &self.weight, &self.bias)?;
        self.saved = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let x = self
            .saved
            .as_ref()
            .ok_or_else(|| Error::shape("dense backward before forward"))?;
        let (gx, gw, gb) = ops::dense_backward(g, x, &self.weight)?;
        accumulate(&mut self.weight, &gw);
        accumulate(&mut self.bias, &gb);
        Ok(gx)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub params: BnParams,
    cache: Option<BnCache>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            params: BnParams::new(channels),
            cache: None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d(Conv2d),
    BatchNorm(BatchNorm),
    Relu { saved: Option<Tensor> },
    MaxPool { argmax: Vec<usize>, in_shape: Vec<usize> },
    Upsample,
    Dense(Dense),
    /// `[B, ...] -> [B, prod(...)]`
    Flatten { in_shape: Vec<usize> },
    /// `[B, D] -> [B, target...]`
    Reshape { target: Vec<usize> },
}

fn accumulate(param: &mut Tensor, grad: &Tensor) {
    param
        .grad_mut()
        .iter_mut()
        .zip(grad.data())
        .for_each(|(a, g)| *a += g);
}

impl Layer {
    pub fn relu() -> Self {
        Layer::Relu { saved: None }
    }

    pub fn maxpool() -> Self {
        Layer::MaxPool {
            argmax: Vec::new(),
            in_shape: Vec::new(),
        }
    }

    pub fn flatten() -> Self {
        Layer::Flatten {
            in_shape: Vec::new(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu { .. } => "relu",
            Layer::MaxPool { .. } => "maxpool2x2",
            Layer::Upsample => "upsample2x",
            Layer::Dense(_) => "dense",
            Layer::Flatten { .. } => "flatten",
            Layer::Reshape { .. } => "reshape",
        }
    }

    pub fn forward(&mut self, x: Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            Layer::Conv2d(c) => {
                let y = conv::conv2d(&x, &c.weight, &c.bias)?;
                c.saved = Some(x);
                Ok(y)
            }
            Layer::BatchNorm(bn) => {
                let (y, cache) = batchnorm::batchnorm(&x, &mut bn.params, mode)?;
                bn.cache = Some(cache);
                Ok(y)
            }
            Layer::Relu { saved } => {
                let y = ops::relu(&x);
                *saved = Some(x);
                Ok(y)
            }
            Layer::MaxPool { argmax, in_shape } => {
                let (y, idx) = ops::maxpool2x2(&x)?;
                *argmax = idx;
                *in_shape = x.shape().to_vec();
                Ok(y)
            }
            Layer::Upsample => ops::upsample2x(&x),
            Layer::Dense(d) => d.forward(&x),
            Layer::Flatten { in_shape } => {
                *in_shape = x.shape().to_vec();
                let b = in_shape[0];
                let rest = x.len() / b.max(1);
                x.reshape(vec![b, rest])
            }
            Layer::Reshape { target } => {
                let mut shape = vec![x.shape()[0]];
                shape.extend_from_slice(target);
                x.reshape(shape)
            }
        }
    }

    /// Backward through the layer, accumulating parameter gradients.
    pub fn backward(&mut self, g: Tensor) -> Result<Tensor> {
        let missing = || Error::shape("backward called before forward");
        match self {
            Layer::Conv2d(c) => {
                let x = c.saved.as_ref().ok_or_else(missing)?;
                let (gx, gw, gb) = conv::conv2d_backward(&g, x, &c.weight)?;
                accumulate(&mut c.weight, &gw);
                accumulate(&mut c.bias, &gb);
                Ok(gx)
            }
            Layer::BatchNorm(bn) => {
                let cache = bn.cache.as_ref().ok_or_else(missing)?;
                let (gx, gg, gb) = batchnorm::batchnorm_backward(&g, cache, &bn.params.gamma)?;
                accumulate(&mut bn.params.gamma, &gg);
                accumulate(&mut bn.params.beta, &gb);
                Ok(gx)
            }
            Layer::Relu { saved } => ops::relu_backward(&g, saved.as_ref().ok_or_else(missing)?),
            Layer::MaxPool { argmax, in_shape } => ops::maxpool2x2_backward(&g, argmax, in_shape),
            Layer::Upsample => ops::upsample2x_backward(&g),
            Layer::Dense(d) => d.backward(&g),
            Layer::Flatten { in_shape } => g.reshape(in_shape.clone()),
            Layer::Reshape { .. } => {
                let b = g.shape()[0];
                let rest = g.len() / b.max(1);
                g.reshape(vec![b, rest])
            }
        }
    }

    /// Trainable tensors in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::BatchNorm(bn) => vec![&mut bn.params.gamma, &mut bn.params.beta],
            _ => Vec::new(),
        }
    }

    /// Every persisted tensor (trainable and running statistics) with a
    /// local name.
    pub fn state(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Layer::Conv2d(c) => vec![("weight", &c.weight), ("bias", &c.bias)],
            Layer::Dense(d) => vec![("weight", &d.weight), ("bias", &d.bias)],
            Layer::BatchNorm(bn) => vec![
                ("gamma", &bn.params.gamma),
                ("beta", &bn.params.beta),
                ("running_mean", &bn.params.running_mean),
                ("running_var", &bn.params.running_var),
            ],
            _ => Vec::new(),
        }
    }

    pub fn state_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match self {
            Layer::Conv2d(c) => vec![("weight", &mut c.weight), ("bias", &mut c.bias)],
            Layer::Dense(d) => vec![("weight", &mut d.weight), ("bias", &mut d.bias)],
            Layer::BatchNorm(bn) => vec![
                ("gamma", &mut bn.params.gamma),
                ("beta", &mut bn.params.beta),
                ("running_mean", &mut bn.params.running_mean),
                ("running_var", &mut bn.params.running_var),
            ],
            _ => Vec::new(),
        }
    }

    /// Hashes the piecewise-linear branch taken on the last forward pass
    /// (ReLU signs, pooling winners).
    fn hash_branch<H: Hasher>(&self, h: &mut H) {
        match self {
            Layer::Relu { saved: Some(x) } => {
                for &v in x.data() {
                    (v > 0.0).hash(h);
                }
            }
            Layer::MaxPool { argmax, .. } => argmax.hash(h),
            _ => {}
        }
    }

    /// Drops saved activations.
    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv2d(c) => c.saved = None,
            Layer::Dense(d) => d.saved = None,
            Layer::BatchNorm(bn) => bn.cache = None,
            Layer::Relu { saved } => *saved = None,
            Layer::MaxPool { argmax, .. } => argmax.clear(),
            _ => {}
        }
    }
}

/// An ordered stack of layers.
#[derive(Debug, Clone, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Sequential { layers }
    }

    pub fn forward(&mut self, mut x: Tensor, mode: Mode) -> Result<Tensor> {
        for layer in &mut self.layers {
            x = layer.forward(x, mode)?;
        }
        Ok(x)
    }

    pub fn backward(&mut self, mut g: Tensor) -> Result<Tensor> {
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(g)?;
        }
        Ok(g)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for l in &self.layers {
            l.hash_branch(&mut h);
        }
        h.finish()
    }

    pub fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flatten_reshape_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::randn(&[2, 3, 2, 2], &mut rng);
        let mut net = Sequential::new(vec![
            Layer::flatten(),
            Layer::Reshape {
                target: vec![3, 2, 2],
            },
        ]);
        let y = net.forward(x.clone(), Mode::Train).unwrap();
        assert_eq!(y, x);
        let g = net.backward(x.clone()).unwrap();
        assert_eq!(g.shape(), x.shape());
    }

    #[test]
    fn glorot_init_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = Conv2d::new(4, 8, &mut rng);
        let lim = glorot_limit(36, 72);
        assert!(c.weight.data().iter().all(|v| v.abs() <= lim));
        assert!(c.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_before_forward_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut l = Layer::Conv2d(Conv2d::new(1, 1, &mut rng));
        assert!(l.backward(Tensor::zeros(&[1, 1, 2, 2])).is_err());
    }
}
