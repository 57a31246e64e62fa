//! Finite-difference checks of every operator's backward pass.
//!
//! Each check draws random inputs and parameters, contracts the operator
//! output with a random cotangent `r` to get a scalar `sum(r * op(..))`, and
//! compares the backward pass fed with `r` against central differences.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::gradcheck::{gradient_check, GradCheckReport};
use crate::autodiff::{
    batchnorm, batchnorm_backward, conv2d, conv2d_backward, dense, dense_backward, maxpool2x2,
    maxpool2x2_backward, mse_loss, relu, relu_backward, softmax_cce_loss, upsample2x,
    upsample2x_backward, BnParams, Mode, Tensor,
};
use crate::error::Result;

/// Finite-difference step.
pub const CHECK_H: f64 = 1e-5;
/// Coordinates compared per check.
pub const CHECK_PROBES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    Conv2d,
    BatchNormTrain,
    Relu,
    MaxPool,
    Upsample,
    Dense,
    Mse,
    SoftmaxCce,
}

impl Operator {
    pub const ALL: [Operator; 8] = [
        Operator::Conv2d,
        Operator::BatchNormTrain,
        Operator::Relu,
        Operator::MaxPool,
        Operator::Upsample,
        Operator::Dense,
        Operator::Mse,
        Operator::SoftmaxCce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Operator::Conv2d => "conv2d",
            Operator::BatchNormTrain => "batchnorm(train)",
            Operator::Relu => "relu",
            Operator::MaxPool => "maxpool2x2",
            Operator::Upsample => "upsample2x",
            Operator::Dense => "dense",
            Operator::Mse => "mse",
            Operator::SoftmaxCce => "softmax-cce",
        }
    }
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn sig_of<T: Hash>(v: T) -> u64 {
    let mut h = DefaultHasher::new();
    v.hash(&mut h);
    h.finish()
}

/// Splits a flat vector into tensors of the given shapes.
fn unflatten(flat: &[f64], shapes: &[Vec<usize>]) -> Vec<Tensor> {
    let mut off = 0;
    shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            let t = Tensor::new(s.clone(), flat[off..off + n].to_vec()).expect("sized");
            off += n;
            t
        })
        .collect()
}

fn flatten(ts: &[&Tensor]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

/// Runs the check for one operator at one seed.
pub fn check_operator(op: Operator, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let check = |eval: &mut dyn FnMut(&[f64]) -> (f64, u64),
                 point: &[f64],
                 analytic: &[f64],
                 rng: &mut ChaCha8Rng| {
        gradient_check(eval, point, analytic, CHECK_H, CHECK_PROBES, rng)
    };
    let report = match op {
        Operator::Conv2d => {
            let (b, ci, co, h, w) = (2, rng.gen_range(1..4), rng.gen_range(1..4), 5, 6);
            let x = Tensor::randn(&[b, ci, h, w], rng);
            let wt = Tensor::randn(&[co, ci, 3, 3], rng);
            let bias = Tensor::randn(&[co], rng);
            let r = Tensor::randn(&[b, co, h, w], rng);
            let shapes = vec![x.shape().to_vec(), wt.shape().to_vec(), bias.shape().to_vec()];
            let (gx, gw, gb) = conv2d_backward(&r, &x, &wt)?;
            let mut eval = |p: &[f64]| {
                let t = unflatten(p, &shapes);
                (dot(&conv2d(&t[0], &t[1], &t[2]).expect("shapes"), &r), 0)
            };
            check(&mut eval, &flatten(&[&x, &wt, &bias]), &flatten(&[&gx, &gw, &gb]), rng)
        }
        Operator::BatchNormTrain => {
            let (b, c, h, w) = (3, 2, 3, 4);
            let x = Tensor::randn(&[b, c, h, w], rng);
            let mut params = BnParams::new(c);
            params.gamma = Tensor::randn(&[c], rng);
            params.beta = Tensor::randn(&[c], rng);
            let r = Tensor::randn(&[b, c, h, w], rng);
            let (_, cache) = batchnorm(&x, &mut params.clone(), Mode::Train)?;
            let (gx, gg, gbeta) = batchnorm_backward(&r, &cache, &params.gamma)?;
            let shapes = vec![x.shape().to_vec(), vec![c], vec![c]];
            let mut eval = |p: &[f64]| {
                let t = unflatten(p, &shapes);
                let mut bp = BnParams::new(c);
                bp.gamma = t[1].clone();
                bp.beta = t[2].clone();
                let (y, _) = batchnorm(&t[0], &mut bp, Mode::Train).expect("shapes");
                (dot(&y, &r), 0)
            };
            let point = flatten(&[&x, &params.gamma, &params.beta]);
            check(&mut eval, &point, &flatten(&[&gx, &gg, &gbeta]), rng)
        }
        Operator::Relu => {
            let x = Tensor::randn(&[3, 17], rng);
            let r = Tensor::randn(&[3, 17], rng);
            let gx = relu_backward(&r, &x)?;
            let mut eval = |p: &[f64]| {
                let t = Tensor::new(vec![3, 17], p.to_vec()).expect("sized");
                let s: Vec<bool> = p.iter().map(|v| *v > 0.0).collect();
                (dot(&relu(&t), &r), sig_of(s))
            };
            check(&mut eval, x.data(), gx.data(), rng)
        }
        Operator::MaxPool => {
            let shape = [2, 2, 4, 6];
            let x = Tensor::randn(&shape, rng);
            let (y, idx) = maxpool2x2(&x)?;
            let r = Tensor::randn(y.shape(), rng);
            let gx = maxpool2x2_backward(&r, &idx, &shape)?;
            let mut eval = |p: &[f64]| {
                let t = Tensor::new(shape.to_vec(), p.to_vec()).expect("sized");
                let (y, idx) = maxpool2x2(&t).expect("even dims");
                (dot(&y, &r), sig_of(idx))
            };
            check(&mut eval, x.data(), gx.data(), rng)
        }
        Operator::Upsample => {
            let shape = [2, 3, 3, 2];
            let x = Tensor::randn(&shape, rng);
            let r = Tensor::randn(&[2, 3, 6, 4], rng);
            let gx = upsample2x_backward(&r)?;
            let mut eval = |p: &[f64]| {
                let t = Tensor::new(shape.to_vec(), p.to_vec()).expect("sized");
                (dot(&upsample2x(&t).expect("4-d"), &r), 0)
            };
            check(&mut eval, x.data(), gx.data(), rng)
        }
        Operator::Dense => {
            let (b, di, dout) = (3, rng.gen_range(1..8), rng.gen_range(1..8));
            let x = Tensor::randn(&[b, di], rng);
            let wt = Tensor::randn(&[di, dout], rng);
            let bias = Tensor::randn(&[dout], rng);
            let r = Tensor::randn(&[b, dout], rng);
            let (gx, gw, gb) = dense_backward(&r, &x, &wt)?;
            let shapes = vec![vec![b, di], vec![di, dout], vec![dout]];
            let mut eval = |p: &[f64]| {
                let t = unflatten(p, &shapes);
                (dot(&dense(&t[0], &t[1], &t[2]).expect("shapes"), &r), 0)
            };
            check(&mut eval, &flatten(&[&x, &wt, &bias]), &flatten(&[&gx, &gw, &gb]), rng)
        }
        Operator::Mse => {
            let pred = Tensor::randn(&[4, 5], rng);
            let target = Tensor::randn(&[4, 5], rng);
            let (_, g) = mse_loss(&pred, &target)?;
            let mut eval = |p: &[f64]| {
                let t = Tensor::new(vec![4, 5], p.to_vec()).expect("sized");
                (mse_loss(&t, &target).expect("shapes").0, 0)
            };
            check(&mut eval, pred.data(), g.data(), rng)
        }
        Operator::SoftmaxCce => {
            let (b, k) = (4, rng.gen_range(2..6));
            let logits = Tensor::randn(&[b, k], rng);
            let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..k)).collect();
            let (_, g) = softmax_cce_loss(&logits, &labels)?;
            let mut eval = |p: &[f64]| {
                let t = Tensor::new(vec![b, k], p.to_vec()).expect("sized");
                (softmax_cce_loss(&t, &labels).expect("shapes").0, 0)
            };
            check(&mut eval, logits.data(), g.data(), rng)
        }
    };
    Ok(report)
}
