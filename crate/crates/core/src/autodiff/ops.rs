//! Elementwise, pooling, resampling and dense operators with their
//! backward passes.

use crate::autodiff::gemm;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

/// Gradient passes where the saved input is strictly positive.
pub fn relu_backward(grad_out: &Tensor, saved_input: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != saved_input.shape() {
        return Err(Error::shape("relu_backward: shape mismatch"));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(saved_input.data())
        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(grad_out.shape().to_vec(), data)
}

/// Non-overlapping 2x2 max pooling. Returns the pooled tensor and, per
/// output cell, the flat index of the selected input cell. Ties go to the
/// first cell in row-major scan order.
pub fn maxpool2x2(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (b, c, h, w) = input.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "maxpool2x2 needs even spatial dims, got {}x{}",
            h, w
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut idx = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let top = base + 2 * y * w + 2 * xx;
                let mut best = top;
                for cand in [top + 1, top + w, top + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                out.push(x[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![b, c, oh, ow], out)?, idx))
}

pub fn maxpool2x2_backward(
    grad_out: &Tensor,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor> {
    if grad_out.len() != argmax.len() {
        return Err(Error::shape("maxpool2x2_backward: index count mismatch"));
    }
    let mut gx = Tensor::zeros(input_shape);
    let dst = gx.data_mut();
    for (&g, &i) in grad_out.data().iter().zip(argmax) {
        dst[i] += g;
    }
    Ok(gx)
}

/// Nearest-neighbour 2x upsampling: each cell becomes a constant 2x2 block.
pub fn upsample2x(input: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = input.dims4()?;
    let (oh, ow) = (2 * h, 2 * w);
    let x = input.data();
    let mut out = vec![0.0; b * c * oh * ow];
    for plane in 0..b * c {
        let src = &x[plane * h * w..][..h * w];
        let dst = &mut out[plane * oh * ow..][..oh * ow];
        for y in 0..oh {
            for xx in 0..ow {
                dst[y * ow + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    Tensor::new(vec![b, c, oh, ow], out)
}

/// Sums the four incoming gradients of each source cell.
pub fn upsample2x_backward(grad_out: &Tensor) -> Result<Tensor> {
    let (b, c, oh, ow) = grad_out.dims4()?;
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(Error::shape("upsample2x_backward: odd gradient dims"));
    }
    let (h, w) = (oh / 2, ow / 2);
    let g = grad_out.data();
    let mut gx = vec![0.0; b * c * h * w];
    for plane in 0..b * c {
        let src = &g[plane * oh * ow..][..oh * ow];
        let dst = &mut gx[plane * h * w..][..h * w];
        for y in 0..oh {
            for xx in 0..ow {
                dst[(y / 2) * w + xx / 2] += src[y * ow + xx];
            }
        }
    }
    Tensor::new(vec![b, c, h, w], gx)
}

/// `out = input · weight + bias` with `input [B, D_in]`, `weight [D_in, D_out]`.
pub fn dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (b, d_in) = input.dims2()?;
    let (w_in, d_out) = weight.dims2()?;
    if w_in != d_in || bias.len() != d_out {
        return Err(Error::shape(format!(
            "dense: input {:?}, weight {:?}, bias {:?}",
            input.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    let mut out = Vec::with_capacity(b * d_out);
    for _ in 0..b {
        out.extend_from_slice(bias.data());
    }
    gemm::matmul_acc(input.data(), false, weight.data(), false, &mut out, b, d_in, d_out);
    Tensor::new(vec![b, d_out], out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn dense_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weight: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (b, d_in) = input.dims2()?;
    let (_, d_out) = weight.dims2()?;
    if grad_out.shape() != [b, d_out] {
        return Err(Error::shape("dense_backward: gradient shape mismatch"));
    }
    let g = grad_out.data();
    let mut gx = vec![0.0; b * d_in];
    gemm::matmul_acc(g, false, weight.data(), true, &mut gx, b, d_out, d_in);
    let mut gw = vec![0.0; d_in * d_out];
    gemm::matmul_acc(input.data(), true, g, false, &mut gw, d_in, b, d_out);
    let mut gb = vec![0.0; d_out];
    for row in g.chunks(d_out) {
        gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    Ok((
        Tensor::new(vec![b, d_in], gx)?,
        Tensor::new(vec![d_in, d_out], gw)?,
        Tensor::new(vec![d_out], gb)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_values_and_kink() {
        let x = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = Tensor::full(&[3], 1.0);
        assert_eq!(relu_backward(&g, &x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_identity_on_positive() {
        let x = Tensor::new(vec![4], vec![0.5, 1.0, 2.0, 9.0]).unwrap();
        assert_eq!(relu(&x), x);
        let g = Tensor::new(vec![4], vec![1.0, -2.0, 3.0, -4.0]).unwrap();
        assert_eq!(relu_backward(&g, &x).unwrap(), g);
    }

    #[test]
    fn maxpool_single_window() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool2x2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx, vec![3]);
    }

    #[test]
    fn maxpool_ties_route_to_first_cell() {
        let x = Tensor::full(&[1, 2, 4, 4], 7.0);
        let (y, idx) = maxpool2x2(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 7.0));
        let g = maxpool2x2_backward(&Tensor::full(&[1, 2, 2, 2], 1.0), &idx, x.shape()).unwrap();
        for plane in 0..2 {
            for y in 0..4 {
                for xx in 0..4 {
                    let v = g.data()[plane * 16 + y * 4 + xx];
                    let first = y % 2 == 0 && xx % 2 == 0;
                    assert_eq!(v, if first { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn maxpool_matches_window_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::randn(&[1, 1, 8, 8], &mut rng);
        let (y, _) = maxpool2x2(&x).unwrap();
        for oy in 0..4 {
            for ox in 0..4 {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x.data()[(2 * oy + dy) * 8 + 2 * ox + dx]);
                    }
                }
                assert_eq!(y.data()[oy * 4 + ox], m);
            }
        }
    }

    #[test]
    fn maxpool_rejects_odd_dims() {
        assert!(maxpool2x2(&Tensor::zeros(&[1, 1, 3, 4])).is_err());
    }

    #[test]
    fn upsample_examples() {
        let x = Tensor::new(vec![1, 1, 1, 1], vec![5.0]).unwrap();
        assert_eq!(upsample2x(&x).unwrap().data(), &[5.0; 4]);
        let g = upsample2x_backward(&Tensor::full(&[1, 1, 4, 6], 1.0)).unwrap();
        assert_eq!(g.shape(), &[1, 1, 2, 3]);
        assert!(g.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn pool_undoes_upsample() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::randn(&[2, 3, 3, 5], &mut rng);
        let (y, _) = maxpool2x2(&upsample2x(&x).unwrap()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn dense_identity_and_bias() {
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        assert_eq!(dense(&x, &eye, &Tensor::zeros(&[3])).unwrap().data(), x.data());
        let b = Tensor::new(vec![2], vec![0.25, -4.0]).unwrap();
        let y = dense(&Tensor::zeros(&[3, 5]), &Tensor::full(&[5, 2], 1.3), &b).unwrap();
        assert_eq!(y.data(), &[0.25, -4.0, 0.25, -4.0, 0.25, -4.0]);
    }

    #[test]
    fn dense_shape_mismatch() {
        let r = dense(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[4, 2]), &Tensor::zeros(&[2]));
        assert!(r.is_err());
    }
}
