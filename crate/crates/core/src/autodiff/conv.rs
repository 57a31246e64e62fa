//! 3x3 "same" convolution (stride 1, zero padding 1) via im2col + GEMM.

use crate::autodiff::gemm;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::par;

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

fn check_geometry(input: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    let (b, c_in, h, w) = input.dims4()?;
    match weight.shape() {
        [c_out, wc_in, 3, 3] if *wc_in == c_in => Ok((b, c_in, *c_out, h, w)),
        s => Err(Error::shape(format!(
            "conv2d: weight {:?} incompatible with input channels {}",
            s, c_in
        ))),
    }
}

/// Lays out the 3x3 neighbourhoods of one `[c, h, w]` image as a
/// `(c*9) x (h*w)` matrix, zero outside the border.
fn im2col(img: &[f64], c: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &img[ci * hw..(ci + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut cols[(ci * TAPS + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = 0.0;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, img: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut img[ci * hw..(ci + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &cols[(ci * TAPS + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1]
                            .iter_mut()
                            .zip(&src[1..])
                            .for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..]
                            .iter_mut()
                            .zip(&src[..w - 1])
                            .for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
}

/// Single-channel layers skip im2col, which is memory-bound when one side
/// of the GEMM has a single row.
fn use_direct(c_in: usize, c_out: usize) -> bool {
    c_in == 1 || c_out == 1
}

/// Valid index range of `i + d` within `0..n`.
fn span(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).min(n as isize).max(0) as usize;
    (lo, hi.max(lo))
}

/// `dst[y, x] += a * src[y + dy, x + dx]` wherever the source is in range.
fn shifted_axpy(dst: &mut [f64], src: &[f64], h: usize, w: usize, dy: isize, dx: isize, a: f64) {
    let (y0, y1) = span(h, dy);
    let (x0, x1) = span(w, dx);
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let d = &mut dst[y * w + x0..y * w + x1];
        let s = &src[sy * w + (x0 as isize + dx) as usize..][..x1 - x0];
        d.iter_mut().zip(s).for_each(|(d, s)| *d += a * s);
    }
}

/// `sum over y, x of a[y, x] * b[y + dy, x + dx]`.
fn shifted_dot(a: &[f64], b: &[f64], h: usize, w: usize, dy: isize, dx: isize) -> f64 {
    let (y0, y1) = span(h, dy);
    let (x0, x1) = span(w, dx);
    let mut acc = 0.0;
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let ar = &a[y * w + x0..y * w + x1];
        let br = &b[sy * w + (x0 as isize + dx) as usize..][..x1 - x0];
        acc += ar.iter().zip(br).map(|(u, v)| u * v).sum::<f64>();
    }
    acc
}

fn tap_offset(tap: usize) -> (isize, isize) {
    ((tap / KERNEL) as isize - 1, (tap % KERNEL) as isize - 1)
}

fn direct_forward(x: &[f64], weight: &[f64], c_in: usize, h: usize, w: usize, dst: &mut [f64]) {
    let hw = h * w;
    for (co, plane) in dst.chunks_mut(hw).enumerate() {
        for ci in 0..c_in {
            let src = &x[ci * hw..(ci + 1) * hw];
            for tap in 0..TAPS {
                let (dy, dx) = tap_offset(tap);
                let a = weight[(co * c_in + ci) * TAPS + tap];
                shifted_axpy(plane, src, h, w, dy, dx, a);
            }
        }
    }
}

fn direct_backward(
    x: &[f64],
    g: &[f64],
    weight: &[f64],
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
) -> (Vec<f64>, Vec<f64>) {
    let hw = h * w;
    let mut gx = vec![0.0; c_in * hw];
    let mut gw = vec![0.0; c_out * c_in * TAPS];
    for co in 0..c_out {
        let gp = &g[co * hw..(co + 1) * hw];
        for ci in 0..c_in {
            let xp = &x[ci * hw..(ci + 1) * hw];
            for tap in 0..TAPS {
                let (dy, dx) = tap_offset(tap);
                let wi = (co * c_in + ci) * TAPS + tap;
                gw[wi] = shifted_dot(gp, xp, h, w, dy, dx);
                shifted_axpy(&mut gx[ci * hw..(ci + 1) * hw], gp, h, w, -dy, -dx, weight[wi]);
            }
        }
    }
    (gx, gw)
}

/// Cross-correlation of `input [B, C_in, H, W]` with `weight [C_out, C_in, 3, 3]`
/// plus a per-channel `bias [C_out]`; output is `[B, C_out, H, W]`.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (b, c_in, c_out, h, w) = check_geometry(input, weight)?;
    if bias.len() != c_out {
        return Err(Error::shape(format!(
            "conv2d: bias length {} != output channels {}",
            bias.len(),
            c_out
        )));
    }
    let hw = h * w;
    let k = c_in * TAPS;
    let mut out = vec![0.0; b * c_out * hw];
    par::for_each_chunk_mut(&mut out, c_out * hw, |i, dst| {
        let x = &input.data()[i * c_in * hw..(i + 1) * c_in * hw];
        for (co, plane) in dst.chunks_mut(hw).enumerate() {
            plane.iter_mut().for_each(|v| *v = bias.data()[co]);
        }
        if use_direct(c_in, c_out) {
            direct_forward(x, weight.data(), c_in, h, w, dst);
            return;
        }
        let mut cols = vec![0.0; k * hw];
        im2col(x, c_in, h, w, &mut cols);
        gemm::matmul_acc(weight.data(), false, &cols, false, dst, c_out, k, hw);
    });
    Tensor::new(vec![b, c_out, h, w], out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weight: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (b, c_in, c_out, h, w) = check_geometry(input, weight)?;
    if grad_out.shape() != [b, c_out, h, w] {
        return Err(Error::shape(format!(
            "conv2d_backward: grad {:?} vs expected {:?}",
            grad_out.shape(),
            [b, c_out, h, w]
        )));
    }
    let hw = h * w;
    let k = c_in * TAPS;
    let per_sample = par::map_range(b, |i| {
        let x = &input.data()[i * c_in * hw..(i + 1) * c_in * hw];
        let g = &grad_out.data()[i * c_out * hw..(i + 1) * c_out * hw];
        let gb: Vec<f64> = g.chunks(hw).map(|p| p.iter().sum()).collect();
        if use_direct(c_in, c_out) {
            let (gx, gw) = direct_backward(x, g, weight.data(), c_in, c_out, h, w);
            return (gx, gw, gb);
        }
        let mut cols = vec![0.0; k * hw];
        im2col(x, c_in, h, w, &mut cols);
        let mut gw = vec![0.0; c_out * k];
        // gW = g (c_out x hw) * cols^T (hw x k)
        gemm::matmul_acc(g, false, &cols, true, &mut gw, c_out, hw, k);
        // dcols = W^T (k x c_out) * g (c_out x hw)
        cols.iter_mut().for_each(|v| *v = 0.0);
        gemm::matmul_acc(weight.data(), true, g, false, &mut cols, k, c_out, hw);
        let mut gx = vec![0.0; c_in * hw];
        col2im(&cols, c_in, h, w, &mut gx);
        (gx, gw, gb)
    });
    let mut grad_in = Vec::with_capacity(b * c_in * hw);
    let mut grad_w = vec![0.0; c_out * k];
    let mut grad_b = vec![0.0; c_out];
    for (gx, gw, gb) in per_sample {
        grad_in.extend_from_slice(&gx);
        grad_w.iter_mut().zip(&gw).for_each(|(a, v)| *a += v);
        grad_b.iter_mut().zip(&gb).for_each(|(a, v)| *a += v);
    }
    Ok((
        Tensor::new(vec![b, c_in, h, w], grad_in)?,
        Tensor::new(vec![c_out, c_in, KERNEL, KERNEL], grad_w)?,
        Tensor::new(vec![c_out], grad_b)?,
    ))
}
