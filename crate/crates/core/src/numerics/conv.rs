//! Stride-1, zero-padded ("same") 2-D cross-correlation and its adjoints.
//!
//! Work is split over batch samples (forward, input gradient) or output
//! channels (kernel and bias gradients). Each output element is reduced in a
//! fixed sequential order, so results do not depend on the thread count.

use rayon::prelude::*;

use super::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    c: usize,
    o: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
}

impl Geometry {
    fn check(input: &Shape, kernel: &Shape, bias_len: Option<usize>) -> Result<Self> {
        let (n, c, h, w) = input.nchw()?;
        let (o, kc, kh, kw) = kernel
            .nchw()
            .map_err(|_| Error::shape(format!("kernel must be (O, C, kh, kw), got {kernel}")))?;
        if kc != c {
            return Err(Error::shape(format!(
                "conv2d: input has {c} channels, kernel expects {kc}"
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape(format!(
                "conv2d: kernel spatial size {kh}×{kw} must be odd"
            )));
        }
        if let Some(b) = bias_len {
            if b != o {
                return Err(Error::shape(format!("conv2d: {b} biases for {o} output channels")));
            }
        }
        Ok(Self { n, c, o, h, w, kh, kw })
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Valid output range `[lo, hi)` along an axis of `len` for tap offset
    /// `d`, i.e. positions `p` with `0 <= p + d < len`.
    #[inline]
    fn span(len: usize, d: isize) -> (usize, usize) {
        let lo = (-d).max(0) as usize;
        let hi = (len as isize - d).clamp(0, len as isize) as usize;
        (lo, hi.max(lo))
    }

    #[inline]
    fn offset(&self, ky: usize, kx: usize) -> (isize, isize) {
        (
            ky as isize - (self.kh / 2) as isize,
            kx as isize - (self.kw / 2) as isize,
        )
    }
}

/// `dst[p] += w · src[p + (dy, dx)]` over all in-bounds positions.
#[inline]
fn axpy_shifted<T: Scalar>(dst: &mut [T], src: &[T], w: T, g: &Geometry, dy: isize, dx: isize) {
    let (y0, y1) = Geometry::span(g.h, dy);
    let (x0, x1) = Geometry::span(g.w, dx);
    for y in y0..y1 {
        let d = &mut dst[y * g.w + x0..y * g.w + x1];
        let sy = (y as isize + dy) as usize;
        let sx = (x0 as isize + dx) as usize;
        let s = &src[sy * g.w + sx..sy * g.w + sx + (x1 - x0)];
        for (a, &b) in d.iter_mut().zip(s) {
            *a += w * b;
        }
    }
}

/// `dst[p + (dy, dx)] += w · src[p]` over all in-bounds positions.
#[inline]
fn axpy_scatter<T: Scalar>(dst: &mut [T], src: &[T], w: T, g: &Geometry, dy: isize, dx: isize) {
    let (y0, y1) = Geometry::span(g.h, dy);
    let (x0, x1) = Geometry::span(g.w, dx);
    for y in y0..y1 {
        let s = &src[y * g.w + x0..y * g.w + x1];
        let dy_ = (y as isize + dy) as usize;
        let dx_ = (x0 as isize + dx) as usize;
        let d = &mut dst[dy_ * g.w + dx_..dy_ * g.w + dx_ + (x1 - x0)];
        for (a, &b) in d.iter_mut().zip(s) {
            *a += w * b;
        }
    }
}

/// Σ_p a[p] · b[p + (dy, dx)] over all in-bounds positions.
#[inline]
fn dot_shifted<T: Scalar>(a: &[T], b: &[T], g: &Geometry, dy: isize, dx: isize) -> T {
    let (y0, y1) = Geometry::span(g.h, dy);
    let (x0, x1) = Geometry::span(g.w, dx);
    let mut acc = T::zero();
    for y in y0..y1 {
        let ra = &a[y * g.w + x0..y * g.w + x1];
        let sy = (y as isize + dy) as usize;
        let sx = (x0 as isize + dx) as usize;
        let rb = &b[sy * g.w + sx..sy * g.w + sx + (x1 - x0)];
        acc += ra.iter().zip(rb).fold(T::zero(), |s, (&p, &q)| s + p * q);
    }
    acc
}

/// Cross-correlation of `input (N, C, H, W)` with `kernel (O, C, kh, kw)`
/// plus per-channel `bias (O)`, preserving `H × W`.
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let g = Geometry::check(input.shape(), kernel.shape(), Some(bias.len()))?;
    let plane = g.plane();
    let (x, k, b) = (input.data(), kernel.data(), bias.data());
    let mut out = vec![T::zero(); g.n * g.o * plane];
    out.par_chunks_mut(g.o * plane).enumerate().for_each(|(n, out_n)| {
        let in_n = &x[n * g.c * plane..(n + 1) * g.c * plane];
        for (o, dst) in out_n.chunks_mut(plane).enumerate() {
            dst.fill(b[o]);
            for c in 0..g.c {
                let src = &in_n[c * plane..(c + 1) * plane];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let w = k[((o * g.c + c) * g.kh + ky) * g.kw + kx];
                        let (dy, dx) = g.offset(ky, kx);
                        axpy_shifted(dst, src, w, &g, dy, dx);
                    }
                }
            }
        }
    });
    Tensor::from_vec(vec![g.n, g.o, g.h, g.w], out)
}

/// Gradient with respect to the input given the output gradient.
pub fn conv2d_backward_input<T: Scalar>(grad_out: &[T], kernel: &Tensor<T>, input_shape: &Shape) -> Result<Vec<T>> {
    let g = Geometry::check(input_shape, kernel.shape(), None)?;
    let plane = g.plane();
    check_len(grad_out, g.n * g.o * plane)?;
    let k = kernel.data();
    let mut gin = vec![T::zero(); g.n * g.c * plane];
    gin.par_chunks_mut(g.c * plane).enumerate().for_each(|(n, gin_n)| {
        let gout_n = &grad_out[n * g.o * plane..(n + 1) * g.o * plane];
        for (c, dst) in gin_n.chunks_mut(plane).enumerate() {
            for o in 0..g.o {
                let src = &gout_n[o * plane..(o + 1) * plane];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let w = k[((o * g.c + c) * g.kh + ky) * g.kw + kx];
                        let (dy, dx) = g.offset(ky, kx);
                        axpy_scatter(dst, src, w, &g, dy, dx);
                    }
                }
            }
        }
    });
    Ok(gin)
}

/// Gradient with respect to the kernel, summed over the batch in order.
pub fn conv2d_backward_kernel<T: Scalar>(grad_out: &[T], input: &Tensor<T>, kernel_shape: &Shape) -> Result<Vec<T>> {
    let g = Geometry::check(input.shape(), kernel_shape, None)?;
    let plane = g.plane();
    check_len(grad_out, g.n * g.o * plane)?;
    let x = input.data();
    let per_o = g.c * g.kh * g.kw;
    let mut gk = vec![T::zero(); g.o * per_o];
    gk.par_chunks_mut(per_o).enumerate().for_each(|(o, gk_o)| {
        for n in 0..g.n {
            let go = &grad_out[(n * g.o + o) * plane..(n * g.o + o + 1) * plane];
            for c in 0..g.c {
                let src = &x[(n * g.c + c) * plane..(n * g.c + c + 1) * plane];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let (dy, dx) = g.offset(ky, kx);
                        gk_o[(c * g.kh + ky) * g.kw + kx] += dot_shifted(go, src, &g, dy, dx);
                    }
                }
            }
        }
    });
    Ok(gk)
}

/// Gradient with respect to the bias of an `(N, O, H, W)` output.
pub fn conv2d_backward_bias<T: Scalar>(grad_out: &[T], out_shape: &Shape) -> Result<Vec<T>> {
    let (n, o, h, w) = out_shape.nchw()?;
    check_len(grad_out, n * o * h * w)?;
    let plane = h * w;
    Ok((0..o)
        .map(|oc| {
            (0..n).fold(T::zero(), |acc, ni| {
                let p = &grad_out[(ni * o + oc) * plane..(ni * o + oc + 1) * plane];
                acc + p.iter().copied().sum::<T>()
            })
        })
        .collect())
}

fn check_len<T>(v: &[T], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::shape(format!(
            "conv2d gradient has {} elements, expected {expected}",
            v.len()
        )));
    }
    Ok(())
}
