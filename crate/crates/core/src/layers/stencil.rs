//! Direct shifted-row convolution for single-output-channel layers, where
//! GEMM lowering degenerates into matrix-vector products.

use rayon::prelude::*;

use crate::tensor::Real;

#[derive(Clone, Copy)]
pub(super) struct Shape {
    pub ic: usize,
    pub k: usize,
    pub pad: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Output columns `x` for which `x + kx − pad` lies inside the row.
    fn cols(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx);
        let hi = (self.w + self.pad).saturating_sub(kx).min(self.w);
        (lo, hi.max(lo))
    }

    fn rows(&self, ky: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(ky);
        let hi = (self.h + self.pad).saturating_sub(ky).min(self.h);
        (lo, hi.max(lo))
    }
}

/// Samples per weight-gradient partial sum; fixed for reproducible bits.
const GROUP: usize = 4;

pub(super) fn forward<T: Real>(s: &Shape, input: &[T], weight: &[T], bias: T, out: &mut [T]) {
    let (plane, kk) = (s.plane(), s.k * s.k);
    out.par_chunks_mut(plane)
        .zip(input.par_chunks(s.ic * plane))
        .for_each(|(y, x)| {
            y.fill(bias);
            for i in 0..s.ic {
                let src = &x[i * plane..(i + 1) * plane];
                for ky in 0..s.k {
                    let (r0, r1) = s.rows(ky);
                    for kx in 0..s.k {
                        let wv = weight[i * kk + ky * s.k + kx];
                        let (c0, c1) = s.cols(kx);
                        for r in r0..r1 {
                            let sr = (r + ky - s.pad) * s.w;
                            let dst = &mut y[r * s.w + c0..r * s.w + c1];
                            let from = &src[sr + c0 + kx - s.pad..sr + c1 + kx - s.pad];
                            for (d, &v) in dst.iter_mut().zip(from) {
                                *d = *d + wv * v;
                            }
                        }
                    }
                }
            }
        });
}

pub(super) struct Grads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Vec<T>,
    pub bias: T,
}

/// Eight interleaved partial sums so the loop vectorizes.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail = ca.remainder().iter().zip(cb.remainder()).fold(T::zero(), |s, (&p, &q)| s + p * q);
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] = lanes[l] + x[l] * y[l];
        }
    }
    lanes.iter().fold(tail, |s, &v| s + v)
}

/// Weight and bias gradient contributions of one sample, added into `acc`.
fn accumulate<T: Real>(s: &Shape, x: &[T], dy: &[T], acc: &mut [T], bias: &mut T) {
    let (plane, kk) = (s.plane(), s.k * s.k);
    for i in 0..s.ic {
        let src = &x[i * plane..(i + 1) * plane];
        for ky in 0..s.k {
            let (r0, r1) = s.rows(ky);
            for kx in 0..s.k {
                let (c0, c1) = s.cols(kx);
                let mut sum = T::zero();
                for r in r0..r1 {
                    let sr = (r + ky - s.pad) * s.w;
                    let g = &dy[r * s.w + c0..r * s.w + c1];
                    let v = &src[sr + c0 + kx - s.pad..sr + c1 + kx - s.pad];
                    sum = sum + dot(g, v);
                }
                acc[i * kk + ky * s.k + kx] = acc[i * kk + ky * s.k + kx] + sum;
            }
        }
    }
    *bias = dy.iter().fold(*bias, |a, &v| a + v);
}

fn input_grad<T: Real>(s: &Shape, weight: &[T], dy: &[T], dx: &mut [T]) {
    let (plane, kk) = (s.plane(), s.k * s.k);
    for i in 0..s.ic {
        let dst = &mut dx[i * plane..(i + 1) * plane];
        for ky in 0..s.k {
            let (r0, r1) = s.rows(ky);
            for kx in 0..s.k {
                let wv = weight[i * kk + ky * s.k + kx];
                let (c0, c1) = s.cols(kx);
                for r in r0..r1 {
                    let sr = (r + ky - s.pad) * s.w;
                    let g = &dy[r * s.w + c0..r * s.w + c1];
                    let d = &mut dst[sr + c0 + kx - s.pad..sr + c1 + kx - s.pad];
                    for (o, &v) in d.iter_mut().zip(g) {
                        *o = *o + wv * v;
                    }
                }
            }
        }
    }
}

pub(super) fn backward<T: Real>(s: &Shape, input: &[T], weight: &[T], upstream: &[T], want_input_grad: bool) -> Grads<T> {
    let (plane, in_len) = (s.plane(), s.ic * s.plane());
    let n = upstream.len() / plane;
    let wlen = s.ic * s.k * s.k;
    let partials: Vec<(Vec<T>, T)> = (0..n)
        .into_par_iter()
        .step_by(GROUP)
        .map(|s0| {
            let mut acc = vec![T::zero(); wlen];
            let mut b = T::zero();
            for j in s0..(s0 + GROUP).min(n) {
                accumulate(s, &input[j * in_len..(j + 1) * in_len], &upstream[j * plane..(j + 1) * plane], &mut acc, &mut b);
            }
            (acc, b)
        })
        .collect();
    let mut weight_grad = vec![T::zero(); wlen];
    let mut bias = T::zero();
    for (acc, b) in partials {
        for (w, a) in weight_grad.iter_mut().zip(acc) {
            *w = *w + a;
        }
        bias = bias + b;
    }
    let input_grad = want_input_grad.then(|| {
        let mut dx = vec![T::zero(); input.len()];
        dx.par_chunks_mut(in_len)
            .zip(upstream.par_chunks(plane))
            .for_each(|(d, dy)| input_grad(s, weight, dy, d));
        dx
    });
    Grads {
        input: input_grad,
        weight: weight_grad,
        bias,
    }
}
