//! Stride-1, zero-padded 2-D cross-correlation. Wide 3×3 layers go through
//! Winograd, single-output layers through direct row shifts, and everything
//! else is lowered to GEMM via im2col.
//!
//! The column buffer is built for a band of output rows at a time so whole
//! images can be pushed through the network without materialising a
//! `(ic·k², h·w)` matrix for the full image.

use rayon::prelude::*;

use super::{stencil, winograd};
use crate::error::{Error, Result};
use crate::tensor::{Dims, Real, Tensor4};

/// Target number of output pixels per im2col band.
const BAND_PIXELS: usize = 8192;

/// Samples per gradient-accumulation group. Fixed so the reduction order,
/// and therefore the result bits, do not depend on the thread count.
const GRAD_GROUP: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T: Real> {
    /// `None` when the caller asked not to propagate to the input.
    pub input: Option<Tensor4<T>>,
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Copy)]
struct Geometry {
    ic: usize,
    oc: usize,
    k: usize,
    pad: usize,
    h: usize,
    w: usize,
}

impl Geometry {
    fn cols(&self) -> usize {
        self.ic * self.k * self.k
    }

    fn plan(&self) -> winograd::Plan {
        winograd::Plan::new(self.ic, self.oc, self.h, self.w)
    }

    /// Winograd pays off once both channel counts fill a GEMM panel.
    fn uses_winograd(&self) -> bool {
        self.k == 3 && self.ic >= 8 && self.oc >= 8
    }

    fn stencil(&self) -> stencil::Shape {
        stencil::Shape {
            ic: self.ic,
            k: self.k,
            pad: self.pad,
            h: self.h,
            w: self.w,
        }
    }

    fn band_rows(&self) -> usize {
        (BAND_PIXELS / self.w).clamp(1, self.h)
    }
}

fn check(input: Dims, weight: Dims, bias_len: usize, padding: usize) -> Result<Geometry> {
    let k = weight.h;
    if weight.w != k {
        return Err(Error::config(format!("conv kernel must be square, got {weight}")));
    }
    if k % 2 == 0 {
        return Err(Error::config(format!("conv kernel size must be odd, got {k}")));
    }
    if padding != (k - 1) / 2 {
        return Err(Error::config(format!(
            "conv padding must be {} for kernel {k}, got {padding}",
            (k - 1) / 2
        )));
    }
    if input.c != weight.c {
        return Err(Error::config(format!(
            "conv expects {} input channels, input has {} (input {input}, weight {weight})",
            weight.c, input.c
        )));
    }
    if bias_len != weight.n {
        return Err(Error::config(format!(
            "conv bias has {bias_len} entries for {} output channels",
            weight.n
        )));
    }
    if input.h == 0 || input.w == 0 {
        return Err(Error::config(format!("conv input has empty spatial dims {input}")));
    }
    Ok(Geometry {
        ic: weight.c,
        oc: weight.n,
        k,
        pad: padding,
        h: input.h,
        w: input.w,
    })
}

/// Fills `col` (row-major `ic·k² × rows·w`) for output rows `r0..r0+rows`.
fn im2col<T: Real>(g: &Geometry, sample: &[T], r0: usize, rows: usize, col: &mut [T]) {
    let ncols = rows * g.w;
    let plane = g.h * g.w;
    let mut row = 0;
    for ci in 0..g.ic {
        let src = &sample[ci * plane..(ci + 1) * plane];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let dst = &mut col[row * ncols..(row + 1) * ncols];
                // Valid x range: 0 <= x + kx - pad < w.
                let x_lo = g.pad.saturating_sub(kx);
                let x_hi = (g.w + g.pad).saturating_sub(kx).min(g.w);
                for y in 0..rows {
                    let out = &mut dst[y * g.w..(y + 1) * g.w];
                    let sy = (r0 + y + ky) as isize - g.pad as isize;
                    if sy < 0 || sy >= g.h as isize || x_lo >= x_hi {
                        out.fill(T::zero());
                        continue;
                    }
                    let srow = &src[sy as usize * g.w..(sy as usize + 1) * g.w];
                    out[..x_lo].fill(T::zero());
                    let sx0 = x_lo + kx - g.pad;
                    out[x_lo..x_hi].copy_from_slice(&srow[sx0..sx0 + (x_hi - x_lo)]);
                    out[x_hi..].fill(T::zero());
                }
                row += 1;
            }
        }
    }
}

/// Scatter-adds `col` back into an input-shaped sample (adjoint of `im2col`).
fn col2im<T: Real>(g: &Geometry, col: &[T], r0: usize, rows: usize, sample: &mut [T]) {
    let ncols = rows * g.w;
    let plane = g.h * g.w;
    let mut row = 0;
    for ci in 0..g.ic {
        let dst = &mut sample[ci * plane..(ci + 1) * plane];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let src = &col[row * ncols..(row + 1) * ncols];
                let x_lo = g.pad.saturating_sub(kx);
                let x_hi = (g.w + g.pad).saturating_sub(kx).min(g.w);
                for y in 0..rows {
                    let sy = (r0 + y + ky) as isize - g.pad as isize;
                    if sy < 0 || sy >= g.h as isize || x_lo >= x_hi {
                        continue;
                    }
                    let sx0 = x_lo + kx - g.pad;
                    let drow = &mut dst[sy as usize * g.w + sx0..sy as usize * g.w + sx0 + (x_hi - x_lo)];
                    let srow = &src[y * g.w + x_lo..y * g.w + x_hi];
                    for (d, &s) in drow.iter_mut().zip(srow) {
                        *d = *d + s;
                    }
                }
                row += 1;
            }
        }
    }
}

fn forward_sample<T: Real>(
    g: &Geometry,
    weight: &[T],
    bias: &[T],
    input: &[T],
    out: &mut [T],
    col: &mut Vec<T>,
) {
    let plane = g.h * g.w;
    let kcols = g.cols();
    let band = g.band_rows();
    let mut r0 = 0;
    while r0 < g.h {
        let rows = band.min(g.h - r0);
        let ncols = rows * g.w;
        col.resize(kcols * ncols, T::zero());
        im2col(g, input, r0, rows, col);
        // SAFETY: W is oc×kcols row-major, col is kcols×ncols row-major and
        // the output band is oc rows of `ncols` contiguous values spaced by
        // one plane; all lie inside their slices.
        unsafe {
            T::gemm(
                g.oc,
                kcols,
                ncols,
                T::one(),
                weight.as_ptr(),
                kcols as isize,
                1,
                col.as_ptr(),
                ncols as isize,
                1,
                T::zero(),
                out.as_mut_ptr().add(r0 * g.w),
                plane as isize,
                1,
            );
        }
        r0 += rows;
    }
    for (o, &b) in bias.iter().enumerate() {
        if b != T::zero() {
            for v in &mut out[o * plane..(o + 1) * plane] {
                *v = *v + b;
            }
        }
    }
}

/// Same-size cross-correlation: `out[n,o,y,x] = b[o] + Σ w[o,i,ky,kx]·in[n,i,y+ky−p,x+kx−p]`.
pub fn conv2d_forward<T: Real>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: &[T],
    padding: usize,
) -> Result<Tensor4<T>> {
    let g = check(input.dims(), weight.dims(), bias.len(), padding)?;
    let d = input.dims();
    let mut out = Tensor4::zeros(Dims::new(d.n, g.oc, d.h, d.w));
    if d.n == 0 {
        return Ok(out);
    }
    if g.oc == 1 {
        stencil::forward(&g.stencil(), input.data(), weight.data(), bias[0], out.data_mut());
    } else if g.uses_winograd() {
        winograd::forward(&g.plan(), input, weight.data(), bias, &mut out);
    } else {
        forward_im2col(&g, input, weight, bias, &mut out);
    }
    Ok(out)
}

fn forward_im2col<T: Real>(g: &Geometry, input: &Tensor4<T>, weight: &Tensor4<T>, bias: &[T], out: &mut Tensor4<T>) {
    let d = input.dims();
    let in_len = d.sample_len();
    let out_len = g.oc * d.plane_len();
    out.data_mut()
        .par_chunks_mut(out_len)
        .zip(input.data().par_chunks(in_len))
        .for_each_init(Vec::new, |col, (o, i)| {
            forward_sample(g, weight.data(), bias, i, o, col)
        });
}

struct GroupGrads<T> {
    weight: Vec<T>,
    bias: Vec<T>,
}

/// Gradients of `Σ upstream ⊙ conv2d_forward(input, weight, bias)`.
pub fn conv2d_backward<T: Real>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    upstream: &Tensor4<T>,
    padding: usize,
) -> Result<ConvGrads<T>> {
    conv2d_backward_with(input, weight, upstream, padding, true)
}

pub(crate) fn conv2d_backward_with<T: Real>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    upstream: &Tensor4<T>,
    padding: usize,
    want_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let wd = weight.dims();
    let g = check(input.dims(), wd, wd.n, padding)?;
    let d = input.dims();
    let expected = Dims::new(d.n, g.oc, d.h, d.w);
    if upstream.dims() != expected {
        return Err(Error::shape(
            "conv2d_backward",
            format!("upstream {} but forward output is {expected}", upstream.dims()),
        ));
    }
    if g.oc == 1 {
        let r = stencil::backward(&g.stencil(), input.data(), weight.data(), upstream.data(), want_input_grad);
        return Ok(ConvGrads {
            input: r.input.map(|v| Tensor4::from_vec(d, v)).transpose()?,
            weight: Tensor4::from_vec(wd, r.weight)?,
            bias: vec![r.bias],
        });
    }
    if g.uses_winograd() {
        let r = winograd::backward(&g.plan(), input, weight.data(), upstream, want_input_grad);
        return Ok(ConvGrads {
            input: r.input,
            weight: Tensor4::from_vec(wd, r.weight)?,
            bias: r.bias,
        });
    }
    backward_im2col(&g, input, weight, upstream, want_input_grad)
}

fn backward_im2col<T: Real>(
    g: &Geometry,
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    upstream: &Tensor4<T>,
    want_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let g = *g;
    let wd = weight.dims();
    let d = input.dims();
    let plane = d.plane_len();
    let in_len = d.sample_len();
    let kcols = g.cols();
    let band = g.band_rows();

    let mut grad_input = want_input_grad.then(|| Tensor4::zeros(d));

    let sample_grads = |n: usize, col: &mut Vec<T>, dcol: &mut Vec<T>, acc: &mut GroupGrads<T>, dx: Option<&mut [T]>| {
        let x = input.sample(n);
        let dy = upstream.sample(n);
        let mut dx = dx;
        let mut r0 = 0;
        while r0 < g.h {
            let rows = band.min(g.h - r0);
            let ncols = rows * g.w;
            col.resize(kcols * ncols, T::zero());
            im2col(&g, x, r0, rows, col);
            // SAFETY: dY band is oc×ncols with row stride `plane`; colᵀ is
            // read through transposed strides of the kcols×ncols buffer.
            unsafe {
                T::gemm(
                    g.oc,
                    ncols,
                    kcols,
                    T::one(),
                    dy.as_ptr().add(r0 * g.w),
                    plane as isize,
                    1,
                    col.as_ptr(),
                    1,
                    ncols as isize,
                    T::one(),
                    acc.weight.as_mut_ptr(),
                    kcols as isize,
                    1,
                );
            }
            if let Some(dx) = dx.as_deref_mut() {
                dcol.resize(kcols * ncols, T::zero());
                // SAFETY: Wᵀ via transposed strides of the oc×kcols weight.
                unsafe {
                    T::gemm(
                        kcols,
                        g.oc,
                        ncols,
                        T::one(),
                        weight.data().as_ptr(),
                        1,
                        kcols as isize,
                        dy.as_ptr().add(r0 * g.w),
                        plane as isize,
                        1,
                        T::zero(),
                        dcol.as_mut_ptr(),
                        ncols as isize,
                        1,
                    );
                }
                col2im(&g, dcol, r0, rows, dx);
            }
            r0 += rows;
        }
        for o in 0..g.oc {
            let s = dy[o * plane..(o + 1) * plane]
                .iter()
                .fold(T::zero(), |a, &v| a + v);
            acc.bias[o] = acc.bias[o] + s;
        }
    };

    let groups: Vec<usize> = (0..d.n).step_by(GRAD_GROUP).collect();
    let partials: Vec<GroupGrads<T>> = match grad_input.as_mut() {
        Some(gi) => {
            let mut dx_groups: Vec<&mut [T]> = gi.data_mut().chunks_mut(in_len * GRAD_GROUP).collect();
            groups
                .par_iter()
                .zip(dx_groups.par_iter_mut())
                .map(|(&start, dxg)| {
                    let mut acc = GroupGrads {
                        weight: vec![T::zero(); g.oc * kcols],
                        bias: vec![T::zero(); g.oc],
                    };
                    let (mut col, mut dcol) = (Vec::new(), Vec::new());
                    for (j, dx) in dxg.chunks_mut(in_len).enumerate() {
                        sample_grads(start + j, &mut col, &mut dcol, &mut acc, Some(dx));
                    }
                    acc
                })
                .collect()
        }
        None => groups
            .par_iter()
            .map(|&start| {
                let mut acc = GroupGrads {
                    weight: vec![T::zero(); g.oc * kcols],
                    bias: vec![T::zero(); g.oc],
                };
                let (mut col, mut dcol) = (Vec::new(), Vec::new());
                for n in start..(start + GRAD_GROUP).min(d.n) {
                    sample_grads(n, &mut col, &mut dcol, &mut acc, None);
                }
                acc
            })
            .collect(),
    };

    let mut grad_weight = vec![T::zero(); g.oc * kcols];
    let mut grad_bias = vec![T::zero(); g.oc];
    for p in &partials {
        for (a, &b) in grad_weight.iter_mut().zip(&p.weight) {
            *a = *a + b;
        }
        for (a, &b) in grad_bias.iter_mut().zip(&p.bias) {
            *a = *a + b;
        }
    }
    Ok(ConvGrads {
        input: grad_input,
        weight: Tensor4::from_vec(wd, grad_weight)?,
        bias: grad_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_kernel(k: usize) -> Tensor4<f64> {
        let mut w = Tensor4::zeros(Dims::new(1, 1, k, k));
        w.set(0, 0, k / 2, k / 2, 1.0);
        w
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let x = Tensor4::<f64>::from_fn(Dims::new(2, 1, 5, 7), |n, _, y, x| {
            (n * 31 + y * 7 + x) as f64 * 0.1 - 1.3
        });
        for k in [3, 5] {
            let y = conv2d_forward(&x, &identity_kernel(k), &[0.0], k / 2).unwrap();
            for (a, b) in y.data().iter().zip(x.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn box_filter_on_constant_shows_zero_padding() {
        let x = Tensor4::<f64>::filled(Dims::new(1, 1, 6, 6), 1.0);
        let w = Tensor4::filled(Dims::new(1, 1, 3, 3), 1.0 / 9.0);
        let y = conv2d_forward(&x, &w, &[0.0], 1).unwrap();
        assert!((y.get(0, 0, 2, 3) - 1.0).abs() < 1e-12);
        assert!((y.get(0, 0, 0, 0) - 4.0 / 9.0).abs() < 1e-12);
        assert!((y.get(0, 0, 5, 5) - 4.0 / 9.0).abs() < 1e-12);
        assert!((y.get(0, 0, 0, 3) - 6.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_geometry() {
        let x = Tensor4::<f32>::zeros(Dims::new(1, 2, 4, 4));
        let w = Tensor4::<f32>::zeros(Dims::new(3, 1, 3, 3));
        assert!(matches!(conv2d_forward(&x, &w, &[0.0; 3], 1), Err(Error::Config(_))));
        let w = Tensor4::<f32>::zeros(Dims::new(3, 2, 4, 4));
        assert!(conv2d_forward(&x, &w, &[0.0; 3], 2).is_err());
        let w = Tensor4::<f32>::zeros(Dims::new(3, 2, 3, 3));
        assert!(conv2d_forward(&x, &w, &[0.0; 3], 0).is_err());
        assert!(conv2d_forward(&x, &w, &[0.0; 2], 1).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let x = Tensor4::<f64>::from_fn(Dims::new(1, 2, 4, 4), |_, c, y, x| (c + y * x) as f64);
        let w = Tensor4::<f64>::filled(Dims::new(3, 2, 3, 3), 0.3);
        let up = Tensor4::zeros(Dims::new(1, 3, 4, 4));
        let g = conv2d_backward(&x, &w, &up, 1).unwrap();
        assert!(g.input.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.weight.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel_backward_passes_upstream_through() {
        let x = Tensor4::<f64>::filled(Dims::new(1, 1, 5, 5), 0.2);
        let up = Tensor4::<f64>::from_fn(Dims::new(1, 1, 5, 5), |_, _, y, x| (y as f64) - (x as f64) * 0.5);
        let g = conv2d_backward(&x, &identity_kernel(3), &up, 1).unwrap();
        assert_eq!(g.input.unwrap().data(), up.data());
    }

    #[test]
    fn banding_matches_single_band() {
        // Width 3 with BAND_PIXELS forces many bands on a tall image.
        let d = Dims::new(1, 2, 9000, 3);
        let x = Tensor4::<f64>::from_fn(d, |_, c, y, x| ((c * 7 + y * 3 + x) % 11) as f64 - 5.0);
        let w = Tensor4::<f64>::from_fn(Dims::new(2, 2, 3, 3), |o, i, y, x| (o + 2 * i + y + x) as f64 * 0.1);
        let y = conv2d_forward(&x, &w, &[0.5, -0.5], 1).unwrap();
        for &(row, col) in &[(0usize, 0usize), (2730, 1), (2731, 2), (8999, 2)] {
            let mut s = 0.5;
            for i in 0..2 {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (sy, sx) = (row as isize + ky as isize - 1, col as isize + kx as isize - 1);
                        if sy >= 0 && sy < 9000 && sx >= 0 && sx < 3 {
                            s += w.get(0, i, ky, kx) * x.get(0, i, sy as usize, sx as usize);
                        }
                    }
                }
            }
            assert!((y.get(0, 0, row, col) - s).abs() < 1e-9);
        }
    }

    #[test]
    fn single_output_path_matches_im2col() {
        for &(n, ic, k, h, w) in &[(5, 3, 3, 6, 7), (1, 1, 1, 1, 1), (2, 4, 5, 3, 2), (6, 2, 3, 1, 9)] {
            let d = Dims::new(n, ic, h, w);
            let x = Tensor4::<f64>::from_fn(d, |a, b, y, z| ((a * 13 + b * 7 + y * 5 + z * 3) % 17) as f64 * 0.1 - 0.8);
            let wt = Tensor4::<f64>::from_fn(Dims::new(1, ic, k, k), |_, b, y, z| ((b * 3 + y * 2 + z) % 7) as f64 * 0.2 - 0.6);
            let bias = vec![0.3];
            let up = Tensor4::<f64>::from_fn(Dims::new(n, 1, h, w), |a, _, y, z| ((a + y * 3 + z * 7) % 13) as f64 * 0.1 - 0.6);
            let g = check(d, wt.dims(), 1, k / 2).unwrap();

            let fast = conv2d_forward(&x, &wt, &bias, k / 2).unwrap();
            let mut slow = Tensor4::zeros(fast.dims());
            forward_im2col(&g, &x, &wt, &bias, &mut slow);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12, "forward {n}x{ic}x{h}x{w}: {a} vs {b}");
            }

            let gf = conv2d_backward(&x, &wt, &up, k / 2).unwrap();
            let gs = backward_im2col(&g, &x, &wt, &up, true).unwrap();
            let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(p, q)| (p - q).abs() < 1e-10 * (1.0 + q.abs()));
            assert!(close(gf.input.as_ref().unwrap().data(), gs.input.as_ref().unwrap().data()));
            assert!(close(gf.weight.data(), gs.weight.data()));
            assert!(close(&gf.bias, &gs.bias));
        }
    }

    #[test]
    fn winograd_matches_im2col() {
        // Odd sizes, single pixels, multi-sample tasks and banded samples.
        for &(n, ic, oc, h, w) in &[(3, 8, 9, 5, 7), (1, 8, 8, 1, 1), (2, 9, 8, 2, 1), (9, 8, 8, 8, 8), (2, 8, 10, 13, 6), (1, 8, 8, 75, 71)] {
            let d = Dims::new(n, ic, h, w);
            let x = Tensor4::<f64>::from_fn(d, |a, b, y, z| ((a * 13 + b * 7 + y * 5 + z * 3) % 17) as f64 * 0.1 - 0.8);
            let wt = Tensor4::<f64>::from_fn(Dims::new(oc, ic, 3, 3), |a, b, y, z| ((a * 5 + b * 3 + y * 2 + z) % 7) as f64 * 0.2 - 0.6);
            let bias: Vec<f64> = (0..oc).map(|o| o as f64 * 0.25 - 0.1).collect();
            let up = Tensor4::<f64>::from_fn(Dims::new(n, oc, h, w), |a, b, y, z| ((a + b * 11 + y * 3 + z * 7) % 13) as f64 * 0.1 - 0.6);
            let g = check(d, wt.dims(), oc, 1).unwrap();

            let fast = conv2d_forward(&x, &wt, &bias, 1).unwrap();
            let mut slow = Tensor4::zeros(fast.dims());
            forward_im2col(&g, &x, &wt, &bias, &mut slow);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12, "forward {n}x{ic}x{h}x{w}: {a} vs {b}");
            }

            let gf = conv2d_backward(&x, &wt, &up, 1).unwrap();
            let gs = backward_im2col(&g, &x, &wt, &up, true).unwrap();
            let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(p, q)| (p - q).abs() < 1e-10 * (1.0 + q.abs()));
            assert!(close(gf.input.as_ref().unwrap().data(), gs.input.as_ref().unwrap().data()));
            assert!(close(gf.weight.data(), gs.weight.data()));
            assert!(close(&gf.bias, &gs.bias));
        }
    }
}
