//! Winograd F(4×4, 3×3) path for 3×3 same-padded convolutions.
//!
//! Each 4×4 output tile is computed from a 6×6 input tile as
//! `Aᵀ[(G g Gᵀ) ⊙ (Bᵀ d B)]A`; summing over input channels turns the
//! elementwise product into 36 GEMMs. The backward pass is the exact adjoint
//! of that computation.

use rayon::prelude::*;

use crate::tensor::{Real, Tensor4};

/// Output tile side.
const M: usize = 4;
/// Input tile side.
const N: usize = M + 2;
/// Transform-domain positions per tile.
const XI: usize = N * N;

/// Target tiles per GEMM; keeps the transform buffers cache-resident.
const TILE_BUDGET: usize = 256;

const BT: [[f64; N]; N] = [
    [4.0, 0.0, -5.0, 0.0, 1.0, 0.0],
    [0.0, -4.0, -4.0, 1.0, 1.0, 0.0],
    [0.0, 4.0, -4.0, -1.0, 1.0, 0.0],
    [0.0, -2.0, -1.0, 2.0, 1.0, 0.0],
    [0.0, 2.0, -1.0, -2.0, 1.0, 0.0],
    [0.0, 4.0, 0.0, -5.0, 0.0, 1.0],
];

const G: [[f64; 3]; N] = [
    [1.0 / 4.0, 0.0, 0.0],
    [-1.0 / 6.0, -1.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, 1.0 / 6.0, -1.0 / 6.0],
    [1.0 / 24.0, 1.0 / 12.0, 1.0 / 6.0],
    [1.0 / 24.0, -1.0 / 12.0, 1.0 / 6.0],
    [0.0, 0.0, 1.0],
];

const AT: [[f64; N]; M] = [
    [1.0, 1.0, 1.0, 1.0, 1.0, 0.0],
    [0.0, 1.0, -1.0, 2.0, -2.0, 0.0],
    [0.0, 1.0, 1.0, 4.0, 4.0, 0.0],
    [0.0, 1.0, -1.0, 8.0, -8.0, 1.0],
];

#[derive(Clone, Copy)]
pub(super) struct Plan {
    ic: usize,
    oc: usize,
    h: usize,
    w: usize,
    th: usize,
    tw: usize,
}

/// A run of tiles handled by one set of GEMMs: several whole samples, or a
/// band of tile rows within a single sample.
#[derive(Clone, Copy)]
struct Pass {
    /// First sample, relative to the task.
    s0: usize,
    samples: usize,
    ty0: usize,
    rows: usize,
}

impl Pass {
    /// GEMM width: tiles of every sample, filler columns included.
    fn tiles(&self, tw: usize) -> usize {
        self.samples * self.rows * (tw + 1)
    }
}

impl Plan {
    pub(super) fn new(ic: usize, oc: usize, h: usize, w: usize) -> Self {
        Plan {
            ic,
            oc,
            h,
            w,
            th: h.div_ceil(M),
            tw: w.div_ceil(M),
        }
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Samples per parallel task; fixed by geometry so reductions are deterministic.
    fn samples_per_task(&self) -> usize {
        (TILE_BUDGET / (self.th * (self.tw + 1))).max(1)
    }

    fn passes(&self, samples: usize) -> Vec<Pass> {
        if samples > 1 || self.th * (self.tw + 1) <= TILE_BUDGET {
            return vec![Pass {
                s0: 0,
                samples,
                ty0: 0,
                rows: self.th,
            }];
        }
        let band = (TILE_BUDGET / (self.tw + 1)).clamp(1, self.th);
        (0..self.th)
            .step_by(band)
            .map(|ty0| Pass {
                s0: 0,
                samples: 1,
                ty0,
                rows: band.min(self.th - ty0),
            })
            .collect()
    }
}

/// `U[ξ][o][i] = (G g Gᵀ)[ξ]` for every filter.
pub(super) fn transform_filters<T: Real>(p: &Plan, weight: &[T]) -> Vec<T> {
    let (ic, oc) = (p.ic, p.oc);
    let mut u = vec![T::zero(); XI * oc * ic];
    for o in 0..oc {
        for i in 0..ic {
            let g = &weight[(o * ic + i) * 9..(o * ic + i) * 9 + 9];
            // G g: N×3.
            let mut t = [T::zero(); N * 3];
            for a in 0..N {
                for s in 0..3 {
                    t[a * 3 + s] = (0..3).fold(T::zero(), |acc, r| acc + T::from_f64(G[a][r]) * g[r * 3 + s]);
                }
            }
            for a in 0..N {
                for c in 0..N {
                    let v = (0..3).fold(T::zero(), |acc, s| acc + t[a * 3 + s] * T::from_f64(G[c][s]));
                    u[((a * N + c) * oc + o) * ic + i] = v;
                }
            }
        }
    }
    u
}

/// Adjoint of [`transform_filters`]: `dg = Gᵀ dU G`, laid out like the weight.
fn filter_grad_from_transform<T: Real>(p: &Plan, du: &[T]) -> Vec<T> {
    let (ic, oc) = (p.ic, p.oc);
    let mut dg = vec![T::zero(); oc * ic * 9];
    for o in 0..oc {
        for i in 0..ic {
            // dU G: N×3.
            let mut t = [T::zero(); N * 3];
            for a in 0..N {
                for s in 0..3 {
                    t[a * 3 + s] = (0..N).fold(T::zero(), |acc, c| {
                        acc + du[((a * N + c) * oc + o) * ic + i] * T::from_f64(G[c][s])
                    });
                }
            }
            let out = &mut dg[(o * ic + i) * 9..(o * ic + i) * 9 + 9];
            for r in 0..3 {
                for s in 0..3 {
                    out[r * 3 + s] = (0..N).fold(T::zero(), |acc, a| acc + T::from_f64(G[a][r]) * t[a * 3 + s]);
                }
            }
        }
    }
    dg
}

/// `dst (+)= Σ coef[j] · src(j)` over the nonzero coefficients, in one pass.
#[inline]
fn lincomb<'a, T: Real + 'a>(dst: &mut [T], coefs: &[f64], src: impl Fn(usize) -> &'a [T], add: bool) {
    let len = dst.len();
    let mut c = [T::zero(); N];
    let mut s: [&[T]; N] = [&[]; N];
    let mut n = 0;
    for (j, &v) in coefs.iter().enumerate() {
        if v != 0.0 {
            c[n] = T::from_f64(v);
            s[n] = &src(j)[..len];
            n += 1;
        }
    }
    let base = |d: &T| if add { *d } else { T::zero() };
    match n {
        0 => {
            if !add {
                dst.fill(T::zero());
            }
        }
        1 => {
            for (k, d) in dst.iter_mut().enumerate() {
                *d = base(d) + c[0] * s[0][k];
            }
        }
        2 => {
            for (k, d) in dst.iter_mut().enumerate() {
                *d = base(d) + c[0] * s[0][k] + c[1] * s[1][k];
            }
        }
        3 => {
            for (k, d) in dst.iter_mut().enumerate() {
                *d = base(d) + c[0] * s[0][k] + c[1] * s[1][k] + c[2] * s[2][k];
            }
        }
        4 => {
            for (k, d) in dst.iter_mut().enumerate() {
                *d = base(d) + c[0] * s[0][k] + c[1] * s[1][k] + c[2] * s[2][k] + c[3] * s[3][k];
            }
        }
        5 => {
            for (k, d) in dst.iter_mut().enumerate() {
                *d = base(d) + c[0] * s[0][k] + c[1] * s[1][k] + c[2] * s[2][k] + c[3] * s[3][k] + c[4] * s[4][k];
            }
        }
        _ => {
            for (k, d) in dst.iter_mut().enumerate() {
                let mut v = base(d);
                for t in 0..n {
                    v = v + c[t] * s[t][k];
                }
                *d = v;
            }
        }
    }
}

/// `dst = Σ coef[j] · src(j)`.
#[inline]
fn combine<'a, T: Real + 'a>(dst: &mut [T], coefs: &[f64], src: impl Fn(usize) -> &'a [T]) {
    lincomb(dst, coefs, src, false);
}

/// Geometry of one pass over one channel plane.
///
/// The zero-padded plane (padded row `y + 1`, column `x + 1`) is stored
/// split by residue mod `M` in both directions: block `(qr, qc)` holds
/// padded pixels `(M·a + qr, M·b + qc)` for `a < rows + 1`, `b < tw + 1`.
/// Tap `j` of tile `tx` is then column `tx + j / M` of block `j % M`, so
/// every transform step is a contiguous vector operation over all tiles.
/// Tiles are laid out with `tw + 1` columns per row; the extra column is
/// filler that never reaches the output.
#[derive(Clone, Copy)]
struct Span {
    rows: usize,
    /// Tile columns including the filler column.
    cols: usize,
}

impl Span {
    fn new(p: &Plan, pass: &Pass) -> Self {
        Span {
            rows: pass.rows,
            cols: p.tw + 1,
        }
    }

    /// Elements in one residue block.
    fn block(&self) -> usize {
        (self.rows + 1) * self.cols
    }

    /// Tiles in the pass for one sample, filler included.
    fn tiles(&self) -> usize {
        self.rows * self.cols
    }
}

/// Per-task scratch.
struct Scratch<T> {
    /// `M × M` residue blocks of the padded plane.
    split: Vec<T>,
    /// `N × M` blocks after the horizontal step.
    horiz: Vec<T>,
    /// `M × N` (and `M × M`) intermediates of the output-side transforms.
    mid: Vec<T>,
    out: Vec<T>,
}

impl<T: Real> Scratch<T> {
    fn new() -> Self {
        Scratch {
            split: Vec::new(),
            horiz: Vec::new(),
            mid: Vec::new(),
            out: Vec::new(),
        }
    }

    fn size(&mut self, sp: &Span) {
        let b = sp.block();
        self.split.resize(M * M * b, T::zero());
        self.horiz.resize(N * M * b, T::zero());
        self.mid.resize(M * N * sp.tiles(), T::zero());
        self.out.resize(M * M * sp.tiles(), T::zero());
    }
}

/// Fills the residue blocks from one input channel plane.
fn split_plane<T: Real>(p: &Plan, pass: &Pass, sp: &Span, src: &[T], split: &mut [T]) {
    split.fill(T::zero());
    let b = sp.block();
    let r0 = M * pass.ty0;
    // Padded rows r0 .. r0 + M·(rows + 1) map to plane rows one less.
    for pr in r0..r0 + M * (sp.rows + 1) {
        let Some(y) = pr.checked_sub(1).filter(|&y| y < p.h) else {
            continue;
        };
        let (qr, a) = ((pr - r0) % M, (pr - r0) / M);
        let row = &src[y * p.w..(y + 1) * p.w];
        for (x, &v) in row.iter().enumerate() {
            let pc = x + 1;
            split[(qr * M + pc % M) * b + a * sp.cols + pc / M] = v;
        }
    }
}

/// Adds the residue blocks back into an input-gradient plane.
fn merge_plane<T: Real>(p: &Plan, pass: &Pass, sp: &Span, split: &[T], dst: &mut [T]) {
    let b = sp.block();
    let r0 = M * pass.ty0;
    for pr in r0..r0 + M * (sp.rows + 1) {
        let Some(y) = pr.checked_sub(1).filter(|&y| y < p.h) else {
            continue;
        };
        let (qr, a) = ((pr - r0) % M, (pr - r0) / M);
        let row = &mut dst[y * p.w..(y + 1) * p.w];
        for (x, d) in row.iter_mut().enumerate() {
            let pc = x + 1;
            *d = *d + split[(qr * M + pc % M) * b + a * sp.cols + pc / M];
        }
    }
}

/// `V[ξ][i][t] = (Bᵀ d B)[ξ]` for every tile of the pass.
fn input_transform<T: Real>(p: &Plan, x: &[T], pass: Pass, v: &mut [T], sc: &mut Scratch<T>) {
    let sp = Span::new(p, &pass);
    sc.size(&sp);
    let nt = pass.samples * sp.tiles();
    let (plane, b, nt1) = (p.plane(), sp.block(), sp.tiles());
    // Horizontal outputs are valid for every column but the last of the
    // final block row; that one would read past the block and is filler.
    let hlen = b - 1;
    for s in 0..pass.samples {
        for i in 0..p.ic {
            let src = &x[((pass.s0 + s) * p.ic + i) * plane..((pass.s0 + s) * p.ic + i + 1) * plane];
            split_plane(p, &pass, &sp, src, &mut sc.split);
            // horiz[c][qr] = Σ_j Bᵀ[c][j] · split[qr][j % M] shifted by j / M.
            let split = &sc.split;
            for c in 0..N {
                for qr in 0..M {
                    let at = (c * M + qr) * b;
                    combine(&mut sc.horiz[at..at + hlen], &BT[c], |j| {
                        let o = (qr * M + j % M) * b + j / M;
                        &split[o..o + hlen]
                    });
                    sc.horiz[at + hlen] = T::zero();
                }
            }
            // V[a·N + c] = Σ_r Bᵀ[a][r] · horiz[c][r % M] shifted by r / M rows.
            let horiz = &sc.horiz;
            for a in 0..N {
                for c in 0..N {
                    let at = ((a * N + c) * p.ic + i) * nt + s * nt1;
                    combine(&mut v[at..at + nt1], &BT[a], |r| {
                        let o = (c * M + r % M) * b + (r / M) * sp.cols;
                        &horiz[o..o + nt1]
                    });
                }
            }
        }
    }
}

/// `y = Aᵀ m A + bias`, cropped to the output plane.
fn output_transform<T: Real>(p: &Plan, m: &[T], pass: Pass, bias: &[T], y: &mut [T], sc: &mut Scratch<T>) {
    let sp = Span::new(p, &pass);
    sc.size(&sp);
    let nt = pass.samples * sp.tiles();
    let (plane, nt1) = (p.plane(), sp.tiles());
    for s in 0..pass.samples {
        for o in 0..p.oc {
            let at = |xi: usize| {
                let o0 = (xi * p.oc + o) * nt + s * nt1;
                &m[o0..o0 + nt1]
            };
            // mid[a'][c] = Σ_a Aᵀ[a'][a] · m[a·N + c].
            for ar in 0..M {
                for c in 0..N {
                    let k = (ar * N + c) * nt1;
                    combine(&mut sc.mid[k..k + nt1], &AT[ar], |a| at(a * N + c));
                }
            }
            // out[b'][a'] = Σ_c Aᵀ[b'][c] · mid[a'][c].
            let mid = &sc.mid;
            for bq in 0..M {
                for ar in 0..M {
                    let k = (bq * M + ar) * nt1;
                    combine(&mut sc.out[k..k + nt1], &AT[bq], |c| {
                        let o0 = (ar * N + c) * nt1;
                        &mid[o0..o0 + nt1]
                    });
                }
            }
            let dst = &mut y[((pass.s0 + s) * p.oc + o) * plane..((pass.s0 + s) * p.oc + o + 1) * plane];
            let bv = bias[o];
            for ty in 0..sp.rows {
                for ar in 0..M {
                    let oy = M * (pass.ty0 + ty) + ar;
                    if oy >= p.h {
                        break;
                    }
                    let row = &mut dst[oy * p.w..(oy + 1) * p.w];
                    for (x, val) in row.iter_mut().enumerate() {
                        *val = sc.out[((x % M) * M + ar) * nt1 + ty * sp.cols + x / M] + bv;
                    }
                }
            }
        }
    }
}

/// Adjoint of [`output_transform`]: `dM[ξ][o][t] = (A dy Aᵀ)[ξ]`, zero on
/// filler tiles.
fn grad_output_transform<T: Real>(p: &Plan, dy: &[T], pass: Pass, dm: &mut [T], sc: &mut Scratch<T>) {
    let sp = Span::new(p, &pass);
    sc.size(&sp);
    let nt = pass.samples * sp.tiles();
    let (plane, nt1) = (p.plane(), sp.tiles());
    for s in 0..pass.samples {
        for o in 0..p.oc {
            let src = &dy[((pass.s0 + s) * p.oc + o) * plane..((pass.s0 + s) * p.oc + o + 1) * plane];
            sc.out.fill(T::zero());
            for ty in 0..sp.rows {
                for ar in 0..M {
                    let oy = M * (pass.ty0 + ty) + ar;
                    if oy >= p.h {
                        break;
                    }
                    for (x, &g) in src[oy * p.w..(oy + 1) * p.w].iter().enumerate() {
                        sc.out[((x % M) * M + ar) * nt1 + ty * sp.cols + x / M] = g;
                    }
                }
            }
            // mid[a'][c] = Σ_b' Aᵀ[b'][c] · out[b'][a'].
            let out = &sc.out;
            for ar in 0..M {
                for c in 0..N {
                    let coefs: [f64; M] = std::array::from_fn(|bq| AT[bq][c]);
                    let k = (ar * N + c) * nt1;
                    combine(&mut sc.mid[k..k + nt1], &coefs, |bq| {
                        let o0 = (bq * M + ar) * nt1;
                        &out[o0..o0 + nt1]
                    });
                }
            }
            // dM[a·N + c] = Σ_a' Aᵀ[a'][a] · mid[a'][c].
            let mid = &sc.mid;
            for a in 0..N {
                let coefs: [f64; M] = std::array::from_fn(|ar| AT[ar][a]);
                for c in 0..N {
                    let at = ((a * N + c) * p.oc + o) * nt + s * nt1;
                    combine(&mut dm[at..at + nt1], &coefs, |ar| {
                        let o0 = (ar * N + c) * nt1;
                        &mid[o0..o0 + nt1]
                    });
                }
            }
        }
    }
}

/// Adjoint of [`input_transform`]: scatter-adds `B dV Bᵀ` into `dx`.
fn input_grad_scatter<T: Real>(p: &Plan, dv: &[T], pass: Pass, dx: &mut [T], sc: &mut Scratch<T>) {
    let sp = Span::new(p, &pass);
    sc.size(&sp);
    let nt = pass.samples * sp.tiles();
    let (plane, b, nt1) = (p.plane(), sp.block(), sp.tiles());
    let hlen = b - 1;
    for s in 0..pass.samples {
        for i in 0..p.ic {
            let at = |xi: usize| {
                let o0 = (xi * p.ic + i) * nt + s * nt1;
                &dv[o0..o0 + nt1]
            };
            // horiz[c][r % M] at row offset r / M += Σ_a Bᵀ[a][r] · dV[a·N + c].
            sc.horiz.fill(T::zero());
            for c in 0..N {
                for r in 0..N {
                    let coefs: [f64; N] = std::array::from_fn(|a| BT[a][r]);
                    let o0 = (c * M + r % M) * b + (r / M) * sp.cols;
                    lincomb(&mut sc.horiz[o0..o0 + nt1], &coefs, |a| at(a * N + c), true);
                }
            }
            // split[qr][j % M] shifted by j / M += Σ_c Bᵀ[c][j] · horiz[c][qr].
            sc.split.fill(T::zero());
            for qr in 0..M {
                for j in 0..N {
                    let o0 = (qr * M + j % M) * b + j / M;
                    let coefs: [f64; N] = std::array::from_fn(|c| BT[c][j]);
                    let horiz = &sc.horiz;
                    lincomb(&mut sc.split[o0..o0 + hlen], &coefs, |c| {
                        let h0 = (c * M + qr) * b;
                        &horiz[h0..h0 + hlen]
                    }, true);
                }
            }
            let dst = &mut dx[((pass.s0 + s) * p.ic + i) * plane..((pass.s0 + s) * p.ic + i + 1) * plane];
            merge_plane(p, &pass, &sp, &sc.split, dst);
        }
    }
}

/// `C[ξ] = Σ A[ξ]·B[ξ]` over the transform positions, with strided operands.
#[allow(clippy::too_many_arguments)]
fn batched_gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    (rsa, csa): (usize, usize),
    b: &[T],
    (rsb, csb): (usize, usize),
    beta: T,
    c: &mut [T],
) {
    let (sa, sb, sc) = (m * k, k * n, m * n);
    debug_assert!(a.len() >= XI * sa && b.len() >= XI * sb && c.len() >= XI * sc);
    for xi in 0..XI {
        // SAFETY: each operand slice holds XI dense blocks of the stated
        // size, and the strides address within one block.
        unsafe {
            T::gemm(
                m,
                k,
                n,
                T::one(),
                a.as_ptr().add(xi * sa),
                rsa as isize,
                csa as isize,
                b.as_ptr().add(xi * sb),
                rsb as isize,
                csb as isize,
                beta,
                c.as_mut_ptr().add(xi * sc),
                n as isize,
                1,
            );
        }
    }
}

pub(super) fn forward<T: Real>(p: &Plan, input: &Tensor4<T>, weight: &[T], bias: &[T], out: &mut Tensor4<T>) {
    let u = transform_filters(p, weight);
    let spt = p.samples_per_task();
    let (in_len, out_len) = (p.ic * p.plane(), p.oc * p.plane());
    out.data_mut()
        .par_chunks_mut(spt * out_len)
        .zip(input.data().par_chunks(spt * in_len))
        .for_each(|(y, x)| {
            let samples = x.len() / in_len;
            let mut v = Vec::new();
            let mut m = Vec::new();
            let mut sc = Scratch::new();
            for pass in p.passes(samples) {
                let nt = pass.tiles(p.tw);
                v.resize(XI * p.ic * nt, T::zero());
                m.resize(XI * p.oc * nt, T::zero());
                input_transform(p, x, pass, &mut v, &mut sc);
                batched_gemm(p.oc, p.ic, nt, &u, (p.ic, 1), &v, (nt, 1), T::zero(), &mut m);
                output_transform(p, &m, pass, bias, y, &mut sc);
            }
        });
}

pub(super) struct Grads<T> {
    pub input: Option<Tensor4<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub(super) fn backward<T: Real>(
    p: &Plan,
    input: &Tensor4<T>,
    weight: &[T],
    upstream: &Tensor4<T>,
    want_input_grad: bool,
) -> Grads<T> {
    let u = transform_filters(p, weight);
    let spt = p.samples_per_task();
    let (in_len, out_len) = (p.ic * p.plane(), p.oc * p.plane());
    let plane = p.plane();
    let mut grad_input = want_input_grad.then(|| Tensor4::zeros(input.dims()));

    let task = |x: &[T], dy: &[T], mut dx: Option<&mut [T]>| -> (Vec<T>, Vec<T>) {
        let samples = x.len() / in_len;
        let mut du = vec![T::zero(); XI * p.oc * p.ic];
        let (mut v, mut dm, mut dv) = (Vec::new(), Vec::new(), Vec::new());
        let mut sc = Scratch::new();
        for pass in p.passes(samples) {
            let nt = pass.tiles(p.tw);
            v.resize(XI * p.ic * nt, T::zero());
            dm.resize(XI * p.oc * nt, T::zero());
            input_transform(p, x, pass, &mut v, &mut sc);
            grad_output_transform(p, dy, pass, &mut dm, &mut sc);
            batched_gemm(p.oc, nt, p.ic, &dm, (nt, 1), &v, (1, nt), T::one(), &mut du);
            if let Some(dx) = dx.as_deref_mut() {
                dv.resize(XI * p.ic * nt, T::zero());
                batched_gemm(p.ic, p.oc, nt, &u, (1, p.ic), &dm, (nt, 1), T::zero(), &mut dv);
                input_grad_scatter(p, &dv, pass, dx, &mut sc);
            }
        }
        let mut db = vec![T::zero(); p.oc];
        for s in 0..samples {
            for (o, b) in db.iter_mut().enumerate() {
                let ch = &dy[(s * p.oc + o) * plane..(s * p.oc + o + 1) * plane];
                *b = ch.iter().fold(*b, |a, &g| a + g);
            }
        }
        (du, db)
    };

    let xs = input.data().par_chunks(spt * in_len);
    let dys = upstream.data().par_chunks(spt * out_len);
    let partials: Vec<(Vec<T>, Vec<T>)> = match grad_input.as_mut() {
        Some(gi) => xs
            .zip(dys)
            .zip(gi.data_mut().par_chunks_mut(spt * in_len))
            .map(|((x, dy), dx)| task(x, dy, Some(dx)))
            .collect(),
        None => xs.zip(dys).map(|(x, dy)| task(x, dy, None)).collect(),
    };

    let mut du = vec![T::zero(); XI * p.oc * p.ic];
    let mut db = vec![T::zero(); p.oc];
    for (pu, pb) in &partials {
        for (a, &b) in du.iter_mut().zip(pu) {
            *a = *a + b;
        }
        for (a, &b) in db.iter_mut().zip(pb) {
            *a = *a + b;
        }
    }
    Grads {
        input: grad_input,
        weight: filter_grad_from_transform(p, &du),
        bias: db,
    }
}
