//! Convolution kernels for one forward-direction geometry.
//!
//! Every routine accumulates into its output buffer. Dense convolutions
//! (`groups == 1`) lower to GEMM, through im2col for anything other than a
//! pointwise kernel; grouped and depthwise convolutions use direct row loops
//! whose innermost axis is contiguous in memory. Each output element is
//! produced by a fixed summation order, so results do not depend on the
//! number of worker threads.

use rayon::prelude::*;

use super::real::{gemm, MatRef};
use super::Real;

/// Upper bound on im2col buffer elements per chunk.
const COL_BUDGET: usize = 1 << 22;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Geom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub groups: usize,
    pub in_sz: [usize; 3],
    pub out_sz: [usize; 3],
    pub k: [usize; 3],
    pub s: [usize; 3],
    pub p: [usize; 3],
    pub d: [usize; 3],
}

impl Geom {
    pub fn in_vox(&self) -> usize {
        self.in_sz.iter().product()
    }

    pub fn out_vox(&self) -> usize {
        self.out_sz.iter().product()
    }

    pub fn taps(&self) -> usize {
        self.k.iter().product()
    }

    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    fn is_pointwise(&self) -> bool {
        self.k == [1, 1, 1] && self.s == [1, 1, 1] && self.p == [0, 0, 0] && self.in_sz == self.out_sz
    }

    /// Kernel-tap offsets `(kd, kh, kw)` in row-major tap order.
    fn tap_iter(&self) -> impl Iterator<Item = (usize, [usize; 3])> + '_ {
        let [k0, k1, k2] = self.k;
        (0..k0 * k1 * k2).map(move |t| (t, [t / (k1 * k2), (t / k2) % k1, t % k2]))
    }

    #[inline]
    fn offset(&self, axis: usize, tap: usize) -> isize {
        (tap * self.d[axis]) as isize - self.p[axis] as isize
    }
}

/// Output indices `o` in `[lo, hi)` with `o * s + off` inside `[0, in_len)`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, s: usize, off: isize) -> (usize, usize) {
    let lo = if off >= 0 { 0 } else { ((-off) as usize).div_ceil(s) };
    let max_in = in_len as isize - 1 - off;
    if max_in < 0 {
        return (0, 0);
    }
    let hi = out_len.min(max_in as usize / s + 1);
    (lo.min(hi), hi)
}

/// Iterates the (output row, input row) pairs touched by one kernel tap
/// inside output depth slices `[od0, od1)`; yields the row starts and the
/// valid output column range.
#[inline]
fn for_each_row(g: &Geom, tap: [usize; 3], od0: usize, od1: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
    let [id_, ih_, iw_] = g.in_sz;
    let [_, oh_, ow_] = g.out_sz;
    let off = [g.offset(0, tap[0]), g.offset(1, tap[1]), g.offset(2, tap[2])];
    let (d_lo, d_hi) = valid_range(od1, id_, g.s[0], off[0]);
    let (h_lo, h_hi) = valid_range(oh_, ih_, g.s[1], off[1]);
    let (w_lo, w_hi) = valid_range(ow_, iw_, g.s[2], off[2]);
    if w_lo >= w_hi {
        return;
    }
    for od in d_lo.max(od0)..d_hi {
        let id = (od * g.s[0]) as isize + off[0];
        for oh in h_lo..h_hi {
            let ih = (oh * g.s[1]) as isize + off[1];
            let out_row = (od * oh_ + oh) * ow_;
            let in_row = (id as usize * ih_ + ih as usize) * iw_;
            let in_col0 = ((w_lo * g.s[2]) as isize + off[2]) as usize;
            f(out_row + w_lo, in_row + in_col0, w_lo, w_hi);
        }
    }
}

// ---------------------------------------------------------------------------
// Direct (row-loop) kernels for a single input/output channel pair.

fn direct_fwd_pair<F: Real>(g: &Geom, x: &[F], w: &[F], y: &mut [F]) {
    let s = g.s[2];
    for (t, tap) in g.tap_iter() {
        let wv = w[t];
        for_each_row(g, tap, 0, g.out_sz[0], |yo, xo, lo, hi| {
            let n = hi - lo;
            let yr = &mut y[yo..yo + n];
            if s == 1 {
                for (yv, &xv) in yr.iter_mut().zip(&x[xo..xo + n]) {
                    *yv += wv * xv;
                }
            } else {
                for (j, yv) in yr.iter_mut().enumerate() {
                    *yv += wv * x[xo + j * s];
                }
            }
        });
    }
}

fn direct_bwd_data_pair<F: Real>(g: &Geom, gy: &[F], w: &[F], gx: &mut [F]) {
    let s = g.s[2];
    for (t, tap) in g.tap_iter() {
        let wv = w[t];
        for_each_row(g, tap, 0, g.out_sz[0], |yo, xo, lo, hi| {
            let n = hi - lo;
            let gyr = &gy[yo..yo + n];
            if s == 1 {
                for (gxv, &gv) in gx[xo..xo + n].iter_mut().zip(gyr) {
                    *gxv += wv * gv;
                }
            } else {
                for (j, &gv) in gyr.iter().enumerate() {
                    gx[xo + j * s] += wv * gv;
                }
            }
        });
    }
}

fn direct_bwd_weight_pair<F: Real>(g: &Geom, x: &[F], gy: &[F], gw: &mut [F]) {
    let s = g.s[2];
    for (t, tap) in g.tap_iter() {
        let mut acc = F::zero();
        for_each_row(g, tap, 0, g.out_sz[0], |yo, xo, lo, hi| {
            let n = hi - lo;
            let gyr = &gy[yo..yo + n];
            if s == 1 {
                acc += gyr.iter().zip(&x[xo..xo + n]).map(|(&a, &b)| a * b).sum::<F>();
            } else {
                acc += gyr.iter().enumerate().map(|(j, &a)| a * x[xo + j * s]).sum::<F>();
            }
        });
        gw[t] += acc;
    }
}

// ---------------------------------------------------------------------------
// im2col lowering for dense convolutions.

fn chunk_depth(g: &Geom) -> usize {
    let per_slice = g.cin * g.taps() * g.out_sz[1] * g.out_sz[2];
    (COL_BUDGET / per_slice.max(1)).clamp(1, g.out_sz[0])
}

/// Fills `col[(ci * taps + t) * cols + j]` for output voxels of depth
/// slices `[od0, od1)`.
fn im2col<F: Real>(g: &Geom, x: &[F], od0: usize, od1: usize, col: &mut [F]) {
    let plane = g.out_sz[1] * g.out_sz[2];
    let cols = (od1 - od0) * plane;
    let taps = g.taps();
    let ivox = g.in_vox();
    let s = g.s[2];
    col[..g.cin * taps * cols].fill(F::zero());
    for ci in 0..g.cin {
        let xc = &x[ci * ivox..(ci + 1) * ivox];
        for (t, tap) in g.tap_iter() {
            let row = &mut col[(ci * taps + t) * cols..(ci * taps + t + 1) * cols];
            let base = od0 * plane;
            for_each_row(g, tap, od0, od1, |yo, xo, lo, hi| {
                let n = hi - lo;
                let dst = &mut row[yo - base..yo - base + n];
                if s == 1 {
                    dst.copy_from_slice(&xc[xo..xo + n]);
                } else {
                    for (j, v) in dst.iter_mut().enumerate() {
                        *v = xc[xo + j * s];
                    }
                }
            });
        }
    }
}

fn col2im<F: Real>(g: &Geom, col: &[F], od0: usize, od1: usize, gx: &mut [F]) {
    let plane = g.out_sz[1] * g.out_sz[2];
    let cols = (od1 - od0) * plane;
    let taps = g.taps();
    let ivox = g.in_vox();
    let s = g.s[2];
    for ci in 0..g.cin {
        let gxc = &mut gx[ci * ivox..(ci + 1) * ivox];
        for (t, tap) in g.tap_iter() {
            let row = &col[(ci * taps + t) * cols..(ci * taps + t + 1) * cols];
            let base = od0 * plane;
            for_each_row(g, tap, od0, od1, |yo, xo, lo, hi| {
                let n = hi - lo;
                let src = &row[yo - base..yo - base + n];
                if s == 1 {
                    for (d, &v) in gxc[xo..xo + n].iter_mut().zip(src) {
                        *d += v;
                    }
                } else {
                    for (j, &v) in src.iter().enumerate() {
                        gxc[xo + j * s] += v;
                    }
                }
            });
        }
    }
}

fn depth_chunks(g: &Geom) -> impl Iterator<Item = (usize, usize)> {
    let step = chunk_depth(g);
    let od = g.out_sz[0];
    (0..od).step_by(step).map(move |a| (a, (a + step).min(od)))
}

// ---------------------------------------------------------------------------
// Per-item dense routines.

fn dense_fwd_item<F: Real>(g: &Geom, x: &[F], w: &[F], y: &mut [F]) {
    let k = g.cin * g.taps();
    let ov = g.out_vox();
    if g.is_pointwise() {
        gemm(MatRef::new(w, g.cout, g.cin), MatRef::new(x, g.cin, ov), F::one(), y, ov);
        return;
    }
    let plane = g.out_sz[1] * g.out_sz[2];
    let mut col = vec![F::zero(); k * chunk_depth(g) * plane];
    for (od0, od1) in depth_chunks(g) {
        let cols = (od1 - od0) * plane;
        im2col(g, x, od0, od1, &mut col);
        gemm(MatRef::new(w, g.cout, k), MatRef::new(&col[..k * cols], k, cols), F::one(), &mut y[od0 * plane..], ov);
    }
}

fn dense_bwd_data_item<F: Real>(g: &Geom, gy: &[F], w: &[F], gx: &mut [F]) {
    let k = g.cin * g.taps();
    let ov = g.out_vox();
    if g.is_pointwise() {
        gemm(MatRef::new(w, g.cout, g.cin).t(), MatRef::new(gy, g.cout, ov), F::one(), gx, ov);
        return;
    }
    let plane = g.out_sz[1] * g.out_sz[2];
    let mut col = vec![F::zero(); k * chunk_depth(g) * plane];
    for (od0, od1) in depth_chunks(g) {
        let cols = (od1 - od0) * plane;
        let gy_chunk = MatRef::strided(&gy[od0 * plane..], g.cout, cols, ov);
        gemm(MatRef::new(w, g.cout, k).t(), gy_chunk, F::zero(), &mut col[..k * cols], cols);
        col2im(g, &col, od0, od1, gx);
    }
}

fn dense_bwd_weight_item<F: Real>(g: &Geom, x: &[F], gy: &[F], gw: &mut [F]) {
    let k = g.cin * g.taps();
    let ov = g.out_vox();
    if g.is_pointwise() {
        gemm(MatRef::new(gy, g.cout, ov), MatRef::new(x, g.cin, ov).t(), F::one(), gw, g.cin);
        return;
    }
    let plane = g.out_sz[1] * g.out_sz[2];
    let mut col = vec![F::zero(); k * chunk_depth(g) * plane];
    for (od0, od1) in depth_chunks(g) {
        let cols = (od1 - od0) * plane;
        im2col(g, x, od0, od1, &mut col);
        let gy_chunk = MatRef::strided(&gy[od0 * plane..], g.cout, cols, ov);
        gemm(gy_chunk, MatRef::new(&col[..k * cols], k, cols).t(), F::one(), gw, k);
    }
}

// ---------------------------------------------------------------------------
// Batched entry points.

/// `y[N, cout, out] += conv(x[N, cin, in], w[cout, cin/groups, k])`.
pub(crate) fn forward<F: Real>(g: &Geom, x: &[F], w: &[F], y: &mut [F]) {
    let (iv, ov) = (g.in_vox(), g.out_vox());
    if g.groups == 1 {
        y.par_chunks_mut(g.cout * ov).enumerate().for_each(|(n, yn)| {
            dense_fwd_item(g, &x[n * g.cin * iv..(n + 1) * g.cin * iv], w, yn);
        });
        return;
    }
    let (cin_g, cout_g, taps) = (g.cin_g(), g.cout_g(), g.taps());
    y.par_chunks_mut(ov).enumerate().for_each(|(idx, yc)| {
        let (n, co) = (idx / g.cout, idx % g.cout);
        let grp = co / cout_g;
        for cil in 0..cin_g {
            let ci = grp * cin_g + cil;
            let xo = (n * g.cin + ci) * iv;
            let wo = (co * cin_g + cil) * taps;
            direct_fwd_pair(g, &x[xo..xo + iv], &w[wo..wo + taps], yc);
        }
    });
}

/// `gx[N, cin, in] += convᵀ(gy[N, cout, out])`.
pub(crate) fn backward_data<F: Real>(g: &Geom, gy: &[F], w: &[F], gx: &mut [F]) {
    let (iv, ov) = (g.in_vox(), g.out_vox());
    if g.groups == 1 {
        gx.par_chunks_mut(g.cin * iv).enumerate().for_each(|(n, gxn)| {
            dense_bwd_data_item(g, &gy[n * g.cout * ov..(n + 1) * g.cout * ov], w, gxn);
        });
        return;
    }
    let (cin_g, cout_g, taps) = (g.cin_g(), g.cout_g(), g.taps());
    gx.par_chunks_mut(iv).enumerate().for_each(|(idx, gxc)| {
        let (n, ci) = (idx / g.cin, idx % g.cin);
        let (grp, cil) = (ci / cin_g, ci % cin_g);
        for col in 0..cout_g {
            let co = grp * cout_g + col;
            let yo = (n * g.cout + co) * ov;
            let wo = (co * cin_g + cil) * taps;
            direct_bwd_data_pair(g, &gy[yo..yo + ov], &w[wo..wo + taps], gxc);
        }
    });
}

/// `gw[cout, cin/groups, k] += Σ_n x ⋆ gy`.
pub(crate) fn backward_weight<F: Real>(g: &Geom, x: &[F], gy: &[F], gw: &mut [F]) {
    let (iv, ov) = (g.in_vox(), g.out_vox());
    if g.groups == 1 {
        let partials: Vec<Vec<F>> = (0..g.batch)
            .into_par_iter()
            .map(|n| {
                let mut part = vec![F::zero(); gw.len()];
                dense_bwd_weight_item(
                    g,
                    &x[n * g.cin * iv..(n + 1) * g.cin * iv],
                    &gy[n * g.cout * ov..(n + 1) * g.cout * ov],
                    &mut part,
                );
                part
            })
            .collect();
        for part in partials {
            gw.iter_mut().zip(part).for_each(|(a, b)| *a += b);
        }
        return;
    }
    let (cin_g, cout_g, taps) = (g.cin_g(), g.cout_g(), g.taps());
    gw.par_chunks_mut(cin_g * taps).enumerate().for_each(|(co, gwc)| {
        let grp = co / cout_g;
        for n in 0..g.batch {
            let yo = (n * g.cout + co) * ov;
            for cil in 0..cin_g {
                let ci = grp * cin_g + cil;
                let xo = (n * g.cin + ci) * iv;
                direct_bwd_weight_pair(g, &x[xo..xo + iv], &gy[yo..yo + ov], &mut gwc[cil * taps..(cil + 1) * taps]);
            }
        }
    });
}

/// Forces the direct row-loop path for any group count; used to
/// cross-check the GEMM lowering.
pub(crate) fn forward_direct<F: Real>(g: &Geom, x: &[F], w: &[F], y: &mut [F]) {
    let (iv, ov) = (g.in_vox(), g.out_vox());
    let (cin_g, cout_g, taps) = (g.cin_g(), g.cout_g(), g.taps());
    y.par_chunks_mut(ov).enumerate().for_each(|(idx, yc)| {
        let (n, co) = (idx / g.cout, idx % g.cout);
        let grp = co / cout_g;
        for cil in 0..cin_g {
            let ci = grp * cin_g + cil;
            let xo = (n * g.cin + ci) * iv;
            let wo = (co * cin_g + cil) * taps;
            direct_fwd_pair(g, &x[xo..xo + iv], &w[wo..wo + taps], yc);
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_enumeration() {
        for out_len in 1..7 {
            for in_len in 1..9 {
                for s in 1..4 {
                    for off in -6isize..6 {
                        let (lo, hi) = valid_range(out_len, in_len, s, off);
                        let expect: Vec<usize> = (0..out_len)
                            .filter(|&o| {
                                let i = (o * s) as isize + off;
                                i >= 0 && i < in_len as isize
                            })
                            .collect();
                        let got: Vec<usize> = (lo..hi).collect();
                        assert_eq!(got, expect, "out {out_len} in {in_len} s {s} off {off}");
                    }
                }
            }
        }
    }
}
