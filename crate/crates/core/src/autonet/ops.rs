//! Per-layer kernels. Each one works item by item over the batch so items
//! can run in parallel; cross-item reductions (weight gradients,
//! batch-norm statistics) are always summed in item order.

use super::real::{gemm_view, MatRef, Real};
use super::tensor::Tensor4;
use crate::par;

/// Sliding-window geometry between a large grid (`c x h x w`) and the
/// `oh x ow` grid of window positions with kernel `k`, stride `s`, padding `p`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub s: usize,
    pub p: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn is_identity(&self) -> bool {
        self.k == 1 && self.s == 1 && self.p == 0
    }

    /// Range of window positions `o` whose input index `o*s + off - p` is in `[0, n)`.
    fn valid_range(&self, off: usize, n: usize, on: usize) -> (usize, usize) {
        let mut lo = 0;
        while lo < on && (lo * self.s + off) < self.p {
            lo += 1;
        }
        let mut hi = lo;
        while hi < on && (hi * self.s + off) < self.p + n {
            hi += 1;
        }
        (lo, hi)
    }
}

/// Columns for window rows `oy0..oy1`: `cols` is `rows() x (oy1 - oy0) * ow`.
pub(crate) fn im2col_rows<T: Real>(x: &[T], g: &ConvGeom, oy0: usize, oy1: usize, cols: &mut [T]) {
    let len = (oy1 - oy0) * g.ow;
    for ci in 0..g.c {
        let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            let (ylo, yhi) = g.valid_range(ky, g.h, g.oh);
            let (ylo, yhi) = (ylo.max(oy0), yhi.min(oy1));
            for kx in 0..g.k {
                let (xlo, xhi) = g.valid_range(kx, g.w, g.ow);
                let row = ((ci * g.k + ky) * g.k + kx) * len;
                let dst = &mut cols[row..row + len];
                dst.fill(T::zero());
                for oy in ylo..yhi {
                    let iy = oy * g.s + ky - g.p;
                    let srow = &src[iy * g.w..(iy + 1) * g.w];
                    let drow = &mut dst[(oy - oy0) * g.ow..(oy - oy0 + 1) * g.ow];
                    if g.s == 1 {
                        let ix0 = xlo + kx - g.p;
                        drow[xlo..xhi].copy_from_slice(&srow[ix0..ix0 + (xhi - xlo)]);
                    } else {
                        for ox in xlo..xhi {
                            drow[ox] = srow[ox * g.s + kx - g.p];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col_rows`]: scatters columns back, accumulating into `x`.
pub(crate) fn col2im_rows<T: Real>(cols: &[T], g: &ConvGeom, oy0: usize, oy1: usize, x: &mut [T]) {
    let len = (oy1 - oy0) * g.ow;
    for ci in 0..g.c {
        let dst = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            let (ylo, yhi) = g.valid_range(ky, g.h, g.oh);
            let (ylo, yhi) = (ylo.max(oy0), yhi.min(oy1));
            for kx in 0..g.k {
                let (xlo, xhi) = g.valid_range(kx, g.w, g.ow);
                let row = ((ci * g.k + ky) * g.k + kx) * len;
                let src = &cols[row..row + len];
                for oy in ylo..yhi {
                    let iy = oy * g.s + ky - g.p;
                    let drow = &mut dst[iy * g.w..(iy + 1) * g.w];
                    let srow = &src[(oy - oy0) * g.ow..(oy - oy0 + 1) * g.ow];
                    if g.s == 1 {
                        let ix0 = xlo + kx - g.p;
                        for (d, &v) in drow[ix0..ix0 + (xhi - xlo)].iter_mut().zip(&srow[xlo..xhi]) {
                            *d += v;
                        }
                    } else {
                        for ox in xlo..xhi {
                            drow[ox * g.s + kx - g.p] += srow[ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    im2col_rows(x, g, 0, g.oh, cols)
}

#[cfg(test)]
fn col2im<T: Real>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    col2im_rows(cols, g, 0, g.oh, x)
}

/// Target number of window positions per GEMM panel; keeps the column
/// buffer cache-resident.
const PANEL: usize = 2048;

/// Splits `0..g.oh` into row bands of roughly [`PANEL`] window positions.
fn bands(g: &ConvGeom) -> impl Iterator<Item = (usize, usize)> {
    let step = (PANEL / g.ow.max(1)).max(1);
    let oh = g.oh;
    (0..oh).step_by(step).map(move |a| (a, (a + step).min(oh)))
}

fn conv_geom(c: usize, h: usize, w: usize, k: usize, s: usize) -> ConvGeom {
    let p = (k - 1) / 2;
    ConvGeom {
        c,
        h,
        w,
        k,
        s,
        p,
        oh: (h + 2 * p - k) / s + 1,
        ow: (w + 2 * p - k) / s + 1,
    }
}

fn add_bias<T: Real>(y: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in y.chunks_mut(plane).zip(bias) {
        if b != T::zero() {
            chunk.iter_mut().for_each(|v| *v += b);
        }
    }
}

fn bias_grad<T: Real>(gy: &[T], plane: usize, out: &mut [T]) {
    for (o, chunk) in out.iter_mut().zip(gy.chunks(plane)) {
        *o = chunk.iter().copied().sum();
    }
}

/// Sums per-item gradient blocks in item order into `dst`.
fn reduce_items<T: Real>(blocks: &[T], len: usize, dst: &mut [T]) {
    for block in blocks.chunks(len) {
        for (d, &v) in dst.iter_mut().zip(block) {
            *d += v;
        }
    }
}

pub(crate) fn conv_forward<T: Real>(
    x: &Tensor4<T>,
    weight: &[T],
    bias: &[T],
    k: usize,
    stride: usize,
    out_ch: usize,
) -> Tensor4<T> {
    let g = conv_geom(x.c, x.h, x.w, k, stride);
    let mut y = Tensor4::zeros(x.n, out_ch, g.oh, g.ow);
    let plane = g.cols();
    let wmat = MatRef::new(weight, out_ch, g.rows());
    par::for_each_chunk_mut(&mut y.data, out_ch * plane, |b, yb| {
        let xb = x.item(b);
        let mut cols = Vec::new();
        for (a, e) in bands(&g) {
            let (off, len) = (a * g.ow, (e - a) * g.ow);
            let src = if g.is_identity() {
                MatRef::strided(&xb[off..], g.rows(), len, plane)
            } else {
                cols.resize(g.rows() * len, T::zero());
                im2col_rows(xb, &g, a, e, &mut cols);
                MatRef::new(&cols, g.rows(), len)
            };
            gemm_view(wmat, src, &mut yb[off..], plane, false);
        }
        add_bias(yb, bias, plane);
    });
    y
}

/// Returns `(dx, dweight, dbias)`.
pub(crate) fn conv_backward<T: Real>(
    x: &Tensor4<T>,
    weight: &[T],
    k: usize,
    stride: usize,
    gy: &Tensor4<T>,
) -> (Tensor4<T>, Vec<T>, Vec<T>) {
    let g = conv_geom(x.c, x.h, x.w, k, stride);
    let out_ch = gy.c;
    let plane = g.cols();
    let in_plane = g.h * g.w;
    let wlen = out_ch * g.rows();
    let block = wlen + out_ch;
    let wt = MatRef::new(weight, out_ch, g.rows()).t();
    let mut dx = Tensor4::zeros(x.n, x.c, x.h, x.w);
    let mut partial = vec![T::zero(); x.n * block];
    par::for_each_chunk_pair_mut(&mut dx.data, x.item_len(), &mut partial, block, |b, dxb, pb| {
        let (gyb, xb) = (gy.item(b), x.item(b));
        let (dw, db) = pb.split_at_mut(wlen);
        bias_grad(gyb, plane, db);
        let mut cols = Vec::new();
        for (a, e) in bands(&g) {
            let (off, len) = (a * g.ow, (e - a) * g.ow);
            let gmat = MatRef::strided(&gyb[off..], out_ch, len, plane);
            if g.is_identity() {
                let xmat = MatRef::strided(&xb[off..], g.rows(), len, in_plane);
                gemm_view(gmat, xmat.t(), dw, g.rows(), true);
                gemm_view(wt, gmat, &mut dxb[off..], in_plane, false);
            } else {
                cols.resize(g.rows() * len, T::zero());
                im2col_rows(xb, &g, a, e, &mut cols);
                gemm_view(gmat, MatRef::new(&cols, g.rows(), len).t(), dw, g.rows(), true);
                gemm_view(wt, gmat, &mut cols, len, false);
                col2im_rows(&cols, &g, a, e, dxb);
            }
        }
    });
    let mut dwb = vec![T::zero(); block];
    reduce_items(&partial, block, &mut dwb);
    let db = dwb.split_off(wlen);
    (dx, dwb, db)
}

fn tconv_geom(c_out: usize, h_in: usize, w_in: usize, k: usize, s: usize) -> ConvGeom {
    let p = super::spec::tconv_pad(k, s);
    ConvGeom {
        c: c_out,
        h: (h_in - 1) * s + k - 2 * p,
        w: (w_in - 1) * s + k - 2 * p,
        k,
        s,
        p,
        oh: h_in,
        ow: w_in,
    }
}

/// A transposed convolution is the adjoint of a strided convolution: its
/// forward pass scatters `W^T x` over the larger grid with [`col2im_rows`].
pub(crate) fn tconv_forward<T: Real>(
    x: &Tensor4<T>,
    weight: &[T],
    bias: &[T],
    k: usize,
    stride: usize,
    out_ch: usize,
) -> Tensor4<T> {
    let g = tconv_geom(out_ch, x.h, x.w, k, stride);
    let in_plane = g.cols();
    let mut y = Tensor4::zeros(x.n, out_ch, g.h, g.w);
    let wt = MatRef::new(weight, x.c, g.rows()).t();
    par::for_each_chunk_mut(&mut y.data, out_ch * g.h * g.w, |b, yb| {
        let xb = x.item(b);
        let mut cols = Vec::new();
        for (a, e) in bands(&g) {
            let (off, len) = (a * g.ow, (e - a) * g.ow);
            cols.resize(g.rows() * len, T::zero());
            gemm_view(wt, MatRef::strided(&xb[off..], x.c, len, in_plane), &mut cols, len, false);
            col2im_rows(&cols, &g, a, e, yb);
        }
        add_bias(yb, bias, g.h * g.w);
    });
    y
}

pub(crate) fn tconv_backward<T: Real>(
    x: &Tensor4<T>,
    weight: &[T],
    k: usize,
    stride: usize,
    gy: &Tensor4<T>,
) -> (Tensor4<T>, Vec<T>, Vec<T>) {
    let out_ch = gy.c;
    let g = tconv_geom(out_ch, x.h, x.w, k, stride);
    let in_plane = g.cols();
    let wlen = x.c * g.rows();
    let block = wlen + out_ch;
    let wmat = MatRef::new(weight, x.c, g.rows());
    let mut dx = Tensor4::zeros(x.n, x.c, x.h, x.w);
    let mut partial = vec![T::zero(); x.n * block];
    par::for_each_chunk_pair_mut(&mut dx.data, x.item_len(), &mut partial, block, |b, dxb, pb| {
        let (gyb, xb) = (gy.item(b), x.item(b));
        let (dw, db) = pb.split_at_mut(wlen);
        bias_grad(gyb, g.h * g.w, db);
        let mut cols = Vec::new();
        for (a, e) in bands(&g) {
            let (off, len) = (a * g.ow, (e - a) * g.ow);
            cols.resize(g.rows() * len, T::zero());
            im2col_rows(gyb, &g, a, e, &mut cols);
            let cmat = MatRef::new(&cols, g.rows(), len);
            gemm_view(wmat, cmat, &mut dxb[off..], in_plane, false);
            let xmat = MatRef::strided(&xb[off..], x.c, len, in_plane);
            gemm_view(xmat, cmat.t(), dw, g.rows(), true);
        }
    });
    let mut dwb = vec![T::zero(); block];
    reduce_items(&partial, block, &mut dwb);
    let db = dwb.split_off(wlen);
    (dx, dwb, db)
}

/// Per-channel batch statistics recorded by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub const BN_EPS: f64 = 1e-5;

pub(crate) fn bn_stats<T: Real>(x: &Tensor4<T>) -> BnBatchStats {
    let plane = x.plane();
    let count = (x.n * plane) as f64;
    let per: Vec<(f64, f64)> = par::map_indexed(x.c, |c| {
        let mut s = 0.0;
        for b in 0..x.n {
            let off = (b * x.c + c) * plane;
            s += x.data[off..off + plane].iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let mean = s / count;
        let mut q = 0.0;
        for b in 0..x.n {
            let off = (b * x.c + c) * plane;
            q += x.data[off..off + plane]
                .iter()
                .map(|v| {
                    let d = v.as_f64() - mean;
                    d * d
                })
                .sum::<f64>();
        }
        (mean, q / count)
    });
    let mean: Vec<f64> = per.iter().map(|p| p.0).collect();
    let var: Vec<f64> = per.iter().map(|p| p.1).collect();
    let inv_std = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    BnBatchStats { mean, var, inv_std }
}

/// `y = gamma * (x - mean) * inv_std + beta` per channel.
pub(crate) fn bn_apply<T: Real>(
    x: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    mean: &[f64],
    inv_std: &[f64],
) -> Tensor4<T> {
    let mut y = Tensor4::zeros(x.n, x.c, x.h, x.w);
    let plane = x.plane();
    par::for_each_chunk_mut(&mut y.data, plane, |bc, yp| {
        let c = bc % x.c;
        let scale = gamma[c].as_f64() * inv_std[c];
        let (scale, shift) = (
            T::from_f64(scale),
            T::from_f64(beta[c].as_f64() - mean[c] * scale),
        );
        let xp = &x.data[bc * plane..(bc + 1) * plane];
        for (o, &v) in yp.iter_mut().zip(xp) {
            *o = v * scale + shift;
        }
    });
    y
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn bn_backward<T: Real>(
    x: &Tensor4<T>,
    gamma: &[T],
    stats: &BnBatchStats,
    gy: &Tensor4<T>,
) -> (Tensor4<T>, Vec<T>, Vec<T>) {
    let plane = x.plane();
    let count = (x.n * plane) as f64;
    let sums: Vec<(f64, f64)> = par::map_indexed(x.c, |c| {
        let (mean, inv) = (stats.mean[c], stats.inv_std[c]);
        let (mut sg, mut sgx) = (0.0, 0.0);
        for b in 0..x.n {
            let off = (b * x.c + c) * plane;
            for (g, v) in gy.data[off..off + plane].iter().zip(&x.data[off..off + plane]) {
                let g = g.as_f64();
                sg += g;
                sgx += g * (v.as_f64() - mean) * inv;
            }
        }
        (sg, sgx)
    });
    let mut dx = Tensor4::zeros(x.n, x.c, x.h, x.w);
    par::for_each_chunk_mut(&mut dx.data, plane, |bc, dp| {
        let c = bc % x.c;
        let (mean, inv) = (stats.mean[c], stats.inv_std[c]);
        let (sg, sgx) = sums[c];
        let k = gamma[c].as_f64() * inv / count;
        let off = bc * plane;
        for ((d, g), v) in dp
            .iter_mut()
            .zip(&gy.data[off..off + plane])
            .zip(&x.data[off..off + plane])
        {
            let xhat = (v.as_f64() - mean) * inv;
            *d = T::from_f64(k * (count * g.as_f64() - sg - xhat * sgx));
        }
    });
    let dgamma = sums.iter().map(|s| T::from_f64(s.1)).collect();
    let dbeta = sums.iter().map(|s| T::from_f64(s.0)).collect();
    (dx, dgamma, dbeta)
}

pub(crate) fn relu_forward<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub(crate) fn relu_backward<T: Real>(y: &Tensor4<T>, gy: &Tensor4<T>) -> Tensor4<T> {
    let mut dx = gy.clone();
    for (d, &v) in dx.data.iter_mut().zip(&y.data) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

pub(crate) fn sigmoid_forward<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

pub(crate) fn sigmoid_backward<T: Real>(y: &Tensor4<T>, gy: &Tensor4<T>) -> Tensor4<T> {
    let mut dx = gy.clone();
    for (d, &v) in dx.data.iter_mut().zip(&y.data) {
        *d *= v * (T::one() - v);
    }
    dx
}

/// 2x2 max pooling; the second value holds the winning offset (0..4, row
/// major inside the window, first maximum wins) for every output.
pub(crate) fn maxpool_forward<T: Real>(x: &Tensor4<T>) -> (Tensor4<T>, Vec<u8>) {
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut y = Tensor4::zeros(x.n, x.c, oh, ow);
    let mut arg = vec![0u8; y.data.len()];
    par::for_each_chunk_pair_mut(&mut y.data, oh * ow, &mut arg, oh * ow, |bc, yp, ap| {
        let xp = &x.data[bc * x.h * x.w..(bc + 1) * x.h * x.w];
        for oy in 0..oh {
            for ox in 0..ow {
                let base = 2 * oy * x.w + 2 * ox;
                let cand = [xp[base], xp[base + 1], xp[base + x.w], xp[base + x.w + 1]];
                let mut best = 0;
                for i in 1..4 {
                    if cand[i] > cand[best] {
                        best = i;
                    }
                }
                yp[oy * ow + ox] = cand[best];
                ap[oy * ow + ox] = best as u8;
            }
        }
    });
    (y, arg)
}

pub(crate) fn maxpool_backward<T: Real>(
    x_dims: (usize, usize, usize, usize),
    arg: &[u8],
    gy: &Tensor4<T>,
) -> Tensor4<T> {
    let (n, c, h, w) = x_dims;
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = Tensor4::zeros(n, c, h, w);
    par::for_each_chunk_mut(&mut dx.data, h * w, |bc, dp| {
        let off = bc * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let a = arg[off + oy * ow + ox] as usize;
                let idx = (2 * oy + a / 2) * w + 2 * ox + a % 2;
                dp[idx] = gy.data[off + oy * ow + ox];
            }
        }
    });
    dx
}

pub(crate) fn add<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Tensor4<T> {
    let mut y = a.clone();
    for (o, &v) in y.data.iter_mut().zip(&b.data) {
        *o += v;
    }
    y
}

pub(crate) fn add_into<T: Real>(dst: &mut Tensor4<T>, src: &Tensor4<T>) {
    for (o, &v) in dst.data.iter_mut().zip(&src.data) {
        *o += v;
    }
}

pub(crate) fn concat<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Tensor4<T> {
    let (la, lb) = (a.item_len(), b.item_len());
    let mut y = Tensor4::zeros(a.n, a.c + b.c, a.h, a.w);
    for i in 0..a.n {
        let dst = &mut y.data[i * (la + lb)..(i + 1) * (la + lb)];
        dst[..la].copy_from_slice(a.item(i));
        dst[la..].copy_from_slice(b.item(i));
    }
    y
}

pub(crate) fn split<T: Real>(g: &Tensor4<T>, ca: usize) -> (Tensor4<T>, Tensor4<T>) {
    let cb = g.c - ca;
    let mut a = Tensor4::zeros(g.n, ca, g.h, g.w);
    let mut b = Tensor4::zeros(g.n, cb, g.h, g.w);
    let (la, lb) = (a.item_len(), b.item_len());
    for i in 0..g.n {
        let src = g.item(i);
        a.data[i * la..(i + 1) * la].copy_from_slice(&src[..la]);
        b.data[i * lb..(i + 1) * lb].copy_from_slice(&src[la..]);
    }
    (a, b)
}
