//! Raw slice kernels behind the tape operations. Summation order is fixed so
//! repeated evaluations are bitwise identical.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// out[n,m] = a[n,k] · b[k,m]
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// out[k,m] = a[n,k]ᵀ · b[n,m]
pub(crate) fn matmul_tn<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * m];
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let row = &mut out[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// out[n,k] = a[n,m] · b[k,m]ᵀ
pub(crate) fn matmul_nt<T: Scalar>(a: &[T], b: &[T], n: usize, m: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * k];
    for i in 0..n {
        let arow = &a[i * m..(i + 1) * m];
        for j in 0..k {
            let brow = &b[j * m..(j + 1) * m];
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * k + j] = acc;
        }
    }
    out
}

/// Right-aligned numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(Error::Dimension {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside `out` (zero on broadcast axes).
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut s = 1;
    for i in (0..shape.len()).rev() {
        let oi = i + rank - shape.len();
        strides[oi] = if shape[i] == 1 && out[oi] != 1 { 0 } else { s };
        s *= shape[i];
    }
    strides
}

/// Calls `f(out_index, a_index, b_index)` for every element of `out`.
pub(crate) fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total: usize = out.iter().product();
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let mut counter = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..total {
        f(o, ia, ib);
        let mut ax = rank - 1;
        loop {
            counter[ax] += 1;
            ia += sa[ax];
            ib += sb[ax];
            if counter[ax] < out[ax] {
                break;
            }
            ia -= sa[ax] * out[ax];
            ib -= sb[ax] * out[ax];
            counter[ax] = 0;
            if ax == 0 {
                break;
            }
            ax -= 1;
        }
    }
}

/// Sums `g` (shaped `out`) down to `target` shape.
pub(crate) fn reduce_to<T: Scalar>(g: &[T], out: &[usize], target: &[usize]) -> Vec<T> {
    let n: usize = target.iter().product();
    if out == target {
        return g.to_vec();
    }
    let st = broadcast_strides(target, out);
    let zeros = vec![0; out.len()];
    let mut acc = vec![T::zero(); n];
    for_each_broadcast(out, &st, &zeros, |o, it, _| acc[it] += g[o]);
    acc
}

/// Decomposes `shape` around `axis` into (outer, len, inner).
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax<T: Scalar>(x: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut mx = T::neg_infinity();
            for j in 0..len {
                mx = mx.max(x[base + j * inner]);
            }
            let mut z = T::zero();
            for j in 0..len {
                let e = (x[base + j * inner] - mx).exp();
                y[base + j * inner] = e;
                z += e;
            }
            for j in 0..len {
                y[base + j * inner] /= z;
            }
        }
    }
    y
}

pub(crate) fn softmax_backward<T: Scalar>(y: &[T], g: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut dot = T::zero();
            for j in 0..len {
                dot += g[base + j * inner] * y[base + j * inner];
            }
            for j in 0..len {
                let idx = base + j * inner;
                dx[idx] = y[idx] * (g[idx] - dot);
            }
        }
    }
    dx
}

/// Log-softmax over contiguous rows of length `len`.
pub(crate) fn log_softmax_rows<T: Scalar>(x: &[T], len: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for (xr, yr) in x.chunks(len).zip(y.chunks_mut(len)) {
        let mx = xr.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = mx + xr.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
        for (o, &v) in yr.iter_mut().zip(xr) {
            *o = v - lse;
        }
    }
    y
}

/// Normalizes contiguous rows to zero mean / unit variance; returns (y, inv_std per row).
pub(crate) fn normalize_rows<T: Scalar>(x: &[T], len: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let n = T::of(len as f64);
    let mut y = vec![T::zero(); x.len()];
    let mut inv = Vec::with_capacity(x.len() / len);
    for (xr, yr) in x.chunks(len).zip(y.chunks_mut(len)) {
        let mean = xr.iter().copied().sum::<T>() / n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let is = T::one() / (var + eps).sqrt();
        for (o, &v) in yr.iter_mut().zip(xr) {
            *o = (v - mean) * is;
        }
        inv.push(is);
    }
    (y, inv)
}

pub(crate) fn normalize_rows_backward<T: Scalar>(y: &[T], inv: &[T], g: &[T], len: usize) -> Vec<T> {
    let n = T::of(len as f64);
    let mut dx = vec![T::zero(); y.len()];
    for (r, ((yr, gr), dr)) in y.chunks(len).zip(g.chunks(len)).zip(dx.chunks_mut(len)).enumerate() {
        let mg = gr.iter().copied().sum::<T>() / n;
        let mgy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / n;
        for ((d, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
            *d = inv[r] * (gv - mg - yv * mgy);
        }
    }
    dx
}

/// Geometry of a same-padded grouped 1-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len: usize,
    pub kernel: usize,
    pub groups: usize,
}

impl ConvGeom {
    fn cin_g(&self) -> usize {
        self.c_in / self.groups
    }
    fn cout_g(&self) -> usize {
        self.c_out / self.groups
    }
    fn pad(&self) -> isize {
        (self.kernel as isize - 1) / 2
    }
}

pub(crate) fn conv1d<T: Scalar>(x: &[T], w: &[T], bias: Option<&[T]>, g: ConvGeom) -> Vec<T> {
    let (cin_g, cout_g, pad, len, k) = (g.cin_g(), g.cout_g(), g.pad(), g.len, g.kernel);
    let mut out = vec![T::zero(); g.batch * g.c_out * len];
    for b in 0..g.batch {
        for co in 0..g.c_out {
            let grp = co / cout_g;
            let orow = &mut out[(b * g.c_out + co) * len..(b * g.c_out + co + 1) * len];
            if let Some(bias) = bias {
                orow.iter_mut().for_each(|o| *o = bias[co]);
            }
            for cl in 0..cin_g {
                let ci = grp * cin_g + cl;
                let xrow = &x[(b * g.c_in + ci) * len..(b * g.c_in + ci + 1) * len];
                for j in 0..k {
                    let wv = w[(co * cin_g + cl) * k + j];
                    let shift = j as isize - pad;
                    let lo = (-shift).max(0) as usize;
                    let hi = (len as isize - shift).min(len as isize).max(0) as usize;
                    for t in lo..hi {
                        orow[t] += wv * xrow[(t as isize + shift) as usize];
                    }
                }
            }
        }
    }
    out
}

/// Returns (dx, dw, db).
pub(crate) fn conv1d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    gout: &[T],
    g: ConvGeom,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (cin_g, cout_g, pad, len, k) = (g.cin_g(), g.cout_g(), g.pad(), g.len, g.kernel);
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); w.len()];
    let mut db = vec![T::zero(); g.c_out];
    for b in 0..g.batch {
        for co in 0..g.c_out {
            let grp = co / cout_g;
            let grow = &gout[(b * g.c_out + co) * len..(b * g.c_out + co + 1) * len];
            db[co] += grow.iter().copied().sum::<T>();
            for cl in 0..cin_g {
                let ci = grp * cin_g + cl;
                let xoff = (b * g.c_in + ci) * len;
                for j in 0..k {
                    let widx = (co * cin_g + cl) * k + j;
                    let wv = w[widx];
                    let shift = j as isize - pad;
                    let lo = (-shift).max(0) as usize;
                    let hi = (len as isize - shift).min(len as isize).max(0) as usize;
                    let mut acc = T::zero();
                    for t in lo..hi {
                        let xi = xoff + (t as isize + shift) as usize;
                        acc += grow[t] * x[xi];
                        dx[xi] += grow[t] * wv;
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
    (dx, dw, db)
}

/// Permutes axes: output axis `i` is input axis `perm[i]`.
pub(crate) fn permute<T: Scalar>(x: &[T], shape: &[usize], perm: &[usize]) -> (Vec<T>, Vec<usize>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let zeros = vec![0; rank];
    let mut out = vec![T::zero(); x.len()];
    for_each_broadcast(&out_shape, &src_strides, &zeros, |o, i, _| out[o] = x[i]);
    (out, out_shape)
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}
