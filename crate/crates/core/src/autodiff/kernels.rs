//! Forward and backward kernels for the graph operations. All maps are
//! channels-first and row-major.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

// ── matmul ───────────────────────────────────────────────────────────

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n) = matmul_dims(a, b)?;
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    out.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        for kk in 0..k {
            let av = ad[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[kk * n..(kk + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    });
    Tensor::new(&[m, n], out)
}

pub fn matmul_dims(a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    match (a.shape(), b.shape()) {
        ([m, k1], [k2, n]) if k1 == k2 => Ok((*m, *k1, *n)),
        (sa, sb) => Err(Error::dim("matmul", format!("{sa:?} x {sb:?}"))),
    }
}

/// Returns `(dA, dB)` for `C = A B`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, dc: &Tensor) -> (Tensor, Tensor) {
    let (m, k, n) = matmul_dims(a, b).expect("checked in forward");
    let (ad, bd, dd) = (a.data(), b.data(), dc.data());
    let mut da = vec![0.0; m * k];
    da.par_chunks_mut(k.max(1)).enumerate().for_each(|(i, row)| {
        let drow = &dd[i * n..(i + 1) * n];
        for (kk, o) in row.iter_mut().enumerate() {
            let brow = &bd[kk * n..(kk + 1) * n];
            *o = drow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    });
    let mut db = vec![0.0; k * n];
    db.par_chunks_mut(n.max(1)).enumerate().for_each(|(kk, row)| {
        for i in 0..m {
            let av = ad[i * k + kk];
            if av == 0.0 {
                continue;
            }
            for (o, &g) in row.iter_mut().zip(&dd[i * n..(i + 1) * n]) {
                *o += av * g;
            }
        }
    });
    (
        Tensor::new(&[m, k], da).unwrap(),
        Tensor::new(&[k, n], db).unwrap(),
    )
}

// ── conv2d ───────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k_out: usize,
    pub ksize: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Self> {
        let (c, h, wd) = x.chw()?;
        let (k_out, wc, kh, kw) = match w.shape() {
            [a, b, c, d] => (*a, *b, *c, *d),
            s => return Err(Error::dim("conv2d", format!("weight must be rank 4, got {s:?}"))),
        };
        if wc != c {
            return Err(Error::dim(
                "conv2d",
                format!("input has {c} channels, kernel expects {wc}"),
            ));
        }
        if kh != kw {
            return Err(Error::dim("conv2d", format!("non-square kernel {kh}x{kw}")));
        }
        if stride == 0 {
            return Err(Error::dim("conv2d", "stride must be positive"));
        }
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(Error::dim(
                "conv2d",
                format!("input {h}x{wd} too small for {kh}x{kw} kernel"),
            ));
        }
        Ok(ConvGeom {
            c,
            h,
            w: wd,
            k_out,
            ksize: kh,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (wd + 2 * pad - kw) / stride + 1,
        })
    }

    /// Output columns `[lo, hi)` whose input column for tap `kx` is in range.
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.pad);
        let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
        let hi = if self.w + p <= kx {
            0
        } else {
            ((self.w - 1 + p - kx) / s + 1).min(self.ow)
        };
        (lo, hi.max(lo))
    }

    fn in_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
        (iy >= 0 && (iy as usize) < self.h).then_some(iy as usize)
    }
}

/// Cross-correlation (no kernel flip) with zero padding.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
    let g = ConvGeom::new(x, w, stride, pad)?;
    if let Some(b) = bias {
        if b.numel() != g.k_out {
            return Err(Error::dim(
                "conv2d",
                format!("bias has {} entries for {} outputs", b.numel(), g.k_out),
            ));
        }
    }
    let (xd, wd) = (x.data(), w.data());
    let kk = g.ksize;
    let plane = g.oh * g.ow;
    let mut out = vec![0.0; g.k_out * plane];
    out.par_chunks_mut(plane.max(1)).enumerate().for_each(|(k, op)| {
        if let Some(b) = bias {
            op.fill(b.data()[k]);
        }
        for c in 0..g.c {
            let xin = &xd[c * g.h * g.w..(c + 1) * g.h * g.w];
            for ky in 0..kk {
                for kx in 0..kk {
                    let wv = wd[((k * g.c + c) * kk + ky) * kk + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (lo, hi) = g.col_range(kx);
                    for oy in 0..g.oh {
                        let Some(iy) = g.in_row(oy, ky) else { continue };
                        let row = &xin[iy * g.w..(iy + 1) * g.w];
                        let orow = &mut op[oy * g.ow..(oy + 1) * g.ow];
                        if g.stride == 1 {
                            let off = lo + kx - g.pad;
                            for (o, &v) in orow[lo..hi].iter_mut().zip(&row[off..off + hi - lo]) {
                                *o += wv * v;
                            }
                        } else {
                            for ox in lo..hi {
                                orow[ox] += wv * row[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(&[g.k_out, g.oh, g.ow], out)
}

pub fn conv2d_backward_input(w: &Tensor, dout: &Tensor, g: &ConvGeom) -> Tensor {
    let (wd, dd) = (w.data(), dout.data());
    let kk = g.ksize;
    let mut dx = vec![0.0; g.c * g.h * g.w];
    dx.par_chunks_mut((g.h * g.w).max(1)).enumerate().for_each(|(c, dxp)| {
        for k in 0..g.k_out {
            let dop = &dd[k * g.oh * g.ow..(k + 1) * g.oh * g.ow];
            for ky in 0..kk {
                for kx in 0..kk {
                    let wv = wd[((k * g.c + c) * kk + ky) * kk + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (lo, hi) = g.col_range(kx);
                    for oy in 0..g.oh {
                        let Some(iy) = g.in_row(oy, ky) else { continue };
                        let drow = &dop[oy * g.ow..(oy + 1) * g.ow];
                        let xrow = &mut dxp[iy * g.w..(iy + 1) * g.w];
                        if g.stride == 1 {
                            let off = lo + kx - g.pad;
                            for (o, &v) in xrow[off..off + hi - lo].iter_mut().zip(&drow[lo..hi]) {
                                *o += wv * v;
                            }
                        } else {
                            for ox in lo..hi {
                                xrow[ox * g.stride + kx - g.pad] += wv * drow[ox];
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(&[g.c, g.h, g.w], dx).unwrap()
}

pub fn conv2d_backward_weight(x: &Tensor, dout: &Tensor, g: &ConvGeom) -> Tensor {
    let (xd, dd) = (x.data(), dout.data());
    let kk = g.ksize;
    let per_k = g.c * kk * kk;
    let mut dw = vec![0.0; g.k_out * per_k];
    dw.par_chunks_mut(per_k.max(1)).enumerate().for_each(|(k, dwk)| {
        let dop = &dd[k * g.oh * g.ow..(k + 1) * g.oh * g.ow];
        for c in 0..g.c {
            let xin = &xd[c * g.h * g.w..(c + 1) * g.h * g.w];
            for ky in 0..kk {
                for kx in 0..kk {
                    let (lo, hi) = g.col_range(kx);
                    let mut acc = 0.0;
                    for oy in 0..g.oh {
                        let Some(iy) = g.in_row(oy, ky) else { continue };
                        let drow = &dop[oy * g.ow..(oy + 1) * g.ow];
                        let row = &xin[iy * g.w..(iy + 1) * g.w];
                        if g.stride == 1 {
                            let off = lo + kx - g.pad;
                            acc += drow[lo..hi]
                                .iter()
                                .zip(&row[off..off + hi - lo])
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                        } else {
                            for ox in lo..hi {
                                acc += drow[ox] * row[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                    dwk[(c * kk + ky) * kk + kx] = acc;
                }
            }
        }
    });
    Tensor::new(&[g.k_out, g.c, kk, kk], dw).unwrap()
}

pub fn conv2d_backward_bias(dout: &Tensor, g: &ConvGeom) -> Tensor {
    let plane = g.oh * g.ow;
    Tensor::from_fn(&[g.k_out], |k| dout.data()[k * plane..(k + 1) * plane].iter().sum())
}

// ── softmax ──────────────────────────────────────────────────────────

/// `(outer, len, inner)` strides for reducing along `axis`.
pub fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::dim("axis", format!("axis {axis} for rank {}", shape.len())));
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = axis_split(x.shape(), axis)?;
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |l: usize| (o * len + l) * inner + i;
            let max = (0..len).map(|l| xd[idx(l)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for l in 0..len {
                let e = (xd[idx(l)] - max).exp();
                out[idx(l)] = e;
                z += e;
            }
            for l in 0..len {
                out[idx(l)] /= z;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

pub fn softmax_backward(y: &Tensor, dy: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = axis_split(y.shape(), axis).expect("checked in forward");
    let (yd, gd) = (y.data(), dy.data());
    let mut dx = vec![0.0; yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |l: usize| (o * len + l) * inner + i;
            let dot: f64 = (0..len).map(|l| yd[idx(l)] * gd[idx(l)]).sum();
            for l in 0..len {
                dx[idx(l)] = yd[idx(l)] * (gd[idx(l)] - dot);
            }
        }
    }
    Tensor::new(y.shape(), dx).unwrap()
}

// ── batch norm ───────────────────────────────────────────────────────

pub struct BatchNormSaved {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
}

/// Per-channel batch statistics over all spatial positions.
pub fn batch_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<(Tensor, BatchNormSaved)> {
    let (c, h, w) = x.chw()?;
    if gamma.numel() != c || beta.numel() != c {
        return Err(Error::dim(
            "batch_norm",
            format!("{c} channels, gamma {} beta {}", gamma.numel(), beta.numel()),
        ));
    }
    let n = h * w;
    let mut xhat = vec![0.0; c * n];
    let mut out = vec![0.0; c * n];
    let mut inv_std = vec![0.0; c];
    for ch in 0..c {
        let xs = &x.data()[ch * n..(ch + 1) * n];
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[ch] = is;
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        for (i, &v) in xs.iter().enumerate() {
            let xh = (v - mean) * is;
            xhat[ch * n + i] = xh;
            out[ch * n + i] = g * xh + b;
        }
    }
    Ok((
        Tensor::new(x.shape(), out)?,
        BatchNormSaved {
            xhat: Tensor::new(x.shape(), xhat)?,
            inv_std,
        },
    ))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batch_norm_backward(saved: &BatchNormSaved, gamma: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (c, h, w) = dy.chw().expect("rank checked in forward");
    let n = h * w;
    let nf = n as f64;
    let mut dx = vec![0.0; c * n];
    let mut dg = vec![0.0; c];
    let mut db = vec![0.0; c];
    for ch in 0..c {
        let gs = &dy.data()[ch * n..(ch + 1) * n];
        let xs = &saved.xhat.data()[ch * n..(ch + 1) * n];
        let sum_g: f64 = gs.iter().sum();
        let sum_gx: f64 = gs.iter().zip(xs).map(|(a, b)| a * b).sum();
        dg[ch] = sum_gx;
        db[ch] = sum_g;
        let k = gamma.data()[ch] * saved.inv_std[ch] / nf;
        for i in 0..n {
            dx[ch * n + i] = k * (nf * gs[i] - sum_g - xs[i] * sum_gx);
        }
    }
    (
        Tensor::new(dy.shape(), dx).unwrap(),
        Tensor::new(&[c], dg).unwrap(),
        Tensor::new(&[c], db).unwrap(),
    )
}

// ── resampling ───────────────────────────────────────────────────────

pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    let (h2, w2) = (2 * h, 2 * w);
    let xd = x.data();
    Ok(Tensor::from_fn(&[c, h2, w2], |i| {
        let ch = i / (h2 * w2);
        let y = (i / w2) % h2;
        let xx = i % w2;
        xd[(ch * h + y / 2) * w + xx / 2]
    }))
}

pub fn upsample2x_backward(dy: &Tensor) -> Tensor {
    let (c, h2, w2) = dy.chw().expect("rank checked in forward");
    let (h, w) = (h2 / 2, w2 / 2);
    let dd = dy.data();
    Tensor::from_fn(&[c, h, w], |i| {
        let ch = i / (h * w);
        let y = (i / w) % h;
        let x = i % w;
        let base = ch * h2 * w2;
        dd[base + (2 * y) * w2 + 2 * x]
            + dd[base + (2 * y) * w2 + 2 * x + 1]
            + dd[base + (2 * y + 1) * w2 + 2 * x]
            + dd[base + (2 * y + 1) * w2 + 2 * x + 1]
    })
}

pub fn avg_pool2x(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim("avg_pool2x", format!("odd spatial size {h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let xd = x.data();
    Ok(Tensor::from_fn(&[c, ho, wo], |i| {
        let ch = i / (ho * wo);
        let y = (i / wo) % ho;
        let xx = i % wo;
        let base = ch * h * w;
        (xd[base + (2 * y) * w + 2 * xx]
            + xd[base + (2 * y) * w + 2 * xx + 1]
            + xd[base + (2 * y + 1) * w + 2 * xx]
            + xd[base + (2 * y + 1) * w + 2 * xx + 1])
            * 0.25
    }))
}

pub fn avg_pool2x_backward(dy: &Tensor) -> Tensor {
    let (c, ho, wo) = dy.chw().expect("rank checked in forward");
    let (h, w) = (2 * ho, 2 * wo);
    let dd = dy.data();
    Tensor::from_fn(&[c, h, w], |i| {
        let ch = i / (h * w);
        let y = (i / w) % h;
        let x = i % w;
        0.25 * dd[(ch * ho + y / 2) * wo + x / 2]
    })
}

// ── concat / narrow ──────────────────────────────────────────────────

pub fn concat(a: &Tensor, b: &Tensor, axis: usize) -> Result<Tensor> {
    if a.rank() != b.rank() {
        return Err(Error::dim("concat", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    for (i, (da, db)) in a.shape().iter().zip(b.shape()).enumerate() {
        if i != axis && da != db {
            return Err(Error::dim("concat", format!("{:?} vs {:?} on axis {axis}", a.shape(), b.shape())));
        }
    }
    let (outer, la, inner) = axis_split(a.shape(), axis)?;
    let lb = b.shape()[axis];
    let mut out = Vec::with_capacity(a.numel() + b.numel());
    for o in 0..outer {
        out.extend_from_slice(&a.data()[o * la * inner..(o + 1) * la * inner]);
        out.extend_from_slice(&b.data()[o * lb * inner..(o + 1) * lb * inner]);
    }
    let mut shape = a.shape().to_vec();
    shape[axis] = la + lb;
    Tensor::new(&shape, out)
}

pub fn narrow(x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    let (outer, full, inner) = axis_split(x.shape(), axis)?;
    if start + len > full {
        return Err(Error::dim("narrow", format!("[{start}, {}) of {full}", start + len)));
    }
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * full + start) * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Tensor::new(&shape, out)
}

pub fn narrow_backward(dy: &Tensor, in_shape: &[usize], axis: usize, start: usize) -> Tensor {
    let (outer, full, inner) = axis_split(in_shape, axis).expect("checked in forward");
    let len = dy.shape()[axis];
    let mut dx = Tensor::zeros(in_shape);
    for o in 0..outer {
        let base = (o * full + start) * inner;
        dx.data_mut()[base..base + len * inner]
            .copy_from_slice(&dy.data()[o * len * inner..(o + 1) * len * inner]);
    }
    dx
}

// ── losses ───────────────────────────────────────────────────────────

/// Number of histogram nodes along each of the a and b axes.
pub const HIST_SIDE: usize = 21;
/// Total soft-histogram bins.
pub const HIST_BINS: usize = HIST_SIDE * HIST_SIDE;

/// Lower grid node and fractional position of a normalised value on the
/// 21-node lattice spanning `[-1, 1]`.
pub fn hist_coord(v: f64) -> (usize, f64) {
    let u = ((v.clamp(-1.0, 1.0) + 1.0) * 0.5 * (HIST_SIDE - 1) as f64).clamp(0.0, (HIST_SIDE - 1) as f64);
    let i0 = (u.floor() as usize).min(HIST_SIDE - 2);
    (i0, u - i0 as f64)
}

/// Bilinear soft histogram over `(a, b)` of a `[2, H, W]` map, as `[21, 21]`
/// indexed `[a_bin, b_bin]`.
pub fn soft_histogram(ab: &Tensor) -> Result<Tensor> {
    let (c, h, w) = ab.chw()?;
    if c != 2 {
        return Err(Error::dim("soft_histogram", format!("expected 2 channels, got {c}")));
    }
    let n = h * w;
    let mass = 1.0 / n as f64;
    let mut hist = vec![0.0; HIST_BINS];
    let (a, b) = ab.data().split_at(n);
    for i in 0..n {
        let (ia, fa) = hist_coord(a[i]);
        let (ib, fb) = hist_coord(b[i]);
        hist[ia * HIST_SIDE + ib] += mass * (1.0 - fa) * (1.0 - fb);
        hist[(ia + 1) * HIST_SIDE + ib] += mass * fa * (1.0 - fb);
        hist[ia * HIST_SIDE + ib + 1] += mass * (1.0 - fa) * fb;
        hist[(ia + 1) * HIST_SIDE + ib + 1] += mass * fa * fb;
    }
    Tensor::new(&[HIST_SIDE, HIST_SIDE], hist)
}

pub fn soft_histogram_backward(ab: &Tensor, dh: &Tensor) -> Tensor {
    let n = ab.numel() / 2;
    let mass = 1.0 / n as f64;
    // d(frac)/d(value) on the open interval; clamped values have zero slope.
    let slope = 0.5 * (HIST_SIDE - 1) as f64;
    let g = dh.data();
    let (a, b) = ab.data().split_at(n);
    let mut dx = vec![0.0; 2 * n];
    for i in 0..n {
        let (ia, fa) = hist_coord(a[i]);
        let (ib, fb) = hist_coord(b[i]);
        let g00 = g[ia * HIST_SIDE + ib];
        let g10 = g[(ia + 1) * HIST_SIDE + ib];
        let g01 = g[ia * HIST_SIDE + ib + 1];
        let g11 = g[(ia + 1) * HIST_SIDE + ib + 1];
        let sa = if a[i].abs() < 1.0 { slope } else { 0.0 };
        let sb = if b[i].abs() < 1.0 { slope } else { 0.0 };
        dx[i] = mass * sa * ((1.0 - fb) * (g10 - g00) + fb * (g11 - g01));
        dx[n + i] = mass * sb * ((1.0 - fa) * (g01 - g00) + fa * (g11 - g10));
    }
    Tensor::new(ab.shape(), dx).unwrap()
}

/// Symmetric chi-squared distance `2 Σ (p - r)² / (p + r + eps)`.
pub fn chi2(p: &Tensor, r: &Tensor, eps: f64) -> Result<f64> {
    if p.numel() != r.numel() {
        return Err(Error::dim("chi2", format!("{} vs {} bins", p.numel(), r.numel())));
    }
    Ok(2.0
        * p.data()
            .iter()
            .zip(r.data())
            .map(|(&a, &b)| (a - b) * (a - b) / (a + b + eps))
            .sum::<f64>())
}

/// Gradients of [`chi2`] with respect to both histograms.
pub fn chi2_backward(p: &Tensor, r: &Tensor, eps: f64, g: f64) -> (Tensor, Tensor) {
    let mut dp = vec![0.0; p.numel()];
    let mut dr = vec![0.0; p.numel()];
    for (i, (&a, &b)) in p.data().iter().zip(r.data()).enumerate() {
        let s = a + b + eps;
        let d = a - b;
        dp[i] = 2.0 * g * (2.0 * d / s - d * d / (s * s));
        dr[i] = 2.0 * g * (-2.0 * d / s - d * d / (s * s));
    }
    (
        Tensor::new(p.shape(), dp).unwrap(),
        Tensor::new(r.shape(), dr).unwrap(),
    )
}

pub fn huber_elem(d: f64, delta: f64) -> f64 {
    if d.abs() < delta {
        0.5 * d * d
    } else {
        delta * (d.abs() - 0.5 * delta)
    }
}

pub fn huber_grad(d: f64, delta: f64) -> f64 {
    if d.abs() < delta {
        d
    } else {
        delta * d.signum()
    }
}

pub fn huber_mean(pred: &Tensor, target: &Tensor, delta: f64) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::dim("huber", format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| huber_elem(p - t, delta))
        .sum::<f64>()
        / pred.numel() as f64)
}

/// Mean over each channel's `(H-1)W + H(W-1)` forward differences of the
/// squared difference.
pub fn tv_mean(x: &Tensor) -> Result<f64> {
    let (c, h, w) = x.chw()?;
    let count = c * ((h - 1) * w + h * (w - 1));
    if count == 0 {
        return Ok(0.0);
    }
    let d = x.data();
    let mut acc = 0.0;
    for ch in 0..c {
        let p = &d[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let v = p[y * w + xx];
                if xx + 1 < w {
                    let t = p[y * w + xx + 1] - v;
                    acc += t * t;
                }
                if y + 1 < h {
                    let t = p[(y + 1) * w + xx] - v;
                    acc += t * t;
                }
            }
        }
    }
    Ok(acc / count as f64)
}

pub fn tv_backward(x: &Tensor, g: f64) -> Tensor {
    let (c, h, w) = x.chw().expect("rank checked in forward");
    let count = c * ((h - 1) * w + h * (w - 1));
    let mut dx = Tensor::zeros(x.shape());
    if count == 0 {
        return dx;
    }
    let k = 2.0 * g / count as f64;
    let d = x.data();
    let out = dx.data_mut();
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..h {
            for xx in 0..w {
                let i = base + y * w + xx;
                if xx + 1 < w {
                    let t = k * (d[i + 1] - d[i]);
                    out[i + 1] += t;
                    out[i] -= t;
                }
                if y + 1 < h {
                    let t = k * (d[i + w] - d[i]);
                    out[i + w] += t;
                    out[i] -= t;
                }
            }
        }
    }
    dx
}
