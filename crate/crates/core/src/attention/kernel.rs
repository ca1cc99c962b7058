//! Windowed multi-head attention with relative positional terms.
//!
//! Buffers are position-major: `q[pos * channels + c]`, positions in row-major
//! `(row, col)` order. Relative tables are offset-major with
//! `(2 * span_h - 1) * (2 * span_w - 1)` rows, offset `(dy, dx)` stored at row
//! `(dy + span_h - 1) * (2 * span_w - 1) + (dx + span_w - 1)`.
//!
//! For a query `o` and each position `p` in its window, head `n` scores
//! `q_o·k_p + q_o·rq[p-o] + k_p·rk[p-o]`, softmaxes over the window, and mixes
//! `v_p + rv[p-o]`. The window is `span_h x span_w`, centred on the query and
//! shifted inwards at the borders so every query sees exactly `span_h * span_w`
//! positions. Width-axis attention is `span_h = 1`, height-axis `span_w = 1`.

use num_traits::Float;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub heads: usize,
    pub span_h: usize,
    pub span_w: usize,
}

impl AttnShape {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.channels % self.heads != 0 {
            return Err(Error::dim(
                "attention",
                format!("{} channels not divisible into {} heads", self.channels, self.heads),
            ));
        }
        if self.span_h == 0 || self.span_w == 0 {
            return Err(Error::dim("attention", "span must be positive"));
        }
        if self.span_h > self.height || self.span_w > self.width {
            return Err(Error::dim(
                "attention",
                format!(
                    "span {}x{} exceeds map {}x{}",
                    self.span_h, self.span_w, self.height, self.width
                ),
            ));
        }
        Ok(())
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn window(&self) -> usize {
        self.span_h * self.span_w
    }

    pub fn table_rows(&self) -> (usize, usize) {
        (2 * self.span_h - 1, 2 * self.span_w - 1)
    }

    pub fn table_len(&self) -> usize {
        let (a, b) = self.table_rows();
        a * b
    }

    /// Number of saved attention weights.
    pub fn weights_len(&self) -> usize {
        self.positions() * self.heads * self.window()
    }
}

pub fn window_start(pos: usize, span: usize, len: usize) -> usize {
    pos.saturating_sub(span / 2).min(len - span)
}

/// Visit `(position, table_row)` for each member of the query's window.
#[inline]
fn for_window(s: &AttnShape, i: usize, j: usize, mut f: impl FnMut(usize, usize)) {
    let r0 = window_start(i, s.span_h, s.height);
    let c0 = window_start(j, s.span_w, s.width);
    let tw = 2 * s.span_w - 1;
    for pi in r0..r0 + s.span_h {
        let trow = (pi + s.span_h - 1 - i) * tw;
        for pj in c0..c0 + s.span_w {
            f(pi * s.width + pj, trow + pj + s.span_w - 1 - j);
        }
    }
}

pub struct AttnInputs<'a, T> {
    pub q: &'a [T],
    pub k: &'a [T],
    pub v: &'a [T],
    pub rq: &'a [T],
    pub rk: &'a [T],
    pub rv: &'a [T],
}

impl<T> AttnInputs<'_, T> {
    fn check(&self, s: &AttnShape) -> Result<()> {
        s.validate()?;
        let n = s.positions() * s.channels;
        let t = s.table_len() * s.channels;
        for (name, len, want) in [
            ("q", self.q.len(), n),
            ("k", self.k.len(), n),
            ("v", self.v.len(), n),
            ("rq", self.rq.len(), t),
            ("rk", self.rk.len(), t),
            ("rv", self.rv.len(), t),
        ] {
            if len != want {
                return Err(Error::dim(
                    "attention",
                    format!("{name} has {len} values, expected {want}"),
                ));
            }
        }
        Ok(())
    }
}

/// Forward pass. When `weights` is given it receives the softmax weights laid
/// out `[position][head][window member]`.
pub fn forward<T>(s: &AttnShape, x: &AttnInputs<'_, T>, weights: Option<&mut [T]>) -> Result<Vec<T>>
where
    T: Float + Send + Sync,
{
    x.check(s)?;
    let c = s.channels;
    let d = s.head_dim();
    let win = s.window();
    let row_out = s.width * c;
    let row_w = s.width * s.heads * win;
    let mut out = vec![T::zero(); s.positions() * c];
    // Each window member is visited once for all heads so its key, value
    // and table rows are read contiguously.
    let row = |i: usize, orow: &mut [T], mut wrow: Option<&mut [T]>| {
        let mut members = Vec::with_capacity(win);
        let mut local = vec![T::zero(); if wrow.is_some() { 0 } else { s.heads * win }];
        for j in 0..s.width {
            let o = i * s.width + j;
            members.clear();
            for_window(s, i, j, |p, t| members.push((p, t)));
            let wts: &mut [T] = match wrow.as_deref_mut() {
                Some(w) => &mut w[j * s.heads * win..][..s.heads * win],
                None => &mut local,
            };
            let qo = &x.q[o * c..][..c];
            for (m, &(p, t)) in members.iter().enumerate() {
                let kp = &x.k[p * c..][..c];
                let rq = &x.rq[t * c..][..c];
                let rk = &x.rk[t * c..][..c];
                for n in 0..s.heads {
                    let mut acc = T::zero();
                    for e in n * d..(n + 1) * d {
                        acc = acc + qo[e] * (kp[e] + rq[e]) + kp[e] * rk[e];
                    }
                    wts[n * win + m] = acc;
                }
            }
            for hw in wts.chunks_mut(win) {
                let max = hw.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
                let mut z = T::zero();
                for w in hw.iter_mut() {
                    *w = (*w - max).exp();
                    z = z + *w;
                }
                for w in hw.iter_mut() {
                    *w = *w / z;
                }
            }
            let out_o = &mut orow[j * c..][..c];
            for (m, &(p, t)) in members.iter().enumerate() {
                let vp = &x.v[p * c..][..c];
                let rv = &x.rv[t * c..][..c];
                for n in 0..s.heads {
                    let w = wts[n * win + m];
                    for e in n * d..(n + 1) * d {
                        out_o[e] = out_o[e] + w * (vp[e] + rv[e]);
                    }
                }
            }
        }
    };
    match weights {
        Some(w) => {
            if w.len() != s.weights_len() {
                return Err(Error::dim("attention", "weights buffer has wrong length"));
            }
            out.par_chunks_mut(row_out)
                .zip(w.par_chunks_mut(row_w))
                .enumerate()
                .for_each(|(i, (orow, wrow))| row(i, orow, Some(wrow)));
        }
        None => out
            .par_chunks_mut(row_out)
            .enumerate()
            .for_each(|(i, orow)| row(i, orow, None)),
    }
    Ok(out)
}

pub struct AttnGrads {
    pub dq: Vec<f64>,
    pub dk: Vec<f64>,
    pub dv: Vec<f64>,
    pub drq: Vec<f64>,
    pub drk: Vec<f64>,
    pub drv: Vec<f64>,
}

/// Backward pass from saved softmax weights and the output gradient `dout`.
pub fn backward(s: &AttnShape, x: &AttnInputs<'_, f64>, weights: &[f64], dout: &[f64]) -> AttnGrads {
    let c = s.channels;
    let d = s.head_dim();
    let win = s.window();
    let n_pos = s.positions() * c;
    let n_tab = s.table_len() * c;
    let mut g = AttnGrads {
        dq: vec![0.0; n_pos],
        dk: vec![0.0; n_pos],
        dv: vec![0.0; n_pos],
        drq: vec![0.0; n_tab],
        drk: vec![0.0; n_tab],
        drv: vec![0.0; n_tab],
    };
    let mut members = Vec::with_capacity(win);
    let mut da = vec![0.0; win];
    for i in 0..s.height {
        for j in 0..s.width {
            let o = i * s.width + j;
            members.clear();
            for_window(s, i, j, |p, t| members.push((p, t)));
            for n in 0..s.heads {
                let h0 = n * d;
                let wts = &weights[(o * s.heads + n) * win..][..win];
                let go = &dout[o * c + h0..][..d];
                let mut dot = 0.0;
                for (m, &(p, t)) in members.iter().enumerate() {
                    let mut acc = 0.0;
                    for e in 0..d {
                        acc += go[e] * (x.v[p * c + h0 + e] + x.rv[t * c + h0 + e]);
                        g.dv[p * c + h0 + e] += wts[m] * go[e];
                        g.drv[t * c + h0 + e] += wts[m] * go[e];
                    }
                    da[m] = acc;
                    dot += wts[m] * acc;
                }
                for (m, &(p, t)) in members.iter().enumerate() {
                    let ds = wts[m] * (da[m] - dot);
                    if ds == 0.0 {
                        continue;
                    }
                    for e in 0..d {
                        let (qi, pi, ti) = (o * c + h0 + e, p * c + h0 + e, t * c + h0 + e);
                        g.dq[qi] += ds * (x.k[pi] + x.rq[ti]);
                        g.dk[pi] += ds * (x.q[qi] + x.rk[ti]);
                        g.drq[ti] += ds * x.q[qi];
                        g.drk[ti] += ds * x.k[pi];
                    }
                }
            }
        }
    }
    g
}

/// Channels-first `[C, H*W]` to position-major `[H*W, C]`, and back.
pub fn transpose<T: Copy + Default>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::default(); src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}
