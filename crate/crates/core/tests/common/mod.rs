//! Brute-force attention shared by the oracle and acceptance tests.
#![allow(dead_code)]

use axsty_core::attention::kernel::window_start;
use axsty_core::attention::{resolve_span, AttentionLayer, LayerKind};
use axsty_core::config::Span;
use axsty_core::{Graph, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Layer {
    pub store: ParamStore,
    pub layer: AttentionLayer,
}

pub fn layer(kind: LayerKind, c: usize, heads: usize, h: usize, w: usize, seed: u64) -> Layer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let (sh, sw) = resolve_span(kind, Span::Auto, h, w).unwrap();
    let layer = AttentionLayer::new(&mut store, "l", c, heads, sh, sw, &mut rng).unwrap();
    for id in [layer.r_q, layer.r_k, layer.r_v] {
        *store.get_mut(id) = Tensor::uniform(store.get(id).shape(), -0.5, 0.5, &mut rng);
    }
    Layer { store, layer }
}

pub fn run(l: &Layer, t: &Tensor, r: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let b = l.store.bind_frozen(&mut g);
    let tv = g.constant(t.clone());
    let rv = g.constant(r.clone());
    let y = l.layer.forward(&mut g, &b, tv, rv).unwrap();
    g.value(y).clone()
}

/// `W x` at one position of a `[C, H, W]` map.
pub fn apply(wm: &Tensor, x: &Tensor, pos: usize) -> Vec<f64> {
    let c = wm.shape()[0];
    let n = x.shape()[1] * x.shape()[2];
    (0..c)
        .map(|i| (0..c).map(|j| wm.data()[i * c + j] * x.data()[j * n + pos]).sum())
        .collect()
}

/// Direct evaluation: for every query o and every p in its window (the whole
/// lattice when the span covers it), per head,
/// `softmax_p(q_o·k_p + q_o·rq[p-o] + k_p·rk[p-o])` weighting `v_p + rv[p-o]`,
/// heads concatenated, then the output map.
pub fn oracle(l: &Layer, t: &Tensor, r: &Tensor) -> Tensor {
    let s = &l.store;
    let a = &l.layer;
    let (c, h, w) = t.chw().unwrap();
    let (sh, sw) = (a.span_h, a.span_w);
    let d = c / a.heads;
    let tw = 2 * sw - 1;
    let table = |id, ch: usize, dy: isize, dx: isize| -> f64 {
        let t: &Tensor = s.get(id);
        let row = (dy + sh as isize - 1) as usize * tw + (dx + sw as isize - 1) as usize;
        t.data()[ch * (2 * sh - 1) * tw + row]
    };
    let mut mixed = vec![0.0; c * h * w];
    for oi in 0..h {
        for oj in 0..w {
            let o = oi * w + oj;
            let q = apply(s.get(a.w_q), t, o);
            let r0 = window_start(oi, sh, h);
            let c0 = window_start(oj, sw, w);
            for n in 0..a.heads {
                let mut logits = Vec::new();
                let mut vals = Vec::new();
                for pi in r0..r0 + sh {
                    for pj in c0..c0 + sw {
                        let p = pi * w + pj;
                        let (dy, dx) = (pi as isize - oi as isize, pj as isize - oj as isize);
                        let k = apply(s.get(a.w_k), r, p);
                        let v = apply(s.get(a.w_v), r, p);
                        let mut z = 0.0;
                        let mut val = vec![0.0; d];
                        for e in 0..d {
                            let ch = n * d + e;
                            z += q[ch] * k[ch] + q[ch] * table(a.r_q, ch, dy, dx) + k[ch] * table(a.r_k, ch, dy, dx);
                            val[e] = v[ch] + table(a.r_v, ch, dy, dx);
                        }
                        logits.push(z);
                        vals.push(val);
                    }
                }
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let ex: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
                let sum: f64 = ex.iter().sum();
                for (wt, val) in ex.iter().zip(&vals) {
                    for e in 0..d {
                        mixed[(n * d + e) * h * w + o] += wt / sum * val[e];
                    }
                }
            }
        }
    }
    let mixed = Tensor::new(&[c, h, w], mixed).unwrap();
    let out: Vec<f64> = {
        let mut out = vec![0.0; c * h * w];
        for p in 0..h * w {
            for (ch, v) in apply(s.get(a.w_out), &mixed, p).into_iter().enumerate() {
                out[ch * h * w + p] = v;
            }
        }
        out
    };
    Tensor::new(&[c, h, w], out).unwrap()
}

pub fn rand_map(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
    Tensor::uniform(&[c, h, w], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}
