//! One multi-head attention layer: linear projections, windowed attention
//! with relative positional tables, and an output projection.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::config::Span;
use crate::error::{Error, Result};
use crate::params::{lecun_linear, Bindings, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Width,
    Height,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Axial(Axis),
    Full,
}

/// Window `(span_h, span_w)` for a layer over an `h x w` map.
pub fn resolve_span(kind: LayerKind, span: Span, h: usize, w: usize) -> Result<(usize, usize)> {
    let pick = |len: usize| match span {
        Span::Auto => Ok(len),
        Span::Fixed(m) if m >= 1 && m <= len => Ok(m),
        Span::Fixed(m) => Err(Error::dim(
            "attention",
            format!("span {m} exceeds axis length {len}"),
        )),
    };
    Ok(match kind {
        LayerKind::Axial(Axis::Width) => (1, pick(w)?),
        LayerKind::Axial(Axis::Height) => (pick(h)?, 1),
        LayerKind::Full => (pick(h)?, pick(w)?),
    })
}

/// Parameters of one layer. `W_q`, `W_k`, `W_v` and the output map are
/// `[h, h]`; rows `n*d..(n+1)*d` belong to head `n`. Relative tables are
/// `[h, 2*span_h - 1, 2*span_w - 1]`, zero-initialised.
#[derive(Clone, Debug)]
pub struct AttentionLayer {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_out: ParamId,
    pub r_q: ParamId,
    pub r_k: ParamId,
    pub r_v: ParamId,
    pub heads: usize,
    pub span_h: usize,
    pub span_w: usize,
}

impl AttentionLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        hidden: usize,
        heads: usize,
        span_h: usize,
        span_w: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || hidden % heads != 0 {
            return Err(Error::Config(format!("hidden {hidden} not divisible by {heads} heads")));
        }
        let mut lin = |store: &mut ParamStore, n: &str| store.add(format!("{name}.{n}"), lecun_linear(hidden, hidden, rng), true);
        let w_q = lin(store, "w_q");
        let w_k = lin(store, "w_k");
        let w_v = lin(store, "w_v");
        let w_out = lin(store, "w_out");
        let table = [hidden, 2 * span_h - 1, 2 * span_w - 1];
        let mut tab = |n: &str| store.add(format!("{name}.{n}"), Tensor::zeros(&table), true);
        Ok(AttentionLayer {
            w_q,
            w_k,
            w_v,
            w_out,
            r_q: tab("r_q"),
            r_k: tab("r_k"),
            r_v: tab("r_v"),
            heads,
            span_h,
            span_w,
        })
    }

    /// Queries from `query`, keys and values from `source`; both `[h, H, W]`.
    pub fn forward(&self, g: &mut Graph, b: &Bindings, query: Var, source: Var) -> Result<Var> {
        let (c, h, w) = g.value(query).chw()?;
        if g.shape(source) != [c, h, w] {
            return Err(Error::dim(
                "attention",
                format!("target {:?} vs reference {:?}", [c, h, w], g.shape(source)),
            ));
        }
        let flat_q = g.reshape(query, &[c, h * w])?;
        let flat_s = g.reshape(source, &[c, h * w])?;
        let proj = |g: &mut Graph, wt: ParamId, x: Var| -> Result<Var> {
            let y = g.matmul(b.var(wt), x)?;
            g.reshape(y, &[c, h, w])
        };
        let q = proj(g, self.w_q, flat_q)?;
        let k = proj(g, self.w_k, flat_s)?;
        let v = proj(g, self.w_v, flat_s)?;
        let a = g.window_attention(
            [q, k, v, b.var(self.r_q), b.var(self.r_k), b.var(self.r_v)],
            self.heads,
            self.span_h,
            self.span_w,
        )?;
        let flat_a = g.reshape(a, &[c, h * w])?;
        proj(g, self.w_out, flat_a)
    }
}
