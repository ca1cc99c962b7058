use crate::attention::kernel::{self, AttnInputs, AttnShape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::kernels::{self as k, BatchNormSaved, ConvGeom};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

/// Deliberately wrong gradients, used as a negative control for the
/// finite-difference checker.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GradFault {
    /// Scale the conv2d weight gradient by the given factor.
    ConvWeightScale(f64),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Relu(Var),
    Tanh(Var),
    Softmax(Var, usize),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: BatchNormSaved,
    },
    Upsample2x(Var),
    AvgPool2x(Var),
    Concat(Var, Var, usize),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Attention {
        inputs: [Var; 6],
        shape: AttnShape,
        weights: Vec<f64>,
    },
    SoftHistogram(Var),
    Chi2(Var, Var, f64),
    Huber(Var, Var, f64),
    Tv(Var),
    MseConst(Var, f64),
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

/// Single-owner record of executed operations. Nodes are appended in
/// execution order, so reverse index order is a valid backward order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
    fault: Option<GradFault>,
    track_kinks: bool,
    kink_hash: u64,
}

const FNV_PRIME: u64 = 0x100_0000_01b3;

impl Graph {
    pub fn new() -> Self {
        Graph {
            kink_hash: 0xcbf2_9ce4_8422_2325,
            ..Default::default()
        }
    }

    pub fn with_fault(fault: GradFault) -> Self {
        Graph {
            fault: Some(fault),
            ..Graph::new()
        }
    }

    /// Record a digest of every non-smooth branch taken (relu sign, Huber
    /// region, histogram cell) so finite-difference probes can tell when a
    /// perturbation crosses a kink.
    pub fn track_kinks(&mut self, on: bool) {
        self.track_kinks = on;
    }

    pub fn kink_signature(&self) -> u64 {
        self.kink_hash
    }

    fn mix_kink(&mut self, state: u64) {
        self.kink_hash = (self.kink_hash ^ state).wrapping_mul(FNV_PRIME);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last [`Graph::backward`]. `None` for
    /// values that do not require gradients or that the loss does not reach.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Clear all gradients so `backward` may run again.
    pub fn reset(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    // ── operations ───────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = k::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.value(x), self.value(w), stride, pad)?;
        let out = k::conv2d(
            self.value(x),
            self.value(w),
            bias.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.push(out, Op::Conv2d { x, w, bias, geom }, &inputs))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        match kind {
            Activation::Relu => self.relu(x),
            Activation::Tanh => self.tanh(x),
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        if self.track_kinks && self.requires_grad(x) {
            let states: Vec<u64> = self
                .value(x)
                .data()
                .iter()
                .map(|&v| if v > 0.0 { 2 } else if v == 0.0 { 1 } else { 0 })
                .collect();
            for s in states {
                self.mix_kink(s);
            }
        }
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push(out, Op::Tanh(x), &[x])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out = k::softmax(self.value(x), axis)?;
        Ok(self.push(out, Op::Softmax(x, axis), &[x]))
    }

    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (out, saved) = k::batch_norm(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let out = k::upsample2x(self.value(x))?;
        Ok(self.push(out, Op::Upsample2x(x), &[x]))
    }

    pub fn avg_pool2x(&mut self, x: Var) -> Result<Var> {
        let out = k::avg_pool2x(self.value(x))?;
        Ok(self.push(out, Op::AvgPool2x(x), &[x]))
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let out = k::concat(self.value(a), self.value(b), axis)?;
        Ok(self.push(out, Op::Concat(a, b, axis), &[a, b]))
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = k::narrow(self.value(x), axis, start, len)?;
        Ok(self.push(out, Op::Narrow { x, axis, start }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).mean());
        self.push(out, Op::Mean(x), &[x])
    }

    /// Windowed multi-head attention. `q`, `k`, `v` are `[C, H, W]`; the
    /// relative tables are `[C, 2*span_h - 1, 2*span_w - 1]`.
    pub fn window_attention(
        &mut self,
        [q, kv, v, rq, rk, rv]: [Var; 6],
        heads: usize,
        span_h: usize,
        span_w: usize,
    ) -> Result<Var> {
        let (c, h, w) = self.value(q).chw()?;
        for other in [kv, v] {
            if self.shape(other) != [c, h, w] {
                return Err(Error::dim(
                    "attention",
                    format!("query {:?} vs key/value {:?}", [c, h, w], self.shape(other)),
                ));
            }
        }
        let shape = AttnShape {
            height: h,
            width: w,
            channels: c,
            heads,
            span_h,
            span_w,
        };
        shape.validate()?;
        let (th, tw) = shape.table_rows();
        for t in [rq, rk, rv] {
            if self.shape(t) != [c, th, tw] {
                return Err(Error::dim(
                    "attention",
                    format!("relative table {:?}, expected {:?}", self.shape(t), [c, th, tw]),
                ));
            }
        }
        let pm = |g: &Graph, x: Var, rows: usize| kernel::transpose(g.value(x).data(), c, rows);
        let n = h * w;
        let t = shape.table_len();
        let (qp, kp, vp) = (pm(self, q, n), pm(self, kv, n), pm(self, v, n));
        let (rqp, rkp, rvp) = (pm(self, rq, t), pm(self, rk, t), pm(self, rv, t));
        let inputs = AttnInputs {
            q: &qp,
            k: &kp,
            v: &vp,
            rq: &rqp,
            rk: &rkp,
            rv: &rvp,
        };
        let mut weights = vec![0.0; shape.weights_len()];
        let out = kernel::forward(&shape, &inputs, Some(&mut weights))?;
        let out = Tensor::new(&[c, h, w], kernel::transpose(&out, n, c))?;
        let vars = [q, kv, v, rq, rk, rv];
        Ok(self.push(
            out,
            Op::Attention {
                inputs: vars,
                shape,
                weights,
            },
            &vars,
        ))
    }

    /// Softmax weights `[position][head][window member]` saved by an
    /// attention node.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Attention nodes in execution order.
    pub fn attention_nodes(&self) -> Vec<Var> {
        (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i].op, Op::Attention { .. }))
            .map(Var)
            .collect()
    }

    pub fn soft_histogram(&mut self, ab: Var) -> Result<Var> {
        if self.track_kinks && self.requires_grad(ab) {
            let cells: Vec<u64> = self
                .value(ab)
                .data()
                .iter()
                .map(|&v| {
                    let (i, f) = k::hist_coord(v);
                    ((i as u64) << 2) | u64::from(f == 0.0) | (u64::from(v.abs() >= 1.0) << 1)
                })
                .collect();
            for s in cells {
                self.mix_kink(s);
            }
        }
        let out = k::soft_histogram(self.value(ab))?;
        Ok(self.push(out, Op::SoftHistogram(ab), &[ab]))
    }

    pub fn chi2(&mut self, p: Var, r: Var, eps: f64) -> Result<Var> {
        let out = Tensor::scalar(k::chi2(self.value(p), self.value(r), eps)?);
        Ok(self.push(out, Op::Chi2(p, r, eps), &[p, r]))
    }

    pub fn huber(&mut self, pred: Var, target: Var, delta: f64) -> Result<Var> {
        let out = Tensor::scalar(k::huber_mean(self.value(pred), self.value(target), delta)?);
        if self.track_kinks && (self.requires_grad(pred) || self.requires_grad(target)) {
            let states: Vec<u64> = self
                .value(pred)
                .data()
                .iter()
                .zip(self.value(target).data())
                .map(|(p, t)| {
                    let a = (p - t).abs();
                    if a < delta { 0 } else if a == delta { 1 } else { 2 }
                })
                .collect();
            for s in states {
                self.mix_kink(s);
            }
        }
        Ok(self.push(out, Op::Huber(pred, target, delta), &[pred, target]))
    }

    pub fn tv(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(k::tv_mean(self.value(x))?);
        Ok(self.push(out, Op::Tv(x), &[x]))
    }

    /// `mean((x - c)²)`.
    pub fn mse_const(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x);
        let out = Tensor::scalar(v.data().iter().map(|a| (a - c) * (a - c)).sum::<f64>() / v.numel() as f64);
        self.push(out, Op::MseConst(x, c), &[x])
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Populate `grad` for every node reachable from `loss` that requires it.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.backward_done = true;
        if !self.requires_grad(loss) {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(Tensor::ones(self.shape(loss)));
        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(i, &g);
            self.nodes[i].grad = Some(g);
            for (v, dg) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut self.nodes[v.0].grad {
                    Some(acc) => acc.add_assign(&dg),
                    slot @ None => *slot = Some(dg),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let need = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (da, db) = k::matmul_backward(val(*a), val(*b), g);
                out.push((*a, da));
                out.push((*b, db));
            }
            Op::Conv2d { x, w, bias, geom } => {
                if need(*x) {
                    out.push((*x, k::conv2d_backward_input(val(*w), g, geom)));
                }
                if need(*w) {
                    let mut dw = k::conv2d_backward_weight(val(*x), g, geom);
                    if let Some(GradFault::ConvWeightScale(s)) = self.fault {
                        dw = dw.map(|v| v * s);
                    }
                    out.push((*w, dw));
                }
                if let Some(b) = bias {
                    if need(*b) {
                        let db = k::conv2d_backward_bias(g, geom).reshape(val(*b).shape()).unwrap();
                        out.push((*b, db));
                    }
                }
            }
            Op::Relu(x) => {
                // Gradient 0 at exactly 0.
                let dx = val(*x).zip_map(g, |v, d| if v > 0.0 { d } else { 0.0 }).unwrap();
                out.push((*x, dx));
            }
            Op::Tanh(x) => {
                let dx = node.value.zip_map(g, |y, d| d * (1.0 - y * y)).unwrap();
                out.push((*x, dx));
            }
            Op::Softmax(x, axis) => out.push((*x, k::softmax_backward(&node.value, g, *axis))),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
            } => {
                let (dx, dg, db) = k::batch_norm_backward(saved, val(*gamma), g);
                out.push((*x, dx));
                out.push((*gamma, dg.reshape(val(*gamma).shape()).unwrap()));
                out.push((*beta, db.reshape(val(*beta).shape()).unwrap()));
            }
            Op::Upsample2x(x) => out.push((*x, k::upsample2x_backward(g))),
            Op::AvgPool2x(x) => out.push((*x, k::avg_pool2x_backward(g))),
            Op::Concat(a, b, axis) => {
                let la = val(*a).shape()[*axis];
                let lb = val(*b).shape()[*axis];
                out.push((*a, k::narrow(g, *axis, 0, la).unwrap()));
                out.push((*b, k::narrow(g, *axis, la, lb).unwrap()));
            }
            Op::Narrow { x, axis, start } => {
                out.push((*x, k::narrow_backward(g, val(*x).shape(), *axis, *start)));
            }
            Op::Reshape(x) => out.push((*x, g.clone().reshape(val(*x).shape()).unwrap())),
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.map(|d| -d)));
            }
            Op::Mul(a, b) => {
                out.push((*a, g.zip_map(val(*b), |d, y| d * y).unwrap()));
                out.push((*b, g.zip_map(val(*a), |d, x| d * x).unwrap()));
            }
            Op::Scale(x, c) => out.push((*x, g.map(|d| d * c))),
            Op::Sum(x) => out.push((*x, Tensor::full(val(*x).shape(), g.item()))),
            Op::Mean(x) => {
                let n = val(*x).numel() as f64;
                out.push((*x, Tensor::full(val(*x).shape(), g.item() / n)));
            }
            Op::Attention {
                inputs,
                shape,
                weights,
            } => {
                let c = shape.channels;
                let n = shape.positions();
                let t = shape.table_len();
                let pm = |x: Var, rows: usize| kernel::transpose(val(x).data(), c, rows);
                let [q, kv, v, rq, rk, rv] = *inputs;
                let (qp, kp, vp) = (pm(q, n), pm(kv, n), pm(v, n));
                let (rqp, rkp, rvp) = (pm(rq, t), pm(rk, t), pm(rv, t));
                let x = AttnInputs {
                    q: &qp,
                    k: &kp,
                    v: &vp,
                    rq: &rqp,
                    rk: &rkp,
                    rv: &rvp,
                };
                let gp = kernel::transpose(g.data(), c, n);
                let grads = kernel::backward(shape, &x, weights, &gp);
                let back = |src: Vec<f64>, rows: usize, like: Var| {
                    Tensor::new(val(like).shape(), kernel::transpose(&src, rows, c)).unwrap()
                };
                out.push((q, back(grads.dq, n, q)));
                out.push((kv, back(grads.dk, n, kv)));
                out.push((v, back(grads.dv, n, v)));
                out.push((rq, back(grads.drq, t, rq)));
                out.push((rk, back(grads.drk, t, rk)));
                out.push((rv, back(grads.drv, t, rv)));
            }
            Op::SoftHistogram(ab) => out.push((*ab, k::soft_histogram_backward(val(*ab), g))),
            Op::Chi2(p, r, eps) => {
                let (dp, dr) = k::chi2_backward(val(*p), val(*r), *eps, g.item());
                out.push((*p, dp));
                out.push((*r, dr));
            }
            Op::Huber(p, t, delta) => {
                let n = val(*p).numel() as f64;
                let s = g.item() / n;
                let dp = val(*p)
                    .zip_map(val(*t), |a, b| s * k::huber_grad(a - b, *delta))
                    .unwrap();
                out.push((*t, dp.map(|d| -d)));
                out.push((*p, dp));
            }
            Op::Tv(x) => out.push((*x, k::tv_backward(val(*x), g.item()))),
            Op::MseConst(x, c) => {
                let n = val(*x).numel() as f64;
                let s = 2.0 * g.item() / n;
                out.push((*x, val(*x).map(|a| s * (a - c))));
            }
        }
        out.retain(|(v, _)| need(*v));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[1.0, -2.0, 0.5]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_input() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[1.0, -2.0, 0.5]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn backward_twice_is_rejected_until_reset() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::BackwardTwice)));
        g.reset();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn constants_never_accumulate_gradient() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let c = g.constant(t(&[2], &[3.0, 4.0]));
        let p = g.mul(x, c).unwrap();
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn relu_gradient_is_zero_at_kink() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[-1.0, 0.0, 2.0]));
        let r = g.relu(x);
        let s = g.sum(r);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn reused_value_accumulates() {
        let mut g = Graph::new();
        let x = g.param(t(&[1], &[3.0]));
        let a = g.scale(x, 2.0);
        let b = g.add(a, x).unwrap();
        let s = g.sum(b);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 3.0);
    }
}
