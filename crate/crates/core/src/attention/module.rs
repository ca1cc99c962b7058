//! The fusion module: normalise both sources, attend from target to
//! reference, and add the target back through a residual path.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::config::{AttentionMode, ModelConfig};
use crate::error::Result;
use crate::params::{Bindings, ParamId, ParamStore};
use crate::tensor::Tensor;

use super::layer::{resolve_span, AttentionLayer, Axis, LayerKind};

#[derive(Clone, Debug)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

impl Norm {
    fn new(store: &mut ParamStore, name: &str, c: usize) -> Self {
        Norm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[c]), true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[c]), true),
        }
    }

    fn apply_relu(&self, g: &mut Graph, b: &Bindings, x: Var, eps: f64) -> Result<Var> {
        let y = g.batch_norm(x, b.var(self.gamma), b.var(self.beta), eps)?;
        Ok(g.relu(y))
    }
}

/// One application: BN + ReLU on target and reference, width then height
/// axial layers (or a single full 2D layer), then `relu(target + attended)`.
#[derive(Clone, Debug)]
pub struct AttentionModule {
    norm_t: Norm,
    norm_r: Norm,
    pub layers: Vec<AttentionLayer>,
    eps: f64,
}

impl AttentionModule {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, h: usize, w: usize, rng: &mut impl Rng) -> Result<Self> {
        let kinds: &[(LayerKind, &str)] = match cfg.mode {
            AttentionMode::Axial => &[
                (LayerKind::Axial(Axis::Width), "width"),
                (LayerKind::Axial(Axis::Height), "height"),
            ],
            AttentionMode::Full => &[(LayerKind::Full, "full")],
        };
        let norm_t = Norm::new(store, &format!("{name}.bn_target"), cfg.hidden);
        let norm_r = Norm::new(store, &format!("{name}.bn_reference"), cfg.hidden);
        let layers = kinds
            .iter()
            .map(|&(kind, tag)| {
                let (sh, sw) = resolve_span(kind, cfg.span, h, w)?;
                AttentionLayer::new(store, &format!("{name}.{tag}"), cfg.hidden, cfg.heads, sh, sw, rng)
            })
            .collect::<Result<_>>()?;
        Ok(AttentionModule {
            norm_t,
            norm_r,
            layers,
            eps: cfg.bn_eps,
        })
    }

    pub fn forward(&self, g: &mut Graph, b: &Bindings, target: Var, reference: Var) -> Result<Var> {
        let t = self.norm_t.apply_relu(g, b, target, self.eps)?;
        let r = self.norm_r.apply_relu(g, b, reference, self.eps)?;
        let mut x = t;
        for layer in &self.layers {
            x = layer.forward(g, b, x, r)?;
        }
        let sum = g.add(target, x)?;
        Ok(g.relu(sum))
    }
}

/// `repeats` consecutive modules with independent parameters, each fed the
/// same reference.
#[derive(Clone, Debug)]
pub struct FusionBlock {
    pub modules: Vec<AttentionModule>,
}

impl FusionBlock {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, h: usize, w: usize, rng: &mut impl Rng) -> Result<Self> {
        let modules = (0..cfg.repeats)
            .map(|i| AttentionModule::new(store, &format!("{name}.stage{}", i + 1), cfg, h, w, rng))
            .collect::<Result<_>>()?;
        Ok(FusionBlock { modules })
    }

    pub fn forward(&self, g: &mut Graph, b: &Bindings, target: Var, reference: Var) -> Result<Var> {
        let mut x = target;
        for m in &self.modules {
            x = m.forward(g, b, x, reference)?;
        }
        Ok(x)
    }
}
