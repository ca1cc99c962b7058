//! Finite-difference checks of every differentiable operation, each layer
//! type and the assembled network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::FusionBlock;
use crate::autodiff::gradcheck::{grad_check_many, GradCheckConfig, GradCheckReport};
use crate::autodiff::{GradFault, Graph, Var};
use crate::backbone::{PyramidVars, ToyBackbone};
use crate::config::{AttentionMode, Config, ModelConfig};
use crate::data::synthetic_pairs;
use crate::discriminator::PatchDiscriminator;
use crate::error::Result;
use crate::losses::{generator_objective, lsgan_disc, lsgan_gen, scale_targets};
use crate::model::Model;
use crate::network::{reference_input, target_input, DecoderStage, PredictionHead, SCALES};
use crate::params::{Bindings, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Side of the end-to-end instance.
    pub size: usize,
    pub tol: f64,
    pub e2e_tol: f64,
    /// Fraction of network parameters probed end to end.
    pub e2e_fraction: f64,
    pub end_to_end: bool,
    /// Probe at most this many coordinates per layer input; all when `None`.
    pub layer_points: Option<usize>,
    pub fault: Option<GradFault>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seed: 0,
            size: 32,
            tol: 1e-3,
            e2e_tol: 1e-2,
            e2e_fraction: 0.01,
            end_to_end: true,
            layer_points: None,
            fault: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub report: GradCheckReport,
}

/// Weighted sum `Σ c ⊙ y` with a fixed random `c`, so every output
/// coordinate carries a distinct slope.
fn project(g: &mut Graph, y: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let c = Tensor::uniform(g.shape(y), -1.0, 1.0, rng);
    let c = g.constant(c);
    let p = g.mul(y, c)?;
    Ok(g.sum(p))
}

struct Suite {
    opts: SuiteOptions,
    rng: ChaCha8Rng,
    out: Vec<SuiteEntry>,
    cap: Option<usize>,
}

impl Suite {
    fn cfg(&self, tol: f64) -> GradCheckConfig {
        GradCheckConfig {
            tol,
            seed: self.opts.seed,
            fault: self.opts.fault,
            max_points: self.cap,
            ..GradCheckConfig::default()
        }
    }

    fn rand(&mut self, shape: &[usize]) -> Tensor {
        Tensor::uniform(shape, -1.0, 1.0, &mut self.rng)
    }

    /// Check `f` on `inputs`, projecting its output to a scalar.
    fn op<F>(&mut self, name: &'static str, inputs: Vec<Tensor>, f: F) -> Result<()>
    where
        F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    {
        let proj_seed = self.rng.gen();
        let report = grad_check_many(
            |g, v| {
                let y = f(g, v)?;
                if g.value(y).is_scalar() {
                    Ok(y)
                } else {
                    project(g, y, &mut ChaCha8Rng::seed_from_u64(proj_seed))
                }
            },
            &inputs,
            &self.cfg(self.opts.tol),
        )?;
        self.out.push(SuiteEntry { name, report });
        Ok(())
    }

    /// Check a parameterised layer: the store's tensors come first, then
    /// `extra` inputs.
    fn layer<F>(&mut self, name: &'static str, store: &ParamStore, extra: Vec<Tensor>, f: F) -> Result<()>
    where
        F: Fn(&mut Graph, &Bindings, &[Var]) -> Result<Var>,
    {
        let n = store.len();
        let mut inputs = store.tensors();
        inputs.extend(extra);
        self.cap = self.opts.layer_points;
        let r = self.op(name, inputs, |g, v| f(g, &Bindings::from_vars(v[..n].to_vec()), &v[n..]));
        self.cap = None;
        r
    }
}

/// Fill every parameter of `store` with uniform noise of the given scale,
/// so zero-initialised tables and biases are exercised too.
fn jitter(store: &mut ParamStore, scale: f64, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let t = store.get_mut(id);
        for v in t.data_mut() {
            *v += rng.gen_range(-scale..scale);
        }
    }
}

fn ops(s: &mut Suite) -> Result<()> {
    let ins = vec![s.rand(&[3, 4]), s.rand(&[4, 2])];
    s.op("matmul", ins, |g, v| g.matmul(v[0], v[1]))?;
    let ins = vec![s.rand(&[2, 5, 5]), s.rand(&[3, 2, 3, 3]), s.rand(&[3])];
    s.op("conv2d_3x3", ins, |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1))?;
    let ins = vec![s.rand(&[4, 3, 3]), s.rand(&[2, 4, 1, 1]), s.rand(&[2])];
    s.op("conv2d_1x1", ins, |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 0))?;
    let ins = vec![s.rand(&[3, 8, 8]), s.rand(&[2, 3, 3, 3]), s.rand(&[2])];
    s.op("conv2d_stride2", ins, |g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1))?;
    let ins = vec![s.rand(&[2, 3, 3])];
    s.op("relu", ins, |g, v| Ok(g.relu(v[0])))?;
    let ins = vec![s.rand(&[2, 3, 3]).map(|x| 2.0 * x)];
    s.op("tanh", ins, |g, v| Ok(g.tanh(v[0])))?;
    let ins = vec![s.rand(&[3, 4, 2])];
    s.op("softmax", ins, |g, v| g.softmax(v[0], 1))?;
    let ins = vec![s.rand(&[3, 4, 4]), s.rand(&[3]), s.rand(&[3])];
    s.op("batch_norm", ins, |g, v| g.batch_norm(v[0], v[1], v[2], 1e-5))?;
    let ins = vec![s.rand(&[2, 3, 2])];
    s.op("upsample2x", ins, |g, v| g.upsample2x(v[0]))?;
    let ins = vec![s.rand(&[2, 4, 6])];
    s.op("avg_pool2x", ins, |g, v| g.avg_pool2x(v[0]))?;
    let ins = vec![s.rand(&[2, 3, 3]), s.rand(&[3, 3, 3])];
    s.op("concat", ins, |g, v| g.concat(v[0], v[1], 0))?;
    let ins = vec![s.rand(&[4, 3, 3])];
    s.op("narrow", ins, |g, v| g.narrow(v[0], 0, 1, 2))?;

    let att = |s: &mut Suite, name, (h, w): (usize, usize), (sh, sw): (usize, usize), heads| {
        let c = 4;
        let tab = [c, 2 * sh - 1, 2 * sw - 1];
        let ins = vec![
            s.rand(&[c, h, w]),
            s.rand(&[c, h, w]),
            s.rand(&[c, h, w]),
            s.rand(&tab),
            s.rand(&tab),
            s.rand(&tab),
        ];
        s.op(name, ins, move |g, v| g.window_attention([v[0], v[1], v[2], v[3], v[4], v[5]], heads, sh, sw))
    };
    att(s, "attention_full_2d", (3, 4), (3, 4), 2)?;
    att(s, "attention_axial_width", (3, 5), (1, 5), 2)?;
    att(s, "attention_axial_height", (4, 3), (4, 1), 1)?;
    att(s, "attention_window", (4, 5), (2, 3), 2)?;

    let reference = {
        let r = s.rand(&[2, 4, 4]).map(|x| 0.9 * x);
        crate::autodiff::kernels::soft_histogram(&r)?
    };
    let ins = vec![s.rand(&[2, 4, 4]).map(|x| 0.95 * x)];
    s.op("soft_histogram_chi2", ins, move |g, v| {
        let h = g.soft_histogram(v[0])?;
        let r = g.constant(reference.clone());
        g.chi2(h, r, 1e-5)
    })?;
    let ins = vec![s.rand(&[2, 3, 3]).map(|x| 2.0 * x), s.rand(&[2, 3, 3])];
    s.op("huber", ins, |g, v| g.huber(v[0], v[1], 1.0))?;
    let ins = vec![s.rand(&[2, 4, 5])];
    s.op("tv", ins, |g, v| g.tv(v[0]))?;
    let ins = vec![s.rand(&[1, 3, 3]), s.rand(&[1, 3, 3])];
    s.op("lsgan", ins, |g, v| {
        let d = lsgan_disc(g, v[0], v[1])?;
        let gen = lsgan_gen(g, v[1]);
        g.add(d, gen)
    })?;
    Ok(())
}

fn layers(s: &mut Suite) -> Result<()> {
    let mut prng = ChaCha8Rng::seed_from_u64(s.opts.seed ^ 0xa77e);
    for (name, mode, repeats) in [
        ("attention_module_axial", AttentionMode::Axial, 1),
        ("attention_module_full", AttentionMode::Full, 1),
        ("attention_module_repeated", AttentionMode::Axial, 2),
    ] {
        let cfg = ModelConfig {
            hidden: 16,
            heads: 2,
            mode,
            repeats,
            ..ModelConfig::default()
        };
        let mut store = ParamStore::new();
        let block = FusionBlock::new(&mut store, "m", &cfg, 8, 8, &mut prng)?;
        jitter(&mut store, 0.1, &mut prng);
        let ins = vec![s.rand(&[16, 8, 8]), s.rand(&[16, 8, 8])];
        s.layer(name, &store, ins, |g, b, v| block.forward(g, b, v[0], v[1]))?;
    }

    let mut store = ParamStore::new();
    let stage = DecoderStage::new(&mut store, "d", 4, &mut prng);
    jitter(&mut store, 0.05, &mut prng);
    let ins = vec![s.rand(&[4, 4, 4]), s.rand(&[4, 4, 4]), s.rand(&[4, 8, 8])];
    s.layer("decoder_stage", &store, ins, |g, b, v| stage.forward(g, b, v[0], v[1], v[2]))?;

    let mut store = ParamStore::new();
    let head = PredictionHead::new(&mut store, "h", 4, 6, &mut prng);
    jitter(&mut store, 0.05, &mut prng);
    let ins = vec![s.rand(&[4, 5, 5])];
    s.layer("prediction_head", &store, ins, |g, b, v| head.forward(g, b, v[0]))?;

    let mut store = ParamStore::new();
    let disc = PatchDiscriminator::new(&mut store, "d", 4, &mut prng);
    jitter(&mut store, 0.05, &mut prng);
    let ins = vec![s.rand(&[3, 16, 16])];
    s.layer("patch_discriminator", &store, ins, |g, b, v| disc.forward(g, b, v[0]))?;
    Ok(())
}

/// Configuration of the end-to-end instance.
pub fn e2e_config(seed: u64) -> Config {
    let mut c = Config::default();
    c.model.hidden = 16;
    c.model.head_dim = 8;
    c.model.heads = 2;
    c.model.seed = seed;
    c.disc.width = 4;
    c
}

fn end_to_end(s: &mut Suite) -> Result<()> {
    let size = s.opts.size;
    let cfg = e2e_config(s.opts.seed);
    let mut model = Model::new(&cfg, size, size)?;
    let mut prng = ChaCha8Rng::seed_from_u64(s.opts.seed ^ 0xe2e);
    jitter(model.net.store_mut(), 0.05, &mut prng);
    let pair = synthetic_pairs(1, size, s.opts.seed)?.remove(0);
    let backbone: &ToyBackbone = &model.backbone;
    let pt = backbone.forward(&target_input(&pair.target)?)?;
    let pr = backbone.forward(&reference_input(&pair.reference))?;
    let targets = scale_targets(&pair.target, &pair.reference, SCALES)?;
    let n = model.net.store().len();
    let net = &model.net;
    let disc = &model.disc;
    let mut gcfg = s.cfg(s.opts.e2e_tol);
    gcfg.fraction = Some(s.opts.e2e_fraction);
    let report = grad_check_many(
        |g, v| {
            let b = Bindings::from_vars(v[..n].to_vec());
            let t = PyramidVars::constant(g, &pt);
            let r = PyramidVars::constant(g, &pr);
            let preds = net.forward_graph(g, &b, &t, &r)?;
            let db = disc.store().bind_frozen(g);
            let (total, _) = generator_objective(g, &preds, &targets, Some((disc, &db)), &cfg.loss)?;
            Ok(total)
        },
        &model.net.store().tensors(),
        &gcfg,
    )?;
    s.out.push(SuiteEntry {
        name: "end_to_end",
        report,
    });
    Ok(())
}

pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<SuiteEntry>> {
    let mut s = Suite {
        rng: ChaCha8Rng::seed_from_u64(opts.seed),
        opts: opts.clone(),
        out: Vec::new(),
        cap: None,
    };
    ops(&mut s)?;
    layers(&mut s)?;
    if opts.end_to_end {
        end_to_end(&mut s)?;
    }
    Ok(s.out)
}
