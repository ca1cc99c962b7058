//! Adam and the alternating discriminator/generator training loop.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{Graph, Var};
use crate::backbone::{FeaturePyramid, PyramidVars};
use crate::checkpoint;
use crate::config::{Config, TrainConfig};
use crate::data::TrainingPair;
use crate::discriminator::MIN_SIDE;
use crate::error::{Error, Result};
use crate::losses::{disc_input, generator_objective, lsgan_disc, scale_targets, total_loss, LossBreakdown, ScaleLosses, ScaleTarget};
use crate::model::Model;
use crate::network::{reference_input, target_input, SCALES};
use crate::params::{Bindings, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Tensor> = store.ids().map(|id| Tensor::zeros(store.get(id).shape())).collect();
        AdamState {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn first_moment(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Tensor] {
        &self.v
    }
}

/// One bias-corrected Adam update of every trainable parameter.
pub fn adam_step(store: &mut ParamStore, grads: &[Tensor], s: &mut AdamState) -> Result<()> {
    if grads.len() != store.len() || s.m.len() != store.len() {
        return Err(Error::Invalid(format!(
            "{} gradients and {} moment buffers for {} parameters",
            grads.len(),
            s.m.len(),
            store.len()
        )));
    }
    s.step += 1;
    let t = s.step as i32;
    let c1 = 1.0 - s.beta1.powi(t);
    let c2 = 1.0 - s.beta2.powi(t);
    for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
        if !store.is_trainable(id) {
            continue;
        }
        let g = grads[i].data();
        let (m, v) = (s.m[i].data_mut(), s.v[i].data_mut());
        let p = store.get_mut(id).data_mut();
        for k in 0..p.len() {
            m[k] = s.beta1 * m[k] + (1.0 - s.beta1) * g[k];
            v[k] = s.beta2 * v[k] + (1.0 - s.beta2) * g[k] * g[k];
            p[k] -= s.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + s.eps);
        }
    }
    Ok(())
}

struct Sample {
    t_in: Tensor,
    r_in: Tensor,
    pyramids: Option<(FeaturePyramid, FeaturePyramid)>,
    targets: Vec<ScaleTarget>,
}

/// Batch-averaged losses of one step.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub step: usize,
    pub breakdown: LossBreakdown,
}

impl StepRecord {
    /// Unweighted pixel loss summed over scales.
    pub fn pixel(&self) -> f64 {
        self.breakdown.scales.iter().map(|s| s.pixel).sum()
    }

    pub fn gen(&self) -> f64 {
        self.breakdown.scales.iter().map(|s| s.gen).sum()
    }

    pub fn disc(&self) -> f64 {
        self.breakdown.scales.iter().map(|s| s.disc).sum()
    }
}

pub struct Trainer {
    pub model: Model,
    opt_g: AdamState,
    opt_d: AdamState,
    opt_b: Option<AdamState>,
    samples: Vec<Sample>,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
    step: usize,
    diagnostics: Option<PathBuf>,
}

struct Forward {
    g: Graph,
    net: Bindings,
    backbone: Option<Bindings>,
    preds: Vec<Var>,
}

fn mean_grads(per_sample: Vec<Vec<Tensor>>) -> Vec<Tensor> {
    let n = per_sample.len() as f64;
    let mut it = per_sample.into_iter();
    let mut acc = it.next().expect("non-empty batch");
    for gs in it {
        for (a, g) in acc.iter_mut().zip(&gs) {
            a.add_assign(g);
        }
    }
    acc.into_iter().map(|t| t.map(|v| v / n)).collect()
}

impl Trainer {
    pub fn new(model: Model, pairs: &[TrainingPair]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Invalid("training needs at least one pair".into()));
        }
        let cfg = &model.config;
        let (h, w) = model.size();
        let coarsest = h.min(w) >> (SCALES - 1);
        if cfg.loss.weights.gan != 0.0 && coarsest < MIN_SIDE {
            return Err(Error::dim(
                "trainer",
                format!(
                    "adversarial loss needs the coarsest prediction to be at least {MIN_SIDE}x{MIN_SIDE}; \
                     {h}x{w} inputs give {coarsest}x{coarsest}"
                ),
            ));
        }
        let frozen = !cfg.backbone.trainable;
        let samples = pairs
            .iter()
            .map(|p| {
                let t_in = target_input(&p.target)?;
                let r_in = reference_input(&p.reference);
                let pyramids = if frozen {
                    Some((model.backbone.forward(&t_in)?, model.backbone.forward(&r_in)?))
                } else {
                    None
                };
                Ok(Sample {
                    t_in,
                    r_in,
                    pyramids,
                    targets: scale_targets(&p.target, &p.reference, SCALES)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let tc = &cfg.train;
        Ok(Trainer {
            opt_g: AdamState::new(model.net.store(), tc),
            opt_d: AdamState::new(model.disc.store(), tc),
            opt_b: (!frozen).then(|| AdamState::new(model.backbone.store(), tc)),
            order: (0..samples.len()).collect(),
            cursor: samples.len(),
            rng: ChaCha8Rng::seed_from_u64(tc.seed),
            samples,
            model,
            step: 0,
            diagnostics: None,
        })
    }

    /// Directory for the dump written when a loss turns non-finite.
    pub fn set_diagnostics(&mut self, dir: impl Into<PathBuf>) {
        self.diagnostics = Some(dir.into());
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let n = self.model.config.train.batch;
        (0..n)
            .map(|_| {
                if self.cursor == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }

    fn forward(&self, s: &Sample) -> Result<Forward> {
        let mut g = Graph::new();
        let net = self.model.net.store().bind(&mut g);
        let (t, r, backbone) = match &s.pyramids {
            Some((pt, pr)) => (PyramidVars::constant(&mut g, pt), PyramidVars::constant(&mut g, pr), None),
            None => {
                let bb = self.model.backbone.store().bind(&mut g);
                let ti = g.constant(s.t_in.clone());
                let ri = g.constant(s.r_in.clone());
                let t = self.model.backbone.forward_graph(&mut g, &bb, ti)?;
                let r = self.model.backbone.forward_graph(&mut g, &bb, ri)?;
                (t, r, Some(bb))
            }
        };
        let preds = self.model.net.forward_graph(&mut g, &net, &t, &r)?;
        Ok(Forward { g, net, backbone, preds })
    }

    /// Discriminator update on detached predictions; returns per-scale `L_D`
    /// averaged over the batch.
    fn disc_step(&mut self, batch: &[usize], fwd: &[Forward]) -> Result<Vec<f64>> {
        let disc = &self.model.disc;
        let results = batch
            .par_iter()
            .zip(fwd)
            .map(|(&i, f)| -> Result<(Vec<f64>, Vec<Tensor>)> {
                let s = &self.samples[i];
                let mut g = Graph::new();
                let b = disc.store().bind(&mut g);
                let mut total: Option<Var> = None;
                let mut per_scale = Vec::with_capacity(SCALES);
                for (l, (t, &p)) in s.targets.iter().zip(&f.preds).enumerate() {
                    let gt = g.constant(t.ab.clone());
                    let real_in = disc_input(&mut g, &t.l, gt)?;
                    let fake_ab = g.constant(f.g.value(p).clone());
                    let fake_in = disc_input(&mut g, &t.l, fake_ab)?;
                    let real = disc.forward(&mut g, &b, l + 1, real_in)?;
                    let fake = disc.forward(&mut g, &b, l + 1, fake_in)?;
                    let ld = lsgan_disc(&mut g, real, fake)?;
                    per_scale.push(g.value(ld).item());
                    total = Some(match total {
                        Some(acc) => g.add(acc, ld)?,
                        None => ld,
                    });
                }
                let total = total.expect("four scales");
                g.backward(total)?;
                Ok((per_scale, disc.store().grads(&g, &b)))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = results.len() as f64;
        let mut mean = vec![0.0; SCALES];
        let mut grads = Vec::with_capacity(results.len());
        for (ld, gs) in results {
            mean.iter_mut().zip(&ld).for_each(|(m, v)| *m += v / n);
            grads.push(gs);
        }
        if let Some(l) = mean.iter().position(|v| !v.is_finite()) {
            return Err(self.non_finite(&format!("discriminator loss at scale {}", l + 1)));
        }
        let grads = mean_grads(grads);
        adam_step(self.model.disc.store_mut(), &grads, &mut self.opt_d)?;
        Ok(mean)
    }

    fn non_finite(&self, what: &str) -> Error {
        if let Some(dir) = &self.diagnostics {
            let mut report = format!("non-finite {what} at step {}\n", self.step + 1);
            for store in [self.model.net.store(), self.model.disc.store()] {
                for id in store.ids() {
                    let t = store.get(id);
                    let _ = writeln!(
                        report,
                        "{}\tmax_abs={:e}\tfinite={}",
                        store.name(id),
                        t.max_abs(),
                        t.all_finite()
                    );
                }
            }
            let _ = std::fs::create_dir_all(dir);
            let _ = std::fs::write(dir.join("diagnostic.txt"), report);
            let _ = checkpoint::save(dir.join("weights"), &self.model);
            log::error!("non-finite {what}; diagnostics written to {}", dir.display());
        }
        Error::NonFinite {
            what: what.to_string(),
            step: self.step + 1,
        }
    }

    /// One discriminator update (skipped when the adversarial weight is
    /// zero) followed by one generator update.
    pub fn step(&mut self) -> Result<StepRecord> {
        let batch = self.next_batch();
        let gan = self.model.config.loss.weights.gan != 0.0;
        let mut fwd = batch
            .par_iter()
            .map(|&i| self.forward(&self.samples[i]))
            .collect::<Result<Vec<_>>>()?;
        let disc_losses = if gan { Some(self.disc_step(&batch, &fwd)?) } else { None };

        let loss_cfg = self.model.config.loss.clone();
        let model = &self.model;
        let samples = &self.samples;
        let results = batch
            .par_iter()
            .zip(fwd.par_iter_mut())
            .map(|(&i, f)| -> Result<(Vec<ScaleLosses>, f64, Vec<Tensor>, Option<Vec<Tensor>>)> {
                let g = &mut f.g;
                let disc_b = gan.then(|| model.disc.store().bind_frozen(g));
                let disc = disc_b.as_ref().map(|b| (&model.disc, b));
                let (total, values) = generator_objective(g, &f.preds, &samples[i].targets, disc, &loss_cfg)?;
                let tv = g.value(total).item();
                g.backward(total)?;
                let grads = model.net.store().grads(g, &f.net);
                let bgrads = f.backbone.as_ref().map(|b| model.backbone.store().grads(g, b));
                Ok((values, tv, grads, bgrads))
            })
            .collect::<Result<Vec<_>>>()?;
        drop(fwd);

        let n = results.len() as f64;
        let mut scales = vec![ScaleLosses::default(); SCALES];
        let mut grads = Vec::with_capacity(results.len());
        let mut bgrads = Vec::new();
        for (values, total, gs, bgs) in results {
            if !total.is_finite() {
                return Err(self.non_finite("generator loss"));
            }
            for (acc, v) in scales.iter_mut().zip(&values) {
                acc.pixel += v.pixel / n;
                acc.hist += v.hist / n;
                acc.tv += v.tv / n;
                acc.gen += v.gen / n;
            }
            grads.push(gs);
            bgrads.extend(bgs);
        }
        if let Some(ld) = &disc_losses {
            scales.iter_mut().zip(ld).for_each(|(s, v)| s.disc = *v);
        }
        let grads = mean_grads(grads);
        if grads.iter().any(|g| !g.all_finite()) {
            return Err(self.non_finite("generator gradient"));
        }
        adam_step(self.model.net.store_mut(), &grads, &mut self.opt_g)?;
        if let Some(opt) = &mut self.opt_b {
            let bg = mean_grads(bgrads);
            adam_step(self.model.backbone.store_mut(), &bg, opt)?;
        }
        self.step += 1;
        Ok(StepRecord {
            step: self.step,
            breakdown: total_loss(&scales, &self.model.config.loss.weights),
        })
    }
}

pub const LOG_HEADER: &str = "step,scale,pixel,hist,tv,gen,disc,total";

/// CSV rows for one step, one per scale; `total` is that scale's weighted
/// contribution.
pub fn log_rows(r: &StepRecord, cfg: &Config) -> String {
    let w = &cfg.loss.weights;
    let mut s = String::new();
    for (l, v) in r.breakdown.scales.iter().enumerate() {
        let total = total_loss(std::slice::from_ref(v), w).total;
        let _ = writeln!(
            s,
            "{},{},{:e},{:e},{:e},{:e},{:e},{:e}",
            r.step,
            l + 1,
            v.pixel,
            v.hist,
            v.tv,
            v.gen,
            v.disc,
            total
        );
    }
    s
}

pub struct TrainReport {
    pub model: Model,
    pub history: Vec<StepRecord>,
}

/// Train for `config.train.steps` steps. With `out`, writes
/// `out/loss_log.csv` as training runs and the final checkpoint to
/// `out/checkpoint`; a non-finite loss leaves a dump in `out/diagnostic`.
pub fn train_loop(pairs: &[TrainingPair], config: &Config, out: Option<&Path>) -> Result<TrainReport> {
    let (h, w) = (pairs[0].target.height(), pairs[0].target.width());
    for p in pairs {
        for img in [&p.target, &p.reference] {
            if (img.height(), img.width()) != (h, w) {
                return Err(Error::dim(
                    "train_loop",
                    format!("pair {} is {}x{}, expected {h}x{w}", p.id, img.height(), img.width()),
                ));
            }
        }
    }
    let model = Model::new(config, h, w)?;
    let mut trainer = Trainer::new(model, pairs)?;
    let mut log = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            trainer.set_diagnostics(dir.join("diagnostic"));
            let mut f = BufWriter::new(File::create(dir.join("loss_log.csv"))?);
            writeln!(f, "{LOG_HEADER}")?;
            Some(f)
        }
        None => None,
    };
    let mut history = Vec::with_capacity(config.train.steps);
    for _ in 0..config.train.steps {
        let r = trainer.step()?;
        if let Some(f) = &mut log {
            f.write_all(log_rows(&r, config).as_bytes())?;
        }
        if r.step % 50 == 0 {
            log::info!("step {} total {:.5} pixel {:.5}", r.step, r.breakdown.total, r.pixel());
        }
        history.push(r);
    }
    if let Some(mut f) = log {
        f.flush()?;
    }
    if let Some(dir) = out {
        checkpoint::save(dir.join("checkpoint"), &trainer.model)?;
    }
    Ok(TrainReport {
        model: trainer.model,
        history,
    })
}

/// Mean of `f` over a window of records.
pub fn moving_average(h: &[StepRecord], f: impl Fn(&StepRecord) -> f64) -> f64 {
    h.iter().map(f).sum::<f64>() / h.len() as f64
}
