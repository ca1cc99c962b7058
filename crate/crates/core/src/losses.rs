//! Training objectives: Huber pixel loss, soft-histogram chi-squared loss,
//! total variation, least-squares adversarial losses, and their weighted
//! multi-scale sum.

use crate::autodiff::kernels::{self, HIST_BINS, HIST_SIDE};
use crate::autodiff::{Graph, Var};
use crate::colorspace::LabImage;
use crate::config::{LossConfig, LossWeights};
use crate::discriminator::MultiScaleDiscriminator;
use crate::error::{Error, Result};
use crate::params::Bindings;
use crate::tensor::Tensor;

pub use kernels::{HIST_BINS as Q, HIST_SIDE as GRID};

pub fn huber_loss(pred: &Tensor, target: &Tensor, delta: f64) -> Result<f64> {
    kernels::huber_mean(pred, target, delta)
}

/// Bilinear soft histogram of `ab` values over a `21 x 21` grid on
/// `[-1, 1]²`, indexed `[a_bin, b_bin]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftHistogram(Tensor);

impl SoftHistogram {
    pub fn from_ab(ab: &Tensor) -> Result<Self> {
        Ok(SoftHistogram(kernels::soft_histogram(ab)?))
    }

    pub fn from_bins(bins: Tensor) -> Result<Self> {
        if bins.shape() != [HIST_SIDE, HIST_SIDE] {
            return Err(Error::dim("histogram", format!("expected [21, 21], got {:?}", bins.shape())));
        }
        Ok(SoftHistogram(bins))
    }

    pub fn bins(&self) -> &Tensor {
        &self.0
    }

    pub fn len(&self) -> usize {
        HIST_BINS
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Symmetric chi-squared distance `2 Σ (p - r)² / (p + r + eps)`.
pub fn histogram_loss(pred: &SoftHistogram, reference: &SoftHistogram, eps: f64) -> f64 {
    kernels::chi2(&pred.0, &reference.0, eps).expect("histograms share a shape")
}

pub fn tv_loss(ab: &Tensor) -> Result<f64> {
    kernels::tv_mean(ab)
}

/// `(L_D, L_G)` for patch maps of real and generated inputs.
pub fn lsgan_losses(real: &Tensor, fake: &Tensor) -> (f64, f64) {
    let mse = |t: &Tensor, c: f64| t.data().iter().map(|v| (v - c) * (v - c)).sum::<f64>() / t.numel() as f64;
    (0.5 * mse(real, 1.0) + 0.5 * mse(fake, 0.0), 0.5 * mse(fake, 1.0))
}

/// Graph form of `L_D`.
pub fn lsgan_disc(g: &mut Graph, real: Var, fake: Var) -> Result<Var> {
    let a = g.mse_const(real, 1.0);
    let b = g.mse_const(fake, 0.0);
    let s = g.add(a, b)?;
    Ok(g.scale(s, 0.5))
}

/// Graph form of `L_G`.
pub fn lsgan_gen(g: &mut Graph, fake: Var) -> Var {
    let a = g.mse_const(fake, 1.0);
    g.scale(a, 0.5)
}

fn pool_lab(img: &LabImage) -> Result<LabImage> {
    LabImage::new(kernels::avg_pool2x(img.l())?, kernels::avg_pool2x(img.ab())?)
}

/// The image and `scales - 1` successive 2x average-pooled copies.
pub fn multiscale_ground_truth(img: &LabImage, scales: usize) -> Result<Vec<LabImage>> {
    let div = 1usize << scales.saturating_sub(1);
    if img.height() % div != 0 || img.width() % div != 0 {
        return Err(Error::dim(
            "multiscale_ground_truth",
            format!("{}x{} is not divisible by {div}", img.height(), img.width()),
        ));
    }
    let mut out = vec![img.clone()];
    for _ in 1..scales {
        let next = pool_lab(out.last().unwrap())?;
        out.push(next);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ScaleLosses {
    pub pixel: f64,
    pub hist: f64,
    pub tv: f64,
    pub gen: f64,
    pub disc: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub scales: Vec<ScaleLosses>,
    pub total: f64,
}

/// Weighted sum over scales, accumulated term by term in the same order as
/// [`generator_objective`]. `disc` does not enter the generator total.
pub fn total_loss(scales: &[ScaleLosses], w: &LossWeights) -> LossBreakdown {
    let mut total = 0.0;
    for s in scales {
        for (lambda, v) in [(w.pixel, s.pixel), (w.hist, s.hist), (w.tv, s.tv), (w.gan, s.gen)] {
            total += lambda * v;
        }
    }
    LossBreakdown {
        scales: scales.to_vec(),
        total,
    }
}

/// Per-scale supervision: pooled target luminance and ab, and the pooled
/// reference histogram.
#[derive(Clone, Debug)]
pub struct ScaleTarget {
    pub l: Tensor,
    pub ab: Tensor,
    pub ref_hist: SoftHistogram,
}

/// Build the four scale targets for one training pair.
pub fn scale_targets(target: &LabImage, reference: &LabImage, scales: usize) -> Result<Vec<ScaleTarget>> {
    let t = multiscale_ground_truth(target, scales)?;
    let r = multiscale_ground_truth(reference, scales)?;
    t.iter()
        .zip(&r)
        .map(|(t, r)| {
            Ok(ScaleTarget {
                l: t.l().clone(),
                ab: t.ab().clone(),
                ref_hist: SoftHistogram::from_ab(r.ab())?,
            })
        })
        .collect()
}

/// Discriminator input: luminance stacked on ab.
pub fn disc_input(g: &mut Graph, l: &Tensor, ab: Var) -> Result<Var> {
    let lv = g.constant(l.clone());
    g.concat(lv, ab, 0)
}

/// Generator objective over all scales. When `disc` is given, the
/// adversarial term is evaluated through it; the discriminator's own
/// parameters should be bound as constants. Returns the scalar total and
/// the unweighted terms (with `disc` left at zero).
pub fn generator_objective(
    g: &mut Graph,
    preds: &[Var],
    targets: &[ScaleTarget],
    disc: Option<(&MultiScaleDiscriminator, &Bindings)>,
    cfg: &LossConfig,
) -> Result<(Var, Vec<ScaleLosses>)> {
    if preds.len() != targets.len() {
        return Err(Error::dim(
            "total_loss",
            format!("{} predictions for {} targets", preds.len(), targets.len()),
        ));
    }
    let w = &cfg.weights;
    let mut total: Option<Var> = None;
    let mut values = Vec::with_capacity(preds.len());
    for (l, (&p, t)) in preds.iter().zip(targets).enumerate() {
        let gt = g.constant(t.ab.clone());
        let pixel = g.huber(p, gt, cfg.huber_delta)?;
        let hp = g.soft_histogram(p)?;
        let hr = g.constant(t.ref_hist.bins().clone());
        let hist = g.chi2(hp, hr, cfg.hist_eps)?;
        let tv = g.tv(p)?;
        let gen = match disc {
            Some((d, b)) => {
                let x = disc_input(g, &t.l, p)?;
                let fake = d.forward(g, b, l + 1, x)?;
                Some(lsgan_gen(g, fake))
            }
            None => None,
        };
        values.push(ScaleLosses {
            pixel: g.value(pixel).item(),
            hist: g.value(hist).item(),
            tv: g.value(tv).item(),
            gen: gen.map_or(0.0, |v| g.value(v).item()),
            disc: 0.0,
        });
        let terms = [(w.pixel, Some(pixel)), (w.hist, Some(hist)), (w.tv, Some(tv)), (w.gan, gen)];
        for (lambda, term) in terms {
            let Some(term) = term else { continue };
            let scaled = g.scale(term, lambda);
            total = Some(match total {
                Some(acc) => g.add(acc, scaled)?,
                None => scaled,
            });
        }
    }
    let total = total.ok_or_else(|| Error::Invalid("no scales".into()))?;
    Ok((total, values))
}
