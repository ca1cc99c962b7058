//! Central finite-difference gradient checker.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::graph::{GradFault, Graph, Var};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tol: f64,
    /// Floor on the relative-error denominator so gradients that are zero up
    /// to rounding are compared absolutely.
    pub atol: f64,
    /// Check at most this many coordinates per input, sampled with `seed`.
    pub max_points: Option<usize>,
    /// Check this fraction of each input's coordinates (at least one).
    pub fraction: Option<f64>,
    pub seed: u64,
    pub fault: Option<GradFault>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tol: 1e-3,
            atol: 1e-7,
            max_points: None,
            fraction: None,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointCheck {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub points: Vec<PointCheck>,
    /// `(input, index)` coordinates whose probe straddled a kink.
    pub excluded: Vec<(usize, usize)>,
    /// `(input, index)` coordinates where a value or gradient was non-finite.
    pub non_finite: Vec<(usize, usize)>,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.non_finite.is_empty() && self.max_rel_err < self.tol
    }

    pub fn worst(&self) -> Option<&PointCheck> {
        self.points
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

pub fn rel_err(a: f64, n: f64, atol: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(atol)
}

/// Check `f` (scalar-valued) against central differences in every input.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor], grads: bool| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = match (grads, cfg.fault) {
            (true, Some(fault)) => Graph::with_fault(fault),
            _ => Graph::new(),
        };
        g.track_kinks(true);
        let vars: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone(), true)).collect();
        let loss = f(&mut g, &vars)?;
        if !g.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(g.shape(loss).to_vec()));
        }
        Ok((g, vars, loss))
    };

    let (mut g, vars, loss) = eval(inputs, true)?;
    let base_sig = g.kink_signature();
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, x)| g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
        .collect();
    drop(g);

    let mut report = GradCheckReport {
        tol: cfg.tol,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut probe = inputs.to_vec();
    for (which, x) in inputs.iter().enumerate() {
        let budget = match (cfg.max_points, cfg.fraction) {
            (m, Some(f)) => {
                let n = ((x.numel() as f64 * f).ceil() as usize).max(1);
                Some(m.map_or(n, |m| m.min(n)))
            }
            (m, None) => m,
        };
        let indices: Vec<usize> = match budget {
            Some(m) if m < x.numel() => {
                let mut s = sample(&mut rng, x.numel(), m).into_vec();
                s.sort_unstable();
                s
            }
            _ => (0..x.numel()).collect(),
        };
        for idx in indices {
            let orig = x.data()[idx];
            let mut side = |delta: f64| -> Result<(f64, u64)> {
                probe[which].data_mut()[idx] = orig + delta;
                let (g, _, l) = eval(&probe, false)?;
                Ok((g.value(l).item(), g.kink_signature()))
            };
            let (fp, sp) = side(cfg.step)?;
            let (fm, sm) = side(-cfg.step)?;
            probe[which].data_mut()[idx] = orig;
            let a = analytic[which].data()[idx];
            let n = (fp - fm) / (2.0 * cfg.step);
            if !(a.is_finite() && n.is_finite()) {
                report.non_finite.push((which, idx));
                continue;
            }
            if sp != base_sig || sm != base_sig {
                report.excluded.push((which, idx));
                continue;
            }
            let e = rel_err(a, n, cfg.atol);
            report.max_rel_err = report.max_rel_err.max(e);
            report.points.push(PointCheck {
                input: which,
                index: idx,
                analytic: a,
                numeric: n,
                rel_err: e,
            });
        }
    }
    Ok(report)
}

pub fn grad_check<F>(f: F, x: &Tensor, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    grad_check_many(|g, v| f(g, v[0]), std::slice::from_ref(x), cfg)
}
