//! Wall-clock scaling of the attention core (score + mix) against the span.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::flops::attention_flop_count;
use crate::attention::kernel::{self, AttnInputs, AttnShape};
use crate::config::AttentionMode;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct BenchSettings {
    pub height: usize,
    pub width: usize,
    pub hidden: usize,
    pub heads: usize,
    pub min_reps: usize,
    pub max_reps: usize,
    /// Keep repeating until this much time has been spent (bounded by
    /// `max_reps`).
    pub min_total_ms: f64,
    pub seed: u64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            height: 64,
            width: 64,
            hidden: 64,
            heads: 8,
            min_reps: 3,
            max_reps: 50,
            min_total_ms: 300.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchPoint {
    pub mode: AttentionMode,
    pub m: usize,
    pub flops: u64,
    pub wall_ms: f64,
}

pub fn mode_name(mode: AttentionMode) -> &'static str {
    match mode {
        AttentionMode::Axial => "axial",
        AttentionMode::Full => "full",
    }
}

/// Shape of one benchmark layer: a width-axis window of `m` for axial, an
/// `m x m` window for full.
pub fn bench_shape(mode: AttentionMode, m: usize, s: &BenchSettings) -> AttnShape {
    let (span_h, span_w) = match mode {
        AttentionMode::Axial => (1, m),
        AttentionMode::Full => (m, m),
    };
    AttnShape {
        height: s.height,
        width: s.width,
        channels: s.hidden,
        heads: s.heads,
        span_h,
        span_w,
    }
}

/// Minimum wall-clock milliseconds of a 32-bit forward pass.
pub fn time_attention(mode: AttentionMode, m: usize, s: &BenchSettings) -> Result<f64> {
    let shape = bench_shape(mode, m, s);
    shape.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut buf = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let n = shape.positions() * shape.channels;
    let t = shape.table_len() * shape.channels;
    let (q, k, v) = (buf(n), buf(n), buf(n));
    let (rq, rk, rv) = (buf(t), buf(t), buf(t));
    let x = AttnInputs {
        q: &q,
        k: &k,
        v: &v,
        rq: &rq,
        rk: &rk,
        rv: &rv,
    };
    let mut best = f64::INFINITY;
    let mut spent = 0.0;
    let mut reps = 0;
    while reps < s.min_reps || (spent < s.min_total_ms && reps < s.max_reps) {
        let t0 = Instant::now();
        let out = kernel::forward(&shape, &x, None)?;
        let ms = t0.elapsed().as_secs_f64() * 1e3;
        std::hint::black_box(out);
        best = best.min(ms);
        spent += ms;
        reps += 1;
    }
    Ok(best)
}

pub fn sweep(mode: AttentionMode, spans: &[usize], s: &BenchSettings) -> Result<Vec<BenchPoint>> {
    spans
        .iter()
        .map(|&m| {
            Ok(BenchPoint {
                mode,
                m,
                flops: attention_flop_count(s.height, s.width, m, s.hidden, mode).total(),
                wall_ms: time_attention(mode, m, s)?,
            })
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
        return Err(Error::Invalid("slope needs two or more positive points".into()));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

pub fn wall_slope(points: &[BenchPoint]) -> Result<f64> {
    loglog_slope(&points.iter().map(|p| (p.m as f64, p.wall_ms)).collect::<Vec<_>>())
}

pub const CSV_HEADER: &str = "mode,m,flops,wall_ms";

pub fn csv_row(p: &BenchPoint) -> String {
    format!("{},{},{},{:.4}", mode_name(p.mode), p.m, p.flops, p.wall_ms)
}
