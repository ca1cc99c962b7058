//! Training losses against closed forms and independent loops.

use axsty_core::autodiff::gradcheck::{grad_check, GradCheckConfig};
use axsty_core::colorspace::LabImage;
use axsty_core::config::{LossConfig, LossWeights};
use axsty_core::losses::{
    histogram_loss, huber_loss, lsgan_losses, multiscale_ground_truth, total_loss, tv_loss, ScaleLosses, SoftHistogram,
};
use axsty_core::{Graph, Tensor};
use proptest::prelude::*;

const EPS: f64 = 1e-5;

fn ab_map(h: usize, w: usize, f: impl Fn(usize) -> f64) -> Tensor {
    Tensor::from_fn(&[2, h, w], f)
}

/// Bilinear splat written independently: each value lands on the two grid
/// nodes that bracket it per axis.
fn soft_hist_oracle(ab: &Tensor) -> Vec<f64> {
    let n = ab.numel() / 2;
    let mut h = vec![0.0; 441];
    let split = |v: f64| {
        let u = (v + 1.0) * 10.0;
        let lo = (u.floor() as usize).min(19);
        (lo, u - lo as f64)
    };
    for i in 0..n {
        let (ia, fa) = split(ab.data()[i]);
        let (ib, fb) = split(ab.data()[n + i]);
        for (da, wa) in [(0, 1.0 - fa), (1, fa)] {
            for (db, wb) in [(0, 1.0 - fb), (1, fb)] {
                h[(ia + da) * 21 + ib + db] += wa * wb / n as f64;
            }
        }
    }
    h
}

fn chi2_oracle(p: &[f64], r: &[f64]) -> f64 {
    2.0 * p.iter().zip(r).map(|(a, b)| (a - b) * (a - b) / (a + b + EPS)).sum::<f64>()
}

fn one_hot(bin: usize) -> SoftHistogram {
    SoftHistogram::from_bins(Tensor::from_fn(&[21, 21], |i| f64::from(u8::from(i == bin)))).unwrap()
}

#[test]
fn huber_closed_form() {
    let z = Tensor::zeros(&[1]);
    assert_eq!(huber_loss(&z, &z, 1.0).unwrap(), 0.0);
    assert!((huber_loss(&Tensor::full(&[1], 0.5), &z, 1.0).unwrap() - 0.125).abs() <= 1e-12);
    assert!((huber_loss(&Tensor::full(&[1], 2.0), &z, 1.0).unwrap() - 1.5).abs() <= 1e-12);
    assert!((huber_loss(&Tensor::full(&[1], -2.0), &z, 1.0).unwrap() - 1.5).abs() <= 1e-12);
    let p = Tensor::new(&[4], vec![0.5, 2.0, 0.0, -0.1]).unwrap();
    assert!((huber_loss(&p, &Tensor::zeros(&[4]), 1.0).unwrap() - (0.125 + 1.5 + 0.0 + 0.005) / 4.0).abs() <= 1e-12);
}

#[test]
fn histogram_on_grid_nodes_and_midpoints() {
    // (-1, 0.2) sits exactly on node (0, 12).
    let h = SoftHistogram::from_ab(&ab_map(3, 3, |i| if i < 9 { -1.0 } else { 0.2 })).unwrap();
    assert!((h.bins().data()[12] - 1.0).abs() < 1e-12);
    assert!((h.bins().sum() - 1.0).abs() < 1e-12);
    // a midway between nodes 10 and 11, b on node 10.
    let h = SoftHistogram::from_ab(&ab_map(1, 1, |i| if i == 0 { 0.05 } else { 0.0 })).unwrap();
    assert!((h.bins().data()[10 * 21 + 10] - 0.5).abs() < 1e-12);
    assert!((h.bins().data()[11 * 21 + 10] - 0.5).abs() < 1e-12);
}

#[test]
fn histogram_loss_cases() {
    let a = one_hot(3);
    let b = one_hot(200);
    assert_eq!(histogram_loss(&a, &a, EPS), 0.0);
    assert!((histogram_loss(&a, &b, EPS) - 4.0 / (1.0 + EPS)).abs() < 1e-12);
    assert!((histogram_loss(&a, &b, EPS) - 4.0).abs() < 1e-4);
}

#[test]
fn histogram_loss_gradient_through_binning() {
    // Keep every value at least 0.2 of a cell away from a grid node: a
    // near-empty bin makes `p² / (p + eps)` too curved for a 1e-5 step.
    let ab = ab_map(4, 4, |i| -0.95 + 0.1 * ((i * 7) % 19) as f64 + 0.06 * ((i as f64) * 0.73).sin());
    let reference = SoftHistogram::from_ab(&ab_map(4, 4, |i| ((i as f64) * 0.31).cos() * 0.8)).unwrap();
    let r = grad_check(
        |g, v| {
            let h = g.soft_histogram(v)?;
            let rv = g.constant(reference.bins().clone());
            g.chi2(h, rv, EPS)
        },
        &ab,
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(r.passed(), "{}", r.max_rel_err);
    let r = grad_check(
        |g, v| {
            let h = g.soft_histogram(v)?;
            let w = g.constant(Tensor::from_fn(&[21, 21], |i| (i as f64 * 0.17).sin()));
            let p = g.mul(h, w)?;
            Ok(g.sum(p))
        },
        &ab,
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-4);
}

#[test]
fn tv_cases() {
    assert_eq!(tv_loss(&Tensor::full(&[2, 4, 4], 0.3)).unwrap(), 0.0);
    let checker = ab_map(2, 2, |i| if (i % 2 + (i / 2) % 2) % 2 == 0 { 1.0 } else { -1.0 });
    assert!((tv_loss(&checker).unwrap() - 4.0).abs() < 1e-12);
}

fn smooth(x: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let p = g.avg_pool2x(v).unwrap();
    let u = g.upsample2x(p).unwrap();
    g.value(u).clone()
}

#[test]
fn lsgan_cases() {
    let one = Tensor::ones(&[1, 2, 2]);
    let zero = Tensor::zeros(&[1, 2, 2]);
    assert_eq!(lsgan_losses(&one, &zero), (0.0, 0.5));
    let half = Tensor::full(&[1, 2, 2], 0.5);
    let (d, g) = lsgan_losses(&half, &half);
    assert!((d - 0.25).abs() < 1e-15 && (g - 0.125).abs() < 1e-15);
}

#[test]
fn weighted_total_reproduces_hand_arithmetic() {
    let w = LossWeights::default();
    assert_eq!((w.pixel, w.hist, w.tv, w.gan), (100.0, 2.0, 50.0, 1.0));
    let s = ScaleLosses {
        pixel: 0.1,
        hist: 0.2,
        tv: 0.01,
        gen: 0.3,
        disc: 0.7,
    };
    assert!((total_loss(&[s], &w).total - 11.2).abs() < 1e-12);
    assert_eq!(total_loss(&[ScaleLosses::default(); 4], &w).total, 0.0);
    let c = LossConfig::default();
    assert_eq!(c.hist_eps, 1e-5);
    assert_eq!(c.huber_delta, 1.0);
}

#[test]
fn pixel_only_weights_give_scaled_pixel_sum() {
    let w = LossWeights {
        pixel: 100.0,
        hist: 0.0,
        tv: 0.0,
        gan: 0.0,
    };
    let scales: Vec<ScaleLosses> = (0..4)
        .map(|i| ScaleLosses {
            pixel: 0.01 * (i + 1) as f64,
            hist: 3.0,
            tv: 2.0,
            gen: 1.0,
            disc: 1.0,
        })
        .collect();
    let expect = scales.iter().fold(0.0, |acc, s| acc + 100.0 * s.pixel);
    assert_eq!(total_loss(&scales, &w).total, expect);
}

#[test]
fn multiscale_ground_truth_schedule() {
    let img = LabImage::new(Tensor::full(&[1, 224, 224], 0.2), Tensor::full(&[2, 224, 224], -0.4)).unwrap();
    let gt = multiscale_ground_truth(&img, 4).unwrap();
    let sizes: Vec<usize> = gt.iter().map(LabImage::height).collect();
    assert_eq!(sizes, vec![224, 112, 56, 28]);
    for s in &gt {
        assert!(s.l().data().iter().all(|&v| v == 0.2));
        assert!(s.ab().data().iter().all(|&v| v == -0.4));
    }
    let odd = LabImage::new(Tensor::zeros(&[1, 12, 12]), Tensor::zeros(&[2, 12, 12])).unwrap();
    assert!(multiscale_ground_truth(&odd, 4).is_err());
}

fn arb_ab(max: usize) -> impl Strategy<Value = Tensor> {
    (1usize..max, 1usize..max).prop_flat_map(|(h, w)| {
        prop::collection::vec(-1.0f64..=1.0, 2 * h * w).prop_map(move |v| Tensor::new(&[2, h, w], v).unwrap())
    })
}

proptest! {
    #[test]
    fn soft_histogram_matches_splat_oracle(ab in arb_ab(6)) {
        let h = SoftHistogram::from_ab(&ab).unwrap();
        let o = soft_hist_oracle(&ab);
        for (a, b) in h.bins().data().iter().zip(&o) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert!((h.bins().sum() - 1.0).abs() < 1e-6);
        prop_assert!(h.bins().data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn histogram_loss_is_symmetric_and_matches_loop(a in arb_ab(5), b in arb_ab(5)) {
        let (ha, hb) = (SoftHistogram::from_ab(&a).unwrap(), SoftHistogram::from_ab(&b).unwrap());
        let ab = histogram_loss(&ha, &hb, EPS);
        prop_assert_eq!(ab, histogram_loss(&hb, &ha, EPS));
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - chi2_oracle(ha.bins().data(), hb.bins().data())).abs() < 1e-12);
    }

    #[test]
    fn smoothing_never_increases_tv(v in prop::collection::vec(-1.0f64..1.0, 2 * 8 * 8)) {
        let x = Tensor::new(&[2, 8, 8], v).unwrap();
        prop_assert!(tv_loss(&smooth(&x)).unwrap() <= tv_loss(&x).unwrap() + 1e-12);
    }

    #[test]
    fn losses_are_non_negative(a in arb_ab(5), real in prop::collection::vec(-3.0f64..3.0, 4), fake in prop::collection::vec(-3.0f64..3.0, 4)) {
        let b = a.map(|v| -v);
        prop_assert!(huber_loss(&a, &b, 1.0).unwrap() >= 0.0);
        prop_assert!(tv_loss(&a).unwrap() >= 0.0);
        let (d, g) = lsgan_losses(&Tensor::new(&[1, 2, 2], real).unwrap(), &Tensor::new(&[1, 2, 2], fake).unwrap());
        prop_assert!(d >= 0.0 && g >= 0.0);
    }

    #[test]
    fn total_is_linear_in_each_weight(
        terms in prop::collection::vec((0.0f64..2.0, 0.0f64..2.0, 0.0f64..2.0, 0.0f64..2.0), 1..5),
        lambdas in (0.0f64..200.0, 0.0f64..10.0, 0.0f64..100.0, 0.0f64..5.0),
        which in 0usize..4,
        k in 0.0f64..4.0,
    ) {
        let scales: Vec<ScaleLosses> = terms.iter().map(|&(pixel, hist, tv, gen)| ScaleLosses { pixel, hist, tv, gen, disc: 0.0 }).collect();
        let base = LossWeights { pixel: lambdas.0, hist: lambdas.1, tv: lambdas.2, gan: lambdas.3 };
        let mut only = LossWeights { pixel: 0.0, hist: 0.0, tv: 0.0, gan: 0.0 };
        let mut scaled = base;
        match which {
            0 => { only.pixel = 1.0; scaled.pixel *= k }
            1 => { only.hist = 1.0; scaled.hist *= k }
            2 => { only.tv = 1.0; scaled.tv *= k }
            _ => { only.gan = 1.0; scaled.gan *= k }
        }
        let lam = [base.pixel, base.hist, base.tv, base.gan][which];
        let term = total_loss(&scales, &only).total;
        let lhs = total_loss(&scales, &scaled).total;
        let rhs = total_loss(&scales, &base).total + (k - 1.0) * lam * term;
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }
}
