//! Evaluation metrics: histogram intersection against the reference and
//! SSIM against the ground truth.

use crate::autodiff::kernels::{HIST_BINS, HIST_SIDE};
use crate::colorspace::{lab_to_rgb, rgb_to_gray, LabImage};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Nearest-node bin of a normalised value on the 21-node grid.
pub fn hard_bin(v: f64) -> usize {
    (((v.clamp(-1.0, 1.0) + 1.0) * 10.0).round() as usize).min(HIST_SIDE - 1)
}

/// Normalised hard histogram of `[2, H, W]` ab values, indexed
/// `a_bin * 21 + b_bin`.
pub fn hard_histogram(ab: &Tensor) -> Result<Vec<f64>> {
    let (c, h, w) = ab.chw()?;
    if c != 2 {
        return Err(Error::dim("hard_histogram", format!("expected 2 channels, got {c}")));
    }
    let n = h * w;
    let mut hist = vec![0.0; HIST_BINS];
    if n == 0 {
        return Ok(hist);
    }
    let (a, b) = ab.data().split_at(n);
    for (&x, &y) in a.iter().zip(b) {
        hist[hard_bin(x) * HIST_SIDE + hard_bin(y)] += 1.0;
    }
    let mass = 1.0 / n as f64;
    hist.iter_mut().for_each(|v| *v *= mass);
    Ok(hist)
}

pub fn histogram_intersection(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a.min(*b)).sum()
}

/// Histogram intersection similarity of the ab distributions.
pub fn his_score(pred: &LabImage, reference: &LabImage) -> Result<f64> {
    Ok(histogram_intersection(&hard_histogram(pred.ab())?, &hard_histogram(reference.ab())?))
}

pub const SSIM_WIN: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_1d() -> [f64; SSIM_WIN] {
    let r = (SSIM_WIN / 2) as f64;
    let mut g: [f64; SSIM_WIN] = std::array::from_fn(|i| {
        let x = i as f64 - r;
        (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable Gaussian filter over valid positions only.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64; SSIM_WIN]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WIN, w + 1 - SSIM_WIN);
    let mut tmp = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            tmp[i * ow + j] = k.iter().zip(&x[i * w + j..]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = k.iter().enumerate().map(|(t, a)| a * tmp[(i + t) * ow + j]).sum();
        }
    }
    out
}

/// Mean SSIM of two `[1, H, W]` images with values in `[0, 1]`, 11x11
/// Gaussian window (sigma 1.5), over windows fully inside the image.
pub fn ssim_score(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (ca, h, w) = a.chw()?;
    if ca != 1 || a.shape() != b.shape() {
        return Err(Error::dim(
            "ssim",
            format!("expected matching [1, H, W] images, got {:?} and {:?}", a.shape(), b.shape()),
        ));
    }
    if h < SSIM_WIN || w < SSIM_WIN {
        return Err(Error::dim("ssim", format!("image {h}x{w} is smaller than the {SSIM_WIN}x{SSIM_WIN} window")));
    }
    let k = gaussian_1d();
    let (x, y) = (a.data(), b.data());
    let prod = |f: &dyn Fn(usize) -> f64| (0..x.len()).map(f).collect::<Vec<_>>();
    let mx = filter_valid(x, h, w, &k);
    let my = filter_valid(y, h, w, &k);
    let mxx = filter_valid(&prod(&|i| x[i] * x[i]), h, w, &k);
    let myy = filter_valid(&prod(&|i| y[i] * y[i]), h, w, &k);
    let mxy = filter_valid(&prod(&|i| x[i] * y[i]), h, w, &k);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cov = mxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// SSIM between luminance renderings of a prediction and the ground truth.
pub fn ssim_lab(pred: &LabImage, target: &LabImage) -> Result<f64> {
    ssim_score(&rgb_to_gray(&lab_to_rgb(pred))?, &rgb_to_gray(&lab_to_rgb(target))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab_const(a: f64, b: f64, n: usize) -> LabImage {
        let mut ab = vec![a; n * n];
        ab.extend(std::iter::repeat(b).take(n * n));
        LabImage::new(Tensor::zeros(&[1, n, n]), Tensor::new(&[2, n, n], ab).unwrap()).unwrap()
    }

    #[test]
    fn his_extremes() {
        let x = ab_const(0.3, -0.2, 4);
        assert_eq!(his_score(&x, &x).unwrap(), 1.0);
        assert_eq!(his_score(&x, &ab_const(-0.3, 0.2, 4)).unwrap(), 0.0);
    }

    #[test]
    fn his_half_shared() {
        // Left half on one bin, right half on another; compare with uniform first bin.
        let mut a = vec![0.0; 8];
        a[4..].fill(0.5);
        let p = LabImage::new(Tensor::zeros(&[1, 2, 4]), Tensor::new(&[2, 2, 4], [a, vec![0.0; 8]].concat()).unwrap()).unwrap();
        assert!((his_score(&p, &ab_const(0.0, 0.0, 2)).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ssim_identity_and_negative() {
        let x = Tensor::from_fn(&[1, 16, 16], |i| ((i * 37) % 17) as f64 / 16.0);
        assert!((ssim_score(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let neg = x.map(|v| 1.0 - v);
        assert!(ssim_score(&x, &neg).unwrap() < 0.0);
        assert!(ssim_score(&Tensor::zeros(&[1, 10, 16]), &Tensor::zeros(&[1, 10, 16])).is_err());
    }

    #[test]
    fn gaussian_window_is_normalised() {
        let g = gaussian_1d();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(g[0], g[10]);
    }
}
