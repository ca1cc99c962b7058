//! sRGB (D65) to normalised CIE Lab and back.
//!
//! Normalisation maps `L ∈ [0, 100]` to `L / 50 - 1` and divides `a`, `b` by
//! [`AB_SCALE`], clamping every channel to `[-1, 1]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Divisor applied to raw `a`, `b`; covers the sRGB gamut (about -86..98 for
/// `a`, -108..95 for `b`) with margin.
pub const AB_SCALE: f64 = 110.0;

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

/// Exact inverse of [`SRGB_TO_XYZ`], so white maps back to white.
fn xyz_to_srgb() -> [[f64; 3]; 3] {
    let m = SRGB_TO_XYZ;
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let det = m[0][0] * cof(1, 2, 1, 2) - m[0][1] * cof(1, 2, 0, 2) + m[0][2] * cof(1, 2, 0, 1);
    [
        [cof(1, 2, 1, 2) / det, -cof(0, 2, 1, 2) / det, cof(0, 1, 1, 2) / det],
        [-cof(1, 2, 0, 2) / det, cof(0, 2, 0, 2) / det, -cof(0, 1, 0, 2) / det],
        [cof(1, 2, 0, 1) / det, -cof(0, 2, 0, 1) / det, cof(0, 1, 0, 1) / det],
    ]
}

/// D65 white as the image of sRGB white, so the grey axis lands on `a = b = 0`.
fn white() -> [f64; 3] {
    SRGB_TO_XYZ.map(|r| r[0] + r[1] + r[2])
}

const DELTA: f64 = 6.0 / 29.0;

fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

/// One sRGB pixel in `[0, 1]` to raw Lab (`L ∈ [0, 100]`).
pub fn srgb_pixel_to_lab([r, g, b]: [f64; 3]) -> [f64; 3] {
    let lin = [srgb_to_linear(r), srgb_to_linear(g), srgb_to_linear(b)];
    let wp = white();
    let xyz: Vec<f64> = SRGB_TO_XYZ
        .iter()
        .map(|row| row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2])
        .collect();
    let fx = lab_f(xyz[0] / wp[0]);
    let fy = lab_f(xyz[1] / wp[1]);
    let fz = lab_f(xyz[2] / wp[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Raw Lab to sRGB in `[0, 1]` (clamped).
pub fn lab_pixel_to_srgb([l, a, b]: [f64; 3]) -> [f64; 3] {
    let wp = white();
    let fy = (l + 16.0) / 116.0;
    let fx = fy + a / 500.0;
    let fz = fy - b / 200.0;
    let xyz = [wp[0] * lab_f_inv(fx), wp[1] * lab_f_inv(fy), wp[2] * lab_f_inv(fz)];
    xyz_to_srgb().map(|row| {
        let lin = row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2];
        linear_to_srgb(lin.max(0.0)).clamp(0.0, 1.0)
    })
}

/// Image in normalised Lab: luminance `[1, H, W]` and chrominance `[2, H, W]`,
/// all values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabImage {
    l: Tensor,
    ab: Tensor,
}

impl LabImage {
    pub fn new(l: Tensor, ab: Tensor) -> Result<Self> {
        let (cl, h, w) = l.chw()?;
        let (cab, h2, w2) = ab.chw()?;
        if cl != 1 || cab != 2 || (h, w) != (h2, w2) {
            return Err(Error::dim(
                "lab_image",
                format!("L {:?} and ab {:?} do not form an image", l.shape(), ab.shape()),
            ));
        }
        let in_range = |t: &Tensor| t.data().iter().all(|v| (-1.0..=1.0).contains(v));
        if !in_range(&l) || !in_range(&ab) {
            return Err(Error::Invalid("Lab channels must lie in [-1, 1]".into()));
        }
        Ok(LabImage { l, ab })
    }

    /// From a stacked `[3, H, W]` normalised Lab tensor.
    pub fn from_stacked(lab: &Tensor) -> Result<Self> {
        let (c, h, w) = lab.chw()?;
        if c != 3 {
            return Err(Error::dim("lab_image", format!("expected 3 channels, got {c}")));
        }
        let n = h * w;
        LabImage::new(
            Tensor::new(&[1, h, w], lab.data()[..n].to_vec())?,
            Tensor::new(&[2, h, w], lab.data()[n..].to_vec())?,
        )
    }

    pub fn l(&self) -> &Tensor {
        &self.l
    }

    pub fn ab(&self) -> &Tensor {
        &self.ab
    }

    pub fn height(&self) -> usize {
        self.l.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.l.shape()[2]
    }

    /// `[3, H, W]` tensor of `(L, a, b)`.
    pub fn stacked(&self) -> Tensor {
        Tensor::cat_channels(&[&self.l, &self.ab]).expect("shapes validated on construction")
    }

    /// Same luminance with different chrominance (values clamped to `[-1, 1]`).
    pub fn with_ab(&self, ab: &Tensor) -> Result<Self> {
        LabImage::new(self.l.clone(), ab.map(|v| v.clamp(-1.0, 1.0)))
    }
}

/// `[3, H, W]` sRGB in `[0, 1]` to normalised Lab. Out-of-range inputs are
/// clamped with a warning.
pub fn rgb_to_lab(rgb: &Tensor) -> Result<LabImage> {
    let (c, h, w) = rgb.chw()?;
    if c != 3 {
        return Err(Error::dim("rgb_to_lab", format!("expected 3 channels, got {c}")));
    }
    let n = h * w;
    let d = rgb.data();
    if d.iter().any(|v| !(0.0..=1.0).contains(v)) {
        log::warn!("rgb_to_lab: input outside [0, 1] clamped");
    }
    let mut l = vec![0.0; n];
    let mut ab = vec![0.0; 2 * n];
    for i in 0..n {
        let px = [d[i], d[n + i], d[2 * n + i]].map(|v| v.clamp(0.0, 1.0));
        let [ll, a, b] = srgb_pixel_to_lab(px);
        l[i] = (ll / 50.0 - 1.0).clamp(-1.0, 1.0);
        ab[i] = (a / AB_SCALE).clamp(-1.0, 1.0);
        ab[n + i] = (b / AB_SCALE).clamp(-1.0, 1.0);
    }
    LabImage::new(Tensor::new(&[1, h, w], l)?, Tensor::new(&[2, h, w], ab)?)
}

/// Normalised Lab back to `[3, H, W]` sRGB, clamped to `[0, 1]`.
pub fn lab_to_rgb(img: &LabImage) -> Tensor {
    let (h, w) = (img.height(), img.width());
    let n = h * w;
    let (l, ab) = (img.l.data(), img.ab.data());
    let mut out = vec![0.0; 3 * n];
    for i in 0..n {
        let lab = [(l[i] + 1.0) * 50.0, ab[i] * AB_SCALE, ab[n + i] * AB_SCALE];
        let rgb = lab_pixel_to_srgb(lab);
        out[i] = rgb[0];
        out[n + i] = rgb[1];
        out[2 * n + i] = rgb[2];
    }
    Tensor::new(&[3, h, w], out).expect("sized above")
}

/// Repeat a `[1, H, W]` luminance map into three identical channels.
pub fn replicate_luma(l: &Tensor) -> Result<Tensor> {
    let (c, _, _) = l.chw()?;
    if c != 1 {
        return Err(Error::dim("replicate_luma", format!("expected 1 channel, got {c}")));
    }
    Tensor::cat_channels(&[l, l, l])
}

/// Rec. 601 luma of a `[3, H, W]` sRGB image, as `[1, H, W]`.
pub fn rgb_to_gray(rgb: &Tensor) -> Result<Tensor> {
    let (c, h, w) = rgb.chw()?;
    if c != 3 {
        return Err(Error::dim("rgb_to_gray", format!("expected 3 channels, got {c}")));
    }
    let n = h * w;
    let d = rgb.data();
    Tensor::new(
        &[1, h, w],
        (0..n)
            .map(|i| 0.299 * d[i] + 0.587 * d[n + i] + 0.114 * d[2 * n + i])
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn px(r: f64, g: f64, b: f64) -> Tensor {
        Tensor::new(&[3, 1, 1], vec![r, g, b]).unwrap()
    }

    #[test]
    fn white_and_black_hit_the_range_ends() {
        let w = rgb_to_lab(&px(1.0, 1.0, 1.0)).unwrap();
        assert!((w.l().item() - 1.0).abs() < 1e-12);
        assert!(w.ab().max_abs() < 1e-10);
        let b = rgb_to_lab(&px(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(b.l().item(), -1.0);
        assert!(b.ab().max_abs() < 1e-12);
    }

    #[test]
    fn mid_grey_lightness() {
        // Reference evaluation: ((0.555/1.055)^2.4)^(1/3) * 116 - 16.
        let expected = 116.0 * ((0.555f64 / 1.055).powf(2.4)).cbrt() - 16.0;
        assert!((expected - 53.39).abs() < 0.01);
        let [l, a, b] = srgb_pixel_to_lab([0.5; 3]);
        assert!((l - expected).abs() < 1e-9);
        assert!(a.abs() < 1e-10 && b.abs() < 1e-10);
    }

    #[test]
    fn grey_axis_has_zero_chroma() {
        for i in 0..=255 {
            let v = i as f64 / 255.0;
            let [_, a, b] = srgb_pixel_to_lab([v; 3]);
            assert!(a.abs() < 1e-10 && b.abs() < 1e-10, "grey {i}: a={a} b={b}");
        }
    }

    #[test]
    fn extremes_render_white_and_black() {
        let n = |l: f64| LabImage::new(Tensor::full(&[1, 1, 1], l), Tensor::zeros(&[2, 1, 1])).unwrap();
        let white = lab_to_rgb(&n(1.0));
        assert!(white.data().iter().all(|&v| (v - 1.0).abs() < 1e-9));
        let black = lab_to_rgb(&n(-1.0));
        assert!(black.data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn round_trip_within_one_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rgb = Tensor::uniform(&[3, 10, 100], 0.0, 1.0, &mut rng);
        let back = lab_to_rgb(&rgb_to_lab(&rgb).unwrap());
        assert!(back.max_abs_diff(&rgb) <= 1.0 / 255.0);
    }

    #[test]
    fn srgb_gamut_fits_ab_scale() {
        for &r in &[0.0, 1.0] {
            for &g in &[0.0, 1.0] {
                for &b in &[0.0, 1.0] {
                    let [_, a, bb] = srgb_pixel_to_lab([r, g, b]);
                    assert!(a.abs() < AB_SCALE && bb.abs() < AB_SCALE);
                }
            }
        }
    }

    #[test]
    fn out_of_range_input_is_clamped() {
        let lab = rgb_to_lab(&px(1.5, -0.2, 0.5)).unwrap();
        let same = rgb_to_lab(&px(1.0, 0.0, 0.5)).unwrap();
        assert_eq!(lab, same);
    }

    #[test]
    fn replicate_luma_copies_channel() {
        let l = Tensor::from_fn(&[1, 4, 4], |i| i as f64 / 16.0);
        let r = replicate_luma(&l).unwrap();
        assert_eq!(r.shape(), &[3, 4, 4]);
        for c in 0..3 {
            assert_eq!(r.channel(c).unwrap(), l);
        }
    }
}
