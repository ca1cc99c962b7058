//! Binary PPM (P6) image I/O; PNG input with the `png` feature.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageReader};

use crate::error::Result;
use crate::tensor::Tensor;

/// Read an 8-bit image as `[3, H, W]` sRGB in `[0, 1]`.
pub fn read_rgb(path: impl AsRef<Path>) -> Result<Tensor> {
    let img = ImageReader::open(path.as_ref())?
        .with_guessed_format()?
        .decode()?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    let n = w * h;
    Tensor::new(
        &[3, h, w],
        (0..3 * n)
            .map(|i| {
                let (c, p) = (i / n, i % n);
                raw[p * 3 + c] as f64 / 255.0
            })
            .collect(),
    )
}

/// Quantise `[3, H, W]` values in `[0, 1]` to interleaved 8-bit RGB.
pub fn to_rgb8(rgb: &Tensor) -> Result<(usize, usize, Vec<u8>)> {
    let (c, h, w) = rgb.chw()?;
    if c != 3 {
        return Err(crate::Error::dim("to_rgb8", format!("expected 3 channels, got {c}")));
    }
    let n = h * w;
    let d = rgb.data();
    let mut raw = vec![0u8; 3 * n];
    for p in 0..n {
        for ch in 0..3 {
            raw[p * 3 + ch] = (d[ch * n + p].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    Ok((w, h, raw))
}

pub fn write_ppm(path: impl AsRef<Path>, rgb: &Tensor) -> Result<()> {
    let (w, h, raw) = to_rgb8(rgb)?;
    let out = BufWriter::new(File::create(path.as_ref())?);
    PnmEncoder::new(out)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(&raw, w as u32, h as u32, ExtendedColorType::Rgb8)?;
    Ok(())
}
