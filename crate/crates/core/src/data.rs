//! Training pairs: a seeded synthetic scene generator and a pair-list
//! loader for image files.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::colorspace::{rgb_to_lab, LabImage};
use crate::error::{Error, Result};
use crate::image_io::read_rgb;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct TrainingPair {
    pub id: String,
    pub target: LabImage,
    pub reference: LabImage,
}

const PALETTE: [[f64; 3]; 4] = [
    [0.85, 0.25, 0.2],
    [0.2, 0.6, 0.25],
    [0.25, 0.35, 0.85],
    [0.9, 0.8, 0.25],
];

/// Hue-rotated copy of [`PALETTE`] used for references, so reference
/// colours differ from the target's.
fn shifted(c: [f64; 3]) -> [f64; 3] {
    [c[2], c[0], c[1]]
}

fn scene(size: usize, colours: [[f64; 3]; 2], rng: &mut impl Rng) -> Tensor {
    let n = size * size;
    let mut rgb = vec![0.0; 3 * n];
    let bg = colours[0];
    let fg = colours[1];
    let (cy, cx) = (rng.gen_range(0.3..0.7) * size as f64, rng.gen_range(0.3..0.7) * size as f64);
    let r = rng.gen_range(0.15..0.3) * size as f64;
    let shade = rng.gen_range(0.6..1.0);
    for i in 0..size {
        for j in 0..size {
            let p = i * size + j;
            let ramp = 0.75 + 0.25 * (i as f64 / size as f64);
            let inside = (i as f64 - cy).powi(2) + (j as f64 - cx).powi(2) < r * r;
            let c = if inside { fg } else { bg };
            let k = if inside { shade } else { ramp };
            for ch in 0..3 {
                rgb[ch * n + p] = (c[ch] * k).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(&[3, size, size], rgb).expect("sized buffer")
}

/// `n` seeded `size x size` pairs. Each target is a disc on a shaded
/// background in two palette colours; its reference shows a different
/// layout of the same two colours rotated in hue.
pub fn synthetic_pairs(n: usize, size: usize, seed: u64) -> Result<Vec<TrainingPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let a = rng.gen_range(0..PALETTE.len());
            let b = (a + rng.gen_range(1..PALETTE.len())) % PALETTE.len();
            let colours = [PALETTE[a], PALETTE[b]];
            let target = rgb_to_lab(&scene(size, colours, &mut rng))?;
            let reference = rgb_to_lab(&scene(size, colours.map(shifted), &mut rng))?;
            Ok(TrainingPair {
                id: format!("synthetic{i:03}"),
                target,
                reference,
            })
        })
        .collect()
}

/// Read a list of `target<TAB>reference` image paths, relative to the
/// list's directory.
pub fn load_pairs(list: impl AsRef<Path>) -> Result<Vec<TrainingPair>> {
    let list = list.as_ref();
    let base = list.parent().unwrap_or(Path::new("."));
    let text = std::fs::read_to_string(list)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((t, r)) = line.split_once('\t') else {
            return Err(Error::Format {
                path: list.to_path_buf(),
                reason: format!("line {}: expected target<TAB>reference", n + 1),
            });
        };
        let id = Path::new(t)
            .file_stem()
            .map_or_else(|| format!("pair{n}"), |s| s.to_string_lossy().into_owned());
        out.push(TrainingPair {
            id,
            target: rgb_to_lab(&read_rgb(base.join(t.trim()))?)?,
            reference: rgb_to_lab(&read_rgb(base.join(r.trim()))?)?,
        });
    }
    if out.is_empty() {
        return Err(Error::Invalid(format!("{} lists no pairs", list.display())));
    }
    Ok(out)
}
