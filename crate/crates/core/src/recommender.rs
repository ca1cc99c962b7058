//! Reference selection: global descriptor ranking within a class, patch
//! based refinement, and weighted sampling of the training reference.

use std::cmp::Ordering;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ntf;
use crate::tensor::Tensor;

pub const DESCRIPTOR_DIM: usize = 128;
pub const TOP_K: usize = 5;
/// Sampling weights of the top-1, top-5 and same-class categories.
pub const ALPHA: [f64; 3] = [0.6, 0.3, 0.1];

#[derive(Clone, Debug)]
pub struct CorpusEntry {
    pub id: String,
    pub class: String,
    pub descriptor: Vec<f64>,
    /// Level-4 feature map `[C, H, W]` used for patch refinement.
    pub features: Tensor,
}

impl CorpusEntry {
    pub fn new(id: impl Into<String>, class: impl Into<String>, descriptor: Vec<f64>, features: Tensor) -> Result<Self> {
        if descriptor.len() != DESCRIPTOR_DIM {
            return Err(Error::dim(
                "corpus_entry",
                format!("descriptor has {} values, expected {DESCRIPTOR_DIM}", descriptor.len()),
            ));
        }
        features.chw()?;
        Ok(CorpusEntry {
            id: id.into(),
            class: class.into(),
            descriptor,
            features,
        })
    }
}

/// Random `[128, in_dim]` matrix with orthonormal rows (Gram-Schmidt on
/// Gaussian draws), standing in for a fitted PCA.
pub fn descriptor_projection(in_dim: usize, seed: u64) -> Result<Tensor> {
    if in_dim < DESCRIPTOR_DIM {
        return Err(Error::dim(
            "descriptor_projection",
            format!("input dimension {in_dim} is below {DESCRIPTOR_DIM}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(DESCRIPTOR_DIM);
    while rows.len() < DESCRIPTOR_DIM {
        let mut v: Vec<f64> = Tensor::normal(&[in_dim], 1.0, &mut rng).into_data();
        for r in &rows {
            let d: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= d * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|a| *a /= n);
            rows.push(v);
        }
    }
    Tensor::new(&[DESCRIPTOR_DIM, in_dim], rows.concat())
}

/// Global-average-pool a `[C, H, W]` map and project it to 128 dimensions.
pub fn global_descriptor(features: &Tensor, projection: &Tensor) -> Result<Vec<f64>> {
    let (c, h, w) = features.chw()?;
    if projection.shape() != [DESCRIPTOR_DIM, c] {
        return Err(Error::dim(
            "global_descriptor",
            format!("projection {:?} does not accept {c} channels", projection.shape()),
        ));
    }
    let n = (h * w) as f64;
    let pooled: Vec<f64> = features.data().chunks(h * w).map(|ch| ch.iter().sum::<f64>() / n).collect();
    Ok(projection
        .data()
        .chunks(c)
        .map(|row| row.iter().zip(&pooled).map(|(a, b)| a * b).sum())
        .collect())
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Up to five same-class ids nearest to the target by descriptor L2
/// distance, ties broken by id. The target itself is excluded.
pub fn global_rank_top5(target: &CorpusEntry, pool: &[CorpusEntry]) -> Vec<String> {
    let mut scored: Vec<(f64, &str)> = pool
        .iter()
        .filter(|e| e.class == target.class && e.id != target.id)
        .map(|e| (l2(&target.descriptor, &e.descriptor), e.id.as_str()))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    scored.into_iter().take(TOP_K).map(|(_, id)| id.to_string()).collect()
}

/// `1 - cos(a, b)`; 1 when either vector is zero.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        1.0
    } else {
        1.0 - dot / (na * nb)
    }
}

/// Non-overlapping `patch x patch` cells of a `[C, H, W]` map, each
/// flattened channel-major. Trailing rows/columns that do not fill a patch
/// are dropped.
pub fn patches(features: &Tensor, patch: usize) -> Result<Vec<Vec<f64>>> {
    let (c, h, w) = features.chw()?;
    if patch == 0 || h < patch || w < patch {
        return Err(Error::dim(
            "local_refine",
            format!("feature map {h}x{w} is smaller than one {patch}x{patch} patch"),
        ));
    }
    let d = features.data();
    let mut out = Vec::new();
    for pi in 0..h / patch {
        for pj in 0..w / patch {
            let mut v = Vec::with_capacity(c * patch * patch);
            for ch in 0..c {
                for i in pi * patch..(pi + 1) * patch {
                    let row = ch * h * w + i * w;
                    v.extend_from_slice(&d[row + pj * patch..row + (pj + 1) * patch]);
                }
            }
            out.push(v);
        }
    }
    Ok(out)
}

/// Mean over target patches of the smallest cosine distance to any
/// candidate patch.
pub fn patch_score(target: &Tensor, candidate: &Tensor, patch: usize) -> Result<f64> {
    let tp = patches(target, patch)?;
    let cp = patches(candidate, patch)?;
    if tp[0].len() != cp[0].len() {
        return Err(Error::dim("local_refine", "target and candidate channel counts differ"));
    }
    let sum: f64 = tp
        .iter()
        .map(|t| cp.iter().map(|c| cosine_distance(t, c)).fold(f64::INFINITY, f64::min))
        .sum();
    Ok(sum / tp.len() as f64)
}

/// Candidate with the lowest patch score; ties go to the smaller id.
pub fn local_refine_top1<'a>(target: &Tensor, candidates: &[&'a CorpusEntry], patch: usize) -> Result<&'a str> {
    let mut best: Option<(f64, &str)> = None;
    for c in candidates {
        let s = patch_score(target, &c.features, patch)?;
        let better = match best {
            None => true,
            Some((bs, bid)) => match s.total_cmp(&bs) {
                Ordering::Less => true,
                Ordering::Equal => c.id.as_str() < bid,
                Ordering::Greater => false,
            },
        };
        if better {
            best = Some((s, c.id.as_str()));
        }
    }
    best.map(|(_, id)| id)
        .ok_or_else(|| Error::Invalid("no candidates to refine".into()))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rankings {
    pub top1: String,
    pub top5: Vec<String>,
    /// Every other image of the target's class.
    pub same_class: Vec<String>,
}

/// Global ranking followed by local refinement for one target.
pub fn rank(target: &CorpusEntry, pool: &[CorpusEntry], patch: usize) -> Result<Rankings> {
    let top5 = global_rank_top5(target, pool);
    if top5.is_empty() {
        return Err(Error::Invalid(format!("no other images of class {:?}", target.class)));
    }
    let cands: Vec<&CorpusEntry> = top5
        .iter()
        .filter_map(|id| pool.iter().find(|e| &e.id == id))
        .collect();
    let top1 = local_refine_top1(&target.features, &cands, patch)?.to_string();
    let mut same_class: Vec<String> = pool
        .iter()
        .filter(|e| e.class == target.class && e.id != target.id)
        .map(|e| e.id.clone())
        .collect();
    same_class.sort();
    Ok(Rankings {
        top1,
        top5,
        same_class,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    Top1,
    Top5,
    SameClass,
}

/// Category of a uniform draw `u` in `[0, 1)` under [`ALPHA`].
pub fn category_from_u(u: f64) -> Category {
    if u < ALPHA[0] {
        Category::Top1
    } else if u < ALPHA[0] + ALPHA[1] {
        Category::Top5
    } else {
        Category::SameClass
    }
}

/// Draw a category, then an id uniformly within it.
pub fn sample_reference<'a>(r: &'a Rankings, rng: &mut impl Rng) -> (Category, &'a str) {
    let cat = match WeightedIndex::new(ALPHA).expect("weights are positive").sample(rng) {
        0 => Category::Top1,
        1 => Category::Top5,
        _ => Category::SameClass,
    };
    (cat, pick(r, cat, rng))
}

/// Uniform choice within a fixed category.
pub fn pick<'a>(r: &'a Rankings, cat: Category, rng: &mut impl Rng) -> &'a str {
    match cat {
        Category::Top1 => &r.top1,
        Category::Top5 => r.top5.choose(rng).unwrap_or(&r.top1),
        Category::SameClass => r.same_class.choose(rng).unwrap_or(&r.top1),
    }
}

/// Read a manifest of `id<TAB>class<TAB>descriptor.ntf<TAB>features.ntf`
/// lines. Relative paths are resolved against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<CorpusEntry>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let [id, class, desc, feat] = f[..] else {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("line {}: expected 4 tab-separated fields", n + 1),
            });
        };
        let descriptor = ntf::load(base.join(desc))?.into_data();
        let features = ntf::load(base.join(feat))?;
        out.push(CorpusEntry::new(id, class, descriptor, features)?);
    }
    Ok(out)
}
