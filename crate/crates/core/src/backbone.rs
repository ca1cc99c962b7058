//! Multi-scale feature extraction and projection to the shared hidden space.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::ntf;
use crate::params::{Bindings, ConvParams, ParamStore};
use crate::tensor::Tensor;

pub const LEVELS: usize = 5;
pub const LEVEL_CHANNELS: [usize; LEVELS] = [64, 128, 256, 512, 512];
pub const BOTTLENECK_CHANNELS: usize = 512;

/// `(channels, height, width)` of each level for an `h x w` input.
pub fn pyramid_schedule(h: usize, w: usize) -> Result<[(usize, usize, usize); LEVELS]> {
    if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
        return Err(Error::dim(
            "backbone",
            format!("input {h}x{w}: height and width must be positive multiples of 16"),
        ));
    }
    Ok(std::array::from_fn(|l| (LEVEL_CHANNELS[l], h >> l, w >> l)))
}

/// Feature maps `F^1..F^5` and the bottleneck `F^B` of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    levels: Vec<Tensor>,
    bottleneck: Tensor,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<Tensor>, bottleneck: Tensor) -> Result<Self> {
        if levels.len() != LEVELS {
            return Err(Error::dim("pyramid", format!("expected {LEVELS} levels, got {}", levels.len())));
        }
        let (_, h, w) = levels[0].chw()?;
        let sched = pyramid_schedule(h, w)?;
        for (l, (t, want)) in levels.iter().zip(sched).enumerate() {
            let got = t.chw()?;
            if got != want {
                return Err(Error::dim(
                    "pyramid",
                    format!("level {} has shape {:?}, expected {:?}", l + 1, got, want),
                ));
            }
        }
        let want_b = (BOTTLENECK_CHANNELS, sched[4].1, sched[4].2);
        if bottleneck.chw()? != want_b {
            return Err(Error::dim(
                "pyramid",
                format!("bottleneck has shape {:?}, expected {:?}", bottleneck.shape(), want_b),
            ));
        }
        Ok(FeaturePyramid { levels, bottleneck })
    }

    /// Level `l` in `1..=5`.
    pub fn level(&self, l: usize) -> &Tensor {
        &self.levels[l - 1]
    }

    pub fn levels(&self) -> &[Tensor] {
        &self.levels
    }

    pub fn bottleneck(&self) -> &Tensor {
        &self.bottleneck
    }

    /// Write `level1.ntf` .. `level5.ntf` and `bottleneck.ntf`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (l, t) in self.levels.iter().enumerate() {
            ntf::save(t, dir.join(format!("level{}.ntf", l + 1)))?;
        }
        ntf::save(&self.bottleneck, dir.join("bottleneck.ntf"))
    }
}

/// Load an externally computed pyramid written in the layout of
/// [`FeaturePyramid::save`].
pub fn load_fixture_pyramid(dir: impl AsRef<Path>) -> Result<FeaturePyramid> {
    let dir = dir.as_ref();
    let levels = (1..=LEVELS)
        .map(|l| ntf::load(dir.join(format!("level{l}.ntf"))))
        .collect::<Result<Vec<_>>>()?;
    let bottleneck = ntf::load(dir.join("bottleneck.ntf"))?;
    FeaturePyramid::new(levels, bottleneck).map_err(|e| Error::Fixture {
        dir: dir.display().to_string(),
        reason: e.to_string(),
    })
}

/// Graph handles for a pyramid.
#[derive(Clone, Debug)]
pub struct PyramidVars {
    pub levels: Vec<Var>,
    pub bottleneck: Var,
}

impl PyramidVars {
    pub fn constant(g: &mut Graph, p: &FeaturePyramid) -> Self {
        PyramidVars {
            levels: p.levels.iter().map(|t| g.constant(t.clone())).collect(),
            bottleneck: g.constant(p.bottleneck.clone()),
        }
    }
}

/// Seeded stand-in for a pretrained VGG-style encoder: five blocks of
/// conv3x3 + ReLU separated by 2x average pooling, plus one more conv3x3 +
/// ReLU on the last block for the bottleneck.
#[derive(Clone, Debug)]
pub struct ToyBackbone {
    store: ParamStore,
    blocks: Vec<ConvParams>,
    tail: ConvParams,
}

impl ToyBackbone {
    pub fn new(seed: u64, trainable: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut c_in = 3;
        let blocks = LEVEL_CHANNELS
            .iter()
            .enumerate()
            .map(|(l, &c)| {
                let p = ConvParams::he(&mut store, &format!("backbone.block{}", l + 1), c, c_in, 3, trainable, &mut rng);
                c_in = c;
                p
            })
            .collect();
        let tail = ConvParams::he(&mut store, "backbone.tail", BOTTLENECK_CHANNELS, c_in, 3, trainable, &mut rng);
        ToyBackbone { store, blocks, tail }
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn forward_graph(&self, g: &mut Graph, b: &Bindings, x: Var) -> Result<PyramidVars> {
        let (c, h, w) = g.value(x).chw()?;
        if c != 3 {
            return Err(Error::dim("backbone", format!("expected 3 input channels, got {c}")));
        }
        pyramid_schedule(h, w)?;
        let mut levels = Vec::with_capacity(LEVELS);
        let mut cur = x;
        for (l, conv) in self.blocks.iter().enumerate() {
            if l > 0 {
                cur = g.avg_pool2x(cur)?;
            }
            let y = conv.apply(g, b, cur)?;
            cur = g.relu(y);
            levels.push(cur);
        }
        let y = self.tail.apply(g, b, cur)?;
        let bottleneck = g.relu(y);
        Ok(PyramidVars { levels, bottleneck })
    }

    /// Frozen forward pass on a `[3, H, W]` input.
    pub fn forward(&self, x: &Tensor) -> Result<FeaturePyramid> {
        let mut g = Graph::new();
        let b = self.store.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let p = self.forward_graph(&mut g, &b, xv)?;
        FeaturePyramid::new(
            p.levels.iter().map(|&v| g.value(v).clone()).collect(),
            g.value(p.bottleneck).clone(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Target,
    Reference,
}

/// Per-level features in the hidden space, `F̂^1..F̂^5` and (for targets) `F̂^B`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedFeatures {
    pub source: Source,
    pub levels: Vec<Tensor>,
    pub bottleneck: Option<Tensor>,
}

/// 1x1 conv + ReLU per level, shared between target and reference, and a
/// separate one for the bottleneck.
#[derive(Clone, Debug)]
pub struct Projector {
    levels: Vec<ConvParams>,
    bottleneck: ConvParams,
}

impl Projector {
    pub fn new(store: &mut ParamStore, hidden: usize, rng: &mut impl rand::Rng) -> Self {
        let levels = LEVEL_CHANNELS
            .iter()
            .enumerate()
            .map(|(l, &c)| ConvParams::he(store, &format!("proj.level{}", l + 1), hidden, c, 1, true, rng))
            .collect();
        let bottleneck = ConvParams::he(store, "proj.bottleneck", hidden, BOTTLENECK_CHANNELS, 1, true, rng);
        Projector { levels, bottleneck }
    }

    /// Project level `l` in `1..=5`.
    pub fn level(&self, g: &mut Graph, b: &Bindings, l: usize, x: Var) -> Result<Var> {
        let y = self.levels[l - 1].apply(g, b, x)?;
        Ok(g.relu(y))
    }

    pub fn bottleneck(&self, g: &mut Graph, b: &Bindings, x: Var) -> Result<Var> {
        let y = self.bottleneck.apply(g, b, x)?;
        Ok(g.relu(y))
    }

    /// Frozen projection of a whole pyramid. The bottleneck is projected for
    /// targets only.
    pub fn project_features(&self, store: &ParamStore, p: &FeaturePyramid, source: Source) -> Result<ProjectedFeatures> {
        let mut g = Graph::new();
        let b = store.bind_frozen(&mut g);
        let pv = PyramidVars::constant(&mut g, p);
        let mut levels = Vec::with_capacity(LEVELS);
        for (l, &x) in pv.levels.iter().enumerate() {
            let y = self.level(&mut g, &b, l + 1, x)?;
            levels.push(g.value(y).clone());
        }
        let bottleneck = match source {
            Source::Target => {
                let y = self.bottleneck(&mut g, &b, pv.bottleneck)?;
                Some(g.value(y).clone())
            }
            Source::Reference => None,
        };
        Ok(ProjectedFeatures {
            source,
            levels,
            bottleneck,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_at_224_and_32() {
        let s = pyramid_schedule(224, 224).unwrap();
        assert_eq!(s.map(|t| t.1), [224, 112, 56, 28, 14]);
        assert_eq!(s.map(|t| t.0), [64, 128, 256, 512, 512]);
        let s = pyramid_schedule(32, 48).unwrap();
        assert_eq!(s.map(|t| (t.1, t.2)), [(32, 48), (16, 24), (8, 12), (4, 6), (2, 3)]);
        assert!(pyramid_schedule(40, 32).is_err());
    }

    #[test]
    fn toy_forward_is_deterministic_and_shaped() {
        let x = Tensor::from_fn(&[3, 32, 32], |i| ((i * 7919) % 101) as f64 / 50.0 - 1.0);
        let a = ToyBackbone::new(3, false).forward(&x).unwrap();
        let b = ToyBackbone::new(3, false).forward(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.bottleneck().shape(), &[512, 2, 2]);
        assert_eq!(a.level(1).shape(), &[64, 32, 32]);
        assert_eq!(a.level(5).shape(), &[512, 2, 2]);
    }

    #[test]
    fn fixture_round_trip_and_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let x = Tensor::from_fn(&[3, 16, 16], |i| (i % 13) as f64 / 13.0);
        let p = ToyBackbone::new(1, false).forward(&x).unwrap();
        p.save(dir.path()).unwrap();
        let back = load_fixture_pyramid(dir.path()).unwrap();
        // NTF stores f32.
        for (a, b) in back.levels().iter().zip(p.levels()) {
            assert!(a.max_abs_diff(b) < 1e-5 * b.max_abs().max(1.0));
        }
        back.save(dir.path()).unwrap();
        assert_eq!(load_fixture_pyramid(dir.path()).unwrap(), back);

        ntf::save(&Tensor::zeros(&[100, 4, 4]), dir.path().join("level3.ntf")).unwrap();
        let err = load_fixture_pyramid(dir.path()).unwrap_err().to_string();
        assert!(err.contains("level 3"), "{err}");
    }

    #[test]
    fn projection_is_nonnegative_and_hidden_sized() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let proj = Projector::new(&mut store, 32, &mut rng);
        let x = Tensor::from_fn(&[3, 16, 16], |i| (i % 5) as f64 / 5.0);
        let p = ToyBackbone::new(2, false).forward(&x).unwrap();
        let f = proj.project_features(&store, &p, Source::Target).unwrap();
        for (l, t) in f.levels.iter().enumerate() {
            assert_eq!(t.shape(), &[32, 16 >> l, 16 >> l]);
            assert!(t.data().iter().all(|&v| v >= 0.0));
        }
        assert_eq!(f.bottleneck.unwrap().shape(), &[32, 1, 1]);
        let r = proj.project_features(&store, &p, Source::Reference).unwrap();
        assert!(r.bottleneck.is_none());
    }
}
