//! Pyramid decoder, prediction heads and the end-to-end colourisation
//! network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::FusionBlock;
use crate::autodiff::{Graph, Var};
use crate::backbone::{pyramid_schedule, FeaturePyramid, Projector, PyramidVars, ToyBackbone, LEVELS};
use crate::colorspace::{lab_to_rgb, replicate_luma, LabImage};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::{Bindings, ConvParams, ParamStore};
use crate::tensor::Tensor;

/// Number of prediction scales `P^1..P^4`.
pub const SCALES: usize = 4;

/// One decoder stage: add the fused features to the previous output,
/// conv3x3 + ReLU, upsample x2, concatenate the skip features and project
/// `2h -> h` with conv3x3 + ReLU.
#[derive(Clone, Debug)]
pub struct DecoderStage {
    pub pre: ConvParams,
    pub post: ConvParams,
}

impl DecoderStage {
    pub fn new(store: &mut ParamStore, name: &str, hidden: usize, rng: &mut impl Rng) -> Self {
        DecoderStage {
            pre: ConvParams::he(store, &format!("{name}.pre"), hidden, hidden, 3, true, rng),
            post: ConvParams::he(store, &format!("{name}.post"), hidden, 2 * hidden, 3, true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, b: &Bindings, prev: Var, fused: Var, skip: Var) -> Result<Var> {
        let (c, h, w) = g.value(prev).chw()?;
        if g.shape(skip) != [c, 2 * h, 2 * w] {
            return Err(Error::dim(
                "decoder_stage",
                format!("skip {:?} must be {:?}", g.shape(skip), [c, 2 * h, 2 * w]),
            ));
        }
        let x = g.add(prev, fused)?;
        let x = self.pre.apply(g, b, x)?;
        let x = g.relu(x);
        let x = g.upsample2x(x)?;
        let x = g.concat(x, skip, 0)?;
        let x = self.post.apply(g, b, x)?;
        Ok(g.relu(x))
    }
}

/// conv3x3 + ReLU to `e` channels, then conv1x1 + tanh to the two ab channels.
#[derive(Clone, Debug)]
pub struct PredictionHead {
    pub conv: ConvParams,
    pub out: ConvParams,
}

impl PredictionHead {
    pub fn new(store: &mut ParamStore, name: &str, hidden: usize, head_dim: usize, rng: &mut impl Rng) -> Self {
        PredictionHead {
            conv: ConvParams::he(store, &format!("{name}.conv"), head_dim, hidden, 3, true, rng),
            out: ConvParams::he(store, &format!("{name}.out"), 2, head_dim, 1, true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, b: &Bindings, x: Var) -> Result<Var> {
        let y = self.conv.apply(g, b, x)?;
        let y = g.relu(y);
        let y = self.out.apply(g, b, y)?;
        Ok(g.tanh(y))
    }
}

/// Predicted ab maps `P^1..P^4`, finest first.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    pub levels: Vec<Tensor>,
}

impl PredictionSet {
    /// Scale `l` in `1..=4`.
    pub fn scale(&self, l: usize) -> &Tensor {
        &self.levels[l - 1]
    }
}

/// Everything after the backbone: projections, fusion blocks at the attended
/// levels, four decoder stages and four prediction heads.
#[derive(Clone, Debug)]
pub struct Colorizer {
    config: ModelConfig,
    height: usize,
    width: usize,
    store: ParamStore,
    projector: Projector,
    fusion: Vec<Option<FusionBlock>>,
    stages: Vec<DecoderStage>,
    heads: Vec<PredictionHead>,
}

impl Colorizer {
    /// Build a network for `height x width` inputs. Attention tables are
    /// sized for this resolution.
    pub fn new(config: &ModelConfig, height: usize, width: usize) -> Result<Self> {
        let sched = pyramid_schedule(height, width)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let projector = Projector::new(&mut store, config.hidden, &mut rng);
        let fusion = (1..=LEVELS)
            .map(|l| {
                if l >= config.from_block && l >= 2 {
                    let (_, h, w) = sched[l - 1];
                    FusionBlock::new(&mut store, &format!("fusion.level{l}"), config, h, w, &mut rng).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_>>()?;
        let stages = (1..=SCALES)
            .map(|l| DecoderStage::new(&mut store, &format!("decoder.stage{l}"), config.hidden, &mut rng))
            .collect();
        let heads = (1..=SCALES)
            .map(|l| PredictionHead::new(&mut store, &format!("head.scale{l}"), config.hidden, config.head_dim, &mut rng))
            .collect();
        Ok(Colorizer {
            config: config.clone(),
            height,
            width,
            store,
            projector,
            fusion,
            stages,
            heads,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    /// Fusion block at level `l`, if attention runs there.
    pub fn fusion(&self, l: usize) -> Option<&FusionBlock> {
        self.fusion[l - 1].as_ref()
    }

    pub fn stage(&self, l: usize) -> &DecoderStage {
        &self.stages[l - 1]
    }

    pub fn head(&self, l: usize) -> &PredictionHead {
        &self.heads[l - 1]
    }

    fn check_size(&self, p: &PyramidVars, g: &Graph, what: &str) -> Result<()> {
        let (_, h, w) = g.value(p.levels[0]).chw()?;
        if (h, w) != (self.height, self.width) {
            return Err(Error::dim(
                "network_forward",
                format!("{what} is {h}x{w}, network built for {}x{}", self.height, self.width),
            ));
        }
        Ok(())
    }

    /// Graph forward from target and reference pyramids to `P^1..P^4`.
    pub fn forward_graph(&self, g: &mut Graph, b: &Bindings, target: &PyramidVars, reference: &PyramidVars) -> Result<Vec<Var>> {
        self.check_size(target, g, "target")?;
        self.check_size(reference, g, "reference")?;
        let mut ft = Vec::with_capacity(LEVELS);
        for (l, &x) in target.levels.iter().enumerate() {
            ft.push(self.projector.level(g, b, l + 1, x)?);
        }
        let mut o = self.projector.bottleneck(g, b, target.bottleneck)?;
        let mut preds = vec![None; SCALES];
        for l in (1..=SCALES).rev() {
            let fused = match &self.fusion[l] {
                Some(block) => {
                    let fr = self.projector.level(g, b, l + 1, reference.levels[l])?;
                    block.forward(g, b, ft[l], fr)?
                }
                None => ft[l],
            };
            o = self.stages[l - 1].forward(g, b, o, fused, ft[l - 1])?;
            preds[l - 1] = Some(self.heads[l - 1].forward(g, b, o)?);
        }
        Ok(preds.into_iter().flatten().collect())
    }

    /// Inference from precomputed pyramids.
    pub fn predict(&self, target: &FeaturePyramid, reference: &FeaturePyramid) -> Result<PredictionSet> {
        let mut g = Graph::new();
        let b = self.store.bind_frozen(&mut g);
        let t = PyramidVars::constant(&mut g, target);
        let r = PyramidVars::constant(&mut g, reference);
        let p = self.forward_graph(&mut g, &b, &t, &r)?;
        Ok(PredictionSet {
            levels: p.iter().map(|&v| g.value(v).clone()).collect(),
        })
    }
}

/// Backbone input for the target: its luminance triplicated.
pub fn target_input(img: &LabImage) -> Result<Tensor> {
    replicate_luma(img.l())
}

/// Backbone input for the reference: its normalised Lab channels.
pub fn reference_input(img: &LabImage) -> Tensor {
    img.stacked()
}

/// Full forward pass on Lab images.
pub fn network_forward(backbone: &ToyBackbone, net: &Colorizer, target: &LabImage, reference: &LabImage) -> Result<PredictionSet> {
    if (target.height(), target.width()) != (reference.height(), reference.width()) {
        return Err(Error::dim(
            "network_forward",
            format!(
                "target {}x{} and reference {}x{} differ",
                target.height(),
                target.width(),
                reference.height(),
                reference.width()
            ),
        ));
    }
    let ft = backbone.forward(&target_input(target)?)?;
    let fr = backbone.forward(&reference_input(reference))?;
    net.predict(&ft, &fr)
}

/// Render `P^l` with the matching target luminance as sRGB.
pub fn render(target_l: &Tensor, ab: &Tensor) -> Result<Tensor> {
    Ok(lab_to_rgb(&LabImage::new(target_l.clone(), ab.clone())?))
}
