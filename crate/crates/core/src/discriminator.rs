//! Patch discriminators, one per prediction scale.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::config::DiscConfig;
use crate::error::{Error, Result};
use crate::network::SCALES;
use crate::params::{Bindings, ConvParams, ParamStore};

/// Smallest input side accepted; three stride-2 convs reduce it to 1.
pub const MIN_SIDE: usize = 4;

/// Three 3x3 stride-2 convolutions `3 -> w -> 2w -> 1` with ReLU between.
#[derive(Clone, Debug)]
pub struct PatchDiscriminator {
    pub convs: [ConvParams; 3],
}

impl PatchDiscriminator {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, rng: &mut impl rand::Rng) -> Self {
        let chans = [3, width, 2 * width, 1];
        PatchDiscriminator {
            convs: std::array::from_fn(|i| {
                ConvParams::he(store, &format!("{name}.conv{}", i + 1), chans[i + 1], chans[i], 3, true, rng).with_stride(2)
            }),
        }
    }

    /// `lab` is `[3, H, W]`; returns the `[1, ceil(H/8), ceil(W/8)]` patch map.
    pub fn forward(&self, g: &mut Graph, b: &Bindings, lab: Var) -> Result<Var> {
        let (c, h, w) = g.value(lab).chw()?;
        if c != 3 || h < MIN_SIDE || w < MIN_SIDE {
            return Err(Error::dim(
                "patch_discriminator",
                format!("input {c}x{h}x{w}: need 3 channels and at least {MIN_SIDE}x{MIN_SIDE}"),
            ));
        }
        let mut x = lab;
        for (i, conv) in self.convs.iter().enumerate() {
            x = conv.apply(g, b, x)?;
            if i + 1 < self.convs.len() {
                x = g.relu(x);
            }
        }
        Ok(x)
    }
}

#[derive(Clone, Debug)]
pub struct MultiScaleDiscriminator {
    store: ParamStore,
    scales: Vec<PatchDiscriminator>,
}

impl MultiScaleDiscriminator {
    pub fn new(cfg: &DiscConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let scales = (1..=SCALES)
            .map(|l| PatchDiscriminator::new(&mut store, &format!("disc.scale{l}"), cfg.width, &mut rng))
            .collect();
        MultiScaleDiscriminator { store, scales }
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Discriminator of scale `l` in `1..=4`.
    pub fn forward(&self, g: &mut Graph, b: &Bindings, l: usize, lab: Var) -> Result<Var> {
        self.scales[l - 1].forward(g, b, lab)
    }
}
