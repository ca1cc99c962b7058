//! Benchmark fixtures shared by the criterion benches.

use axsty_core::colorspace::LabImage;
use axsty_core::config::Config;
use axsty_core::data::synthetic_pairs;
use axsty_core::{Model, Result};

/// Narrow network that keeps a criterion run under a minute.
pub fn small_config() -> Config {
    let mut c = Config::default();
    c.model.hidden = 16;
    c.model.head_dim = 8;
    c.model.heads = 2;
    c.disc.width = 8;
    c
}

/// A model and one seeded target/reference pair of side `size`.
pub fn colorize_fixture(cfg: &Config, size: usize) -> Result<(Model, LabImage, LabImage)> {
    let model = Model::new(cfg, size, size)?;
    let pair = synthetic_pairs(1, size, 0)?.remove(0);
    Ok((model, pair.target, pair.reference))
}
