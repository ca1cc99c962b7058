//! The complete trainable system: backbone, colourisation network and
//! discriminators built from one [`Config`].

use crate::backbone::{load_fixture_pyramid, pyramid_schedule, FeaturePyramid, ToyBackbone};
use crate::colorspace::LabImage;
use crate::config::{BackboneMode, Config};
use crate::discriminator::MultiScaleDiscriminator;
use crate::error::{Error, Result};
use crate::network::{reference_input, target_input, Colorizer, PredictionSet};

#[derive(Clone, Debug)]
pub struct Model {
    pub config: Config,
    pub backbone: ToyBackbone,
    pub net: Colorizer,
    pub disc: MultiScaleDiscriminator,
}

impl Model {
    pub fn new(config: &Config, height: usize, width: usize) -> Result<Self> {
        config.validate()?;
        pyramid_schedule(height, width)?;
        Ok(Model {
            config: config.clone(),
            backbone: ToyBackbone::new(config.backbone.seed, config.backbone.trainable),
            net: Colorizer::new(&config.model, height, width)?,
            disc: MultiScaleDiscriminator::new(&config.disc, config.model.seed.wrapping_add(0x5eed)),
        })
    }

    pub fn size(&self) -> (usize, usize) {
        self.net.size()
    }

    pub fn target_pyramid(&self, img: &LabImage) -> Result<FeaturePyramid> {
        self.backbone.forward(&target_input(img)?)
    }

    pub fn reference_pyramid(&self, img: &LabImage) -> Result<FeaturePyramid> {
        self.backbone.forward(&reference_input(img))
    }

    fn check_image(&self, img: &LabImage, what: &str) -> Result<()> {
        let (h, w) = (img.height(), img.width());
        pyramid_schedule(h, w)?;
        if (h, w) != self.size() {
            return Err(Error::dim(
                "colorize",
                format!("{what} is {h}x{w}, model built for {}x{}", self.size().0, self.size().1),
            ));
        }
        Ok(())
    }

    /// Colourise `target` with `reference`. In fixture mode the pyramids
    /// must be supplied instead of computed.
    pub fn colorize(&self, target: &LabImage, reference: &LabImage) -> Result<PredictionSet> {
        self.check_image(target, "target")?;
        self.check_image(reference, "reference")?;
        if self.config.backbone.mode == BackboneMode::Fixture {
            return Err(Error::Config("backbone.mode = fixture needs precomputed feature directories".into()));
        }
        self.net.predict(&self.target_pyramid(target)?, &self.reference_pyramid(reference)?)
    }

    /// Colourise from fixture directories written by
    /// [`FeaturePyramid::save`].
    pub fn colorize_fixtures(&self, target_dir: &std::path::Path, reference_dir: &std::path::Path) -> Result<PredictionSet> {
        self.net.predict(&load_fixture_pyramid(target_dir)?, &load_fixture_pyramid(reference_dir)?)
    }
}
