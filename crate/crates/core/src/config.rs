//! `key = value` configuration with ablation presets.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionMode {
    Axial,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Span {
    /// Span equals the axis length (the whole map for full attention).
    Auto,
    Fixed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackboneMode {
    Toy,
    Fixture,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub hidden: usize,
    pub head_dim: usize,
    pub heads: usize,
    pub mode: AttentionMode,
    pub repeats: usize,
    pub span: Span,
    pub from_block: usize,
    pub seed: u64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 256,
            head_dim: 64,
            heads: 8,
            mode: AttentionMode::Axial,
            repeats: 2,
            span: Span::Auto,
            from_block: 3,
            seed: 0,
            bn_eps: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub mode: BackboneMode,
    pub seed: u64,
    pub trainable: bool,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            mode: BackboneMode::Toy,
            seed: 7,
            trainable: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub pixel: f64,
    pub hist: f64,
    pub tv: f64,
    pub gan: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            pixel: 100.0,
            hist: 2.0,
            tv: 50.0,
            gan: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub huber_delta: f64,
    pub hist_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            weights: LossWeights::default(),
            huber_delta: 1.0,
            hist_eps: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscConfig {
    pub width: usize,
}

impl Default for DiscConfig {
    fn default() -> Self {
        DiscConfig { width: 16 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 500,
            batch: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub backbone: BackboneConfig,
    pub loss: LossConfig,
    pub disc: DiscConfig,
    pub train: TrainConfig,
}

/// Named configurations for the ablation table.
pub const PRESETS: &[&str] = &[
    "full",
    "no-adv",
    "no-pix",
    "no-hist",
    "standard-attention",
    "single-module",
];

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

impl Config {
    pub fn preset(name: &str) -> Result<Config> {
        let mut c = Config::default();
        c.apply_preset(name)?;
        Ok(c)
    }

    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        match name {
            "full" => {}
            "no-adv" => self.loss.weights.gan = 0.0,
            "no-pix" => self.loss.weights.pixel = 0.0,
            "no-hist" => self.loss.weights.hist = 0.0,
            "standard-attention" => self.model.mode = AttentionMode::Full,
            "single-module" => self.model.repeats = 1,
            _ => {
                return Err(Error::Config(format!(
                    "unknown preset {name:?}; known: {}",
                    PRESETS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "preset" => self.apply_preset(v)?,
            "model.hidden" => self.model.hidden = parse(key, v)?,
            "model.head_dim" => self.model.head_dim = parse(key, v)?,
            "model.seed" => self.model.seed = parse(key, v)?,
            "model.bn_eps" => self.model.bn_eps = parse(key, v)?,
            "attention.heads" => self.model.heads = parse(key, v)?,
            "attention.mode" => {
                self.model.mode = match v {
                    "axial" => AttentionMode::Axial,
                    "full" => AttentionMode::Full,
                    _ => return Err(Error::Config(format!("{key}: expected axial|full, got {v:?}"))),
                }
            }
            "attention.repeats" => self.model.repeats = parse(key, v)?,
            "attention.span" => {
                self.model.span = if v == "auto" {
                    Span::Auto
                } else {
                    Span::Fixed(parse(key, v)?)
                }
            }
            "attention.from_block" => self.model.from_block = parse(key, v)?,
            "backbone.mode" => {
                self.backbone.mode = match v {
                    "toy" => BackboneMode::Toy,
                    "fixture" => BackboneMode::Fixture,
                    _ => return Err(Error::Config(format!("{key}: expected toy|fixture, got {v:?}"))),
                }
            }
            "backbone.seed" => self.backbone.seed = parse(key, v)?,
            "backbone.trainable" => self.backbone.trainable = parse_bool(key, v)?,
            "loss.pixel" => self.loss.weights.pixel = parse(key, v)?,
            "loss.hist" => self.loss.weights.hist = parse(key, v)?,
            "loss.tv" => self.loss.weights.tv = parse(key, v)?,
            "loss.gan" => self.loss.weights.gan = parse(key, v)?,
            "loss.huber_delta" => self.loss.huber_delta = parse(key, v)?,
            "loss.hist_eps" => self.loss.hist_eps = parse(key, v)?,
            "disc.width" => self.disc.width = parse(key, v)?,
            "train.lr" => self.train.lr = parse(key, v)?,
            "train.beta1" => self.train.beta1 = parse(key, v)?,
            "train.beta2" => self.train.beta2 = parse(key, v)?,
            "train.eps" => self.train.eps = parse(key, v)?,
            "train.steps" => self.train.steps = parse(key, v)?,
            "train.batch" => self.train.batch = parse(key, v)?,
            "train.seed" => self.train.seed = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parse `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse_str(text: &str) -> Result<Config> {
        let mut c = Config::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            c.set(k.trim(), v.trim())?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        Config::parse_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.heads == 0 || m.hidden % m.heads != 0 {
            return Err(Error::Config(format!(
                "hidden {} is not divisible by {} heads",
                m.hidden, m.heads
            )));
        }
        if !(1..=2).contains(&m.repeats) {
            return Err(Error::Config(format!("attention.repeats must be 1 or 2, got {}", m.repeats)));
        }
        if !(1..=6).contains(&m.from_block) {
            return Err(Error::Config(format!(
                "attention.from_block must be in 1..=6, got {}",
                m.from_block
            )));
        }
        if m.span == Span::Fixed(0) {
            return Err(Error::Config("attention.span must be positive".into()));
        }
        if self.train.batch == 0 {
            return Err(Error::Config("train.batch must be positive".into()));
        }
        Ok(())
    }

    /// Serialise every key; parsing the result reproduces `self`.
    pub fn to_kv_string(&self) -> String {
        let m = &self.model;
        let w = &self.loss.weights;
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("model.hidden", m.hidden.to_string());
        kv("model.head_dim", m.head_dim.to_string());
        kv("model.seed", m.seed.to_string());
        kv("model.bn_eps", format!("{:e}", m.bn_eps));
        kv("attention.heads", m.heads.to_string());
        kv(
            "attention.mode",
            match m.mode {
                AttentionMode::Axial => "axial".into(),
                AttentionMode::Full => "full".into(),
            },
        );
        kv("attention.repeats", m.repeats.to_string());
        kv(
            "attention.span",
            match m.span {
                Span::Auto => "auto".into(),
                Span::Fixed(n) => n.to_string(),
            },
        );
        kv("attention.from_block", m.from_block.to_string());
        kv(
            "backbone.mode",
            match self.backbone.mode {
                BackboneMode::Toy => "toy".into(),
                BackboneMode::Fixture => "fixture".into(),
            },
        );
        kv("backbone.seed", self.backbone.seed.to_string());
        kv("backbone.trainable", self.backbone.trainable.to_string());
        kv("loss.pixel", format!("{:e}", w.pixel));
        kv("loss.hist", format!("{:e}", w.hist));
        kv("loss.tv", format!("{:e}", w.tv));
        kv("loss.gan", format!("{:e}", w.gan));
        kv("loss.huber_delta", format!("{:e}", self.loss.huber_delta));
        kv("loss.hist_eps", format!("{:e}", self.loss.hist_eps));
        kv("disc.width", self.disc.width.to_string());
        kv("train.lr", format!("{:e}", t.lr));
        kv("train.beta1", format!("{:e}", t.beta1));
        kv("train.beta2", format!("{:e}", t.beta2));
        kv("train.eps", format!("{:e}", t.eps));
        kv("train.steps", t.steps.to_string());
        kv("train.batch", t.batch.to_string());
        kv("train.seed", t.seed.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_published_hyperparameters() {
        let c = Config::default();
        assert_eq!((c.model.hidden, c.model.heads, c.model.head_dim), (256, 8, 64));
        assert_eq!(c.model.from_block, 3);
        assert_eq!(c.loss.weights, LossWeights { pixel: 100.0, hist: 2.0, tv: 50.0, gan: 1.0 });
    }

    #[test]
    fn serialisation_round_trips() {
        let mut c = Config::preset("standard-attention").unwrap();
        c.model.span = Span::Fixed(4);
        c.train.lr = 1e-5;
        c.loss.weights.hist = 0.25;
        assert_eq!(Config::parse_str(&c.to_kv_string()).unwrap(), c);
    }

    #[test]
    fn presets_switch_one_thing_each() {
        let base = Config::default();
        for name in PRESETS {
            let c = Config::preset(name).unwrap();
            let changed = [
                c.loss.weights.gan != base.loss.weights.gan,
                c.loss.weights.pixel != base.loss.weights.pixel,
                c.loss.weights.hist != base.loss.weights.hist,
                c.model.mode != base.model.mode,
                c.model.repeats != base.model.repeats,
            ]
            .iter()
            .filter(|&&b| b)
            .count();
            assert_eq!(changed, usize::from(*name != "full"), "{name}");
        }
    }

    #[test]
    fn bad_lines_are_reported() {
        assert!(Config::parse_str("loss.pixel 3").is_err());
        assert!(Config::parse_str("nope = 1").is_err());
        assert!(Config::parse_str("attention.mode = diagonal").is_err());
        assert!(Config::parse_str("attention.heads = 7").is_err());
        let c = Config::parse_str("# comment\nloss.gan = 0 # off\n").unwrap();
        assert_eq!(c.loss.weights.gan, 0.0);
    }
}
