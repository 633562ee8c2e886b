use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::discriminator::MIN_INPUT_SIDE;
use crate::extractor::DEFAULT_TAP;
use crate::generator::LAYERS_PER_HALF;
use crate::losses::{AdversarialVariant, LossWeights};
use crate::nn::L1Reduction;

/// Loss-term ablation presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// Adversarial and perceptual terms only.
    #[serde(rename = "A+P")]
    AP,
    /// Adds feature regularization.
    #[serde(rename = "A+P+FR")]
    APFr,
    /// All four terms.
    #[serde(rename = "A+P+FR+S")]
    APFrS,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::AP, Preset::APFr, Preset::APFrS];

    /// Zeroes the weights of the terms the preset leaves out.
    pub fn apply(self, mut w: LossWeights) -> LossWeights {
        match self {
            Preset::AP => {
                w.gamma3 = 0.0;
                w.gamma4 = 0.0;
            }
            Preset::APFr => w.gamma3 = 0.0,
            Preset::APFrS => {}
        }
        w
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::AP => "A+P",
            Preset::APFr => "A+P+FR",
            Preset::APFrS => "A+P+FR+S",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_ascii_uppercase();
        match norm.as_str() {
            "A+P" => Ok(Preset::AP),
            "A+P+FR" => Ok(Preset::APFr),
            "A+P+FR+S" => Ok(Preset::APFrS),
            _ => Err(Error::Config(format!("unknown preset {s:?} (expected A+P, A+P+FR or A+P+FR+S)"))),
        }
    }
}

/// Training hyper-parameters. The config file is flat `key = value` text using the field names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lr_gamma: f64,
    pub lr_step: u64,
    pub max_iterations: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub gamma4: f64,
    /// When set, overrides the weights of the terms it excludes with 0.
    pub preset: Option<Preset>,
    pub patch_size: usize,
    /// Checkpoint every this many iterations (0 writes only the final checkpoint).
    pub checkpoint_interval: u64,
    pub adversarial: AdversarialVariant,
    /// Let the feature-regularization gradient flow through the clean-image encoder pass too.
    pub symmetric_feature_grad: bool,
    pub fr_reduction: L1Reduction,
    /// Encoder layer (1–11) supervised by the feature-regularization term.
    pub feature_layer: usize,
    pub perceptual_tap: String,
    /// Extractor weight file; the seeded random extractor is used when absent.
    pub extractor_weights: Option<PathBuf>,
    pub extractor_seed: u64,
    pub train_discriminator: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-3,
            lr_gamma: 0.5,
            lr_step: 5000,
            max_iterations: 300_000,
            batch_size: 4,
            seed: 0,
            gamma1: w.gamma1,
            gamma2: w.gamma2,
            gamma3: w.gamma3,
            gamma4: w.gamma4,
            preset: None,
            patch_size: 256,
            checkpoint_interval: 5000,
            adversarial: AdversarialVariant::Saturating,
            symmetric_feature_grad: false,
            fr_reduction: L1Reduction::Sum,
            feature_layer: LAYERS_PER_HALF,
            perceptual_tap: DEFAULT_TAP.to_string(),
            extractor_weights: None,
            extractor_seed: 0,
            train_discriminator: true,
        }
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Some(true),
        "false" | "no" | "0" | "off" => Some(false),
        _ => None,
    }
}

impl TrainConfig {
    /// Weights after applying the preset.
    pub fn weights(&self) -> LossWeights {
        let w = LossWeights {
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            gamma3: self.gamma3,
            gamma4: self.gamma4,
        };
        self.preset.map_or(w, |p| p.apply(w))
    }

    pub fn set_weights(&mut self, w: LossWeights) {
        self.gamma1 = w.gamma1;
        self.gamma2 = w.gamma2;
        self.gamma3 = w.gamma3;
        self.gamma4 = w.gamma4;
    }

    /// `learning_rate · lr_gamma^⌊iteration / lr_step⌋`.
    pub fn lr_at(&self, iteration: u64) -> f64 {
        let drops = (iteration / self.lr_step.max(1)).min(i32::MAX as u64) as i32;
        self.learning_rate * self.lr_gamma.powi(drops)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return fail(format!("lr_gamma must lie in (0, 1], got {}", self.lr_gamma));
        }
        if self.lr_step < 1 {
            return fail("lr_step must be at least 1".into());
        }
        if self.max_iterations < 1 {
            return fail("max_iterations must be at least 1".into());
        }
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1".into());
        }
        if self.patch_size == 0 || self.patch_size % 4 != 0 {
            return fail(format!("patch_size must be a positive multiple of 4, got {}", self.patch_size));
        }
        let w = self.weights();
        if (w.gamma1 > 0.0 || self.train_discriminator) && self.patch_size < MIN_INPUT_SIDE {
            return fail(format!(
                "patch_size {} is below the discriminator minimum of {MIN_INPUT_SIDE}",
                self.patch_size
            ));
        }
        if !(1..=LAYERS_PER_HALF).contains(&self.feature_layer) {
            return fail(format!("feature_layer must be in 1..={LAYERS_PER_HALF}, got {}", self.feature_layer));
        }
        w.validate()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |reason: String| Error::Parse {
                what: "config entry",
                line: i + 1,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key = value, got {line:?}")))?;
            c.set(key.trim(), value.trim()).map_err(|e| bad(e.to_string()))?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            parse_bool(v).ok_or_else(|| Error::Config(format!("{key}: expected true or false, got {v:?}")))
        }
        match key {
            "learning_rate" => self.learning_rate = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "lr_gamma" => self.lr_gamma = num(key, value)?,
            "lr_step" => self.lr_step = num(key, value)?,
            "max_iterations" => self.max_iterations = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "gamma1" => self.gamma1 = num(key, value)?,
            "gamma2" => self.gamma2 = num(key, value)?,
            "gamma3" => self.gamma3 = num(key, value)?,
            "gamma4" => self.gamma4 = num(key, value)?,
            "preset" => {
                self.preset = match value {
                    "" | "none" => None,
                    v => Some(v.parse()?),
                }
            }
            "patch_size" => self.patch_size = num(key, value)?,
            "checkpoint_interval" => self.checkpoint_interval = num(key, value)?,
            "adversarial" => {
                self.adversarial = match value {
                    "saturating" => AdversarialVariant::Saturating,
                    "non-saturating" => AdversarialVariant::NonSaturating,
                    v => return Err(Error::Config(format!("adversarial: expected saturating or non-saturating, got {v:?}"))),
                }
            }
            "symmetric_feature_grad" => self.symmetric_feature_grad = flag(key, value)?,
            "fr_reduction" => {
                self.fr_reduction = match value {
                    "sum" => L1Reduction::Sum,
                    "mean" => L1Reduction::Mean,
                    v => return Err(Error::Config(format!("fr_reduction: expected sum or mean, got {v:?}"))),
                }
            }
            "feature_layer" => self.feature_layer = num(key, value)?,
            "perceptual_tap" => self.perceptual_tap = value.to_string(),
            "extractor_weights" => {
                self.extractor_weights = match value {
                    "" | "none" => None,
                    v => Some(PathBuf::from(v)),
                }
            }
            "extractor_seed" => self.extractor_seed = num(key, value)?,
            "train_discriminator" => self.train_discriminator = flag(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Serializes to the `key = value` format accepted by [`parse`](Self::parse).
    pub fn to_text(&self) -> String {
        let adversarial = match self.adversarial {
            AdversarialVariant::Saturating => "saturating",
            AdversarialVariant::NonSaturating => "non-saturating",
        };
        let fr = match self.fr_reduction {
            L1Reduction::Sum => "sum",
            L1Reduction::Mean => "mean",
        };
        let preset = self.preset.map_or_else(|| "none".to_string(), |p| p.to_string());
        let weights = self
            .extractor_weights
            .as_ref()
            .map_or_else(|| "none".to_string(), |p| p.display().to_string());
        [
            format!("learning_rate = {}", self.learning_rate),
            format!("weight_decay = {}", self.weight_decay),
            format!("lr_gamma = {}", self.lr_gamma),
            format!("lr_step = {}", self.lr_step),
            format!("max_iterations = {}", self.max_iterations),
            format!("batch_size = {}", self.batch_size),
            format!("seed = {}", self.seed),
            format!("gamma1 = {}", self.gamma1),
            format!("gamma2 = {}", self.gamma2),
            format!("gamma3 = {}", self.gamma3),
            format!("gamma4 = {}", self.gamma4),
            format!("preset = {preset}"),
            format!("patch_size = {}", self.patch_size),
            format!("checkpoint_interval = {}", self.checkpoint_interval),
            format!("adversarial = {adversarial}"),
            format!("symmetric_feature_grad = {}", self.symmetric_feature_grad),
            format!("fr_reduction = {fr}"),
            format!("feature_layer = {}", self.feature_layer),
            format!("perceptual_tap = {}", self.perceptual_tap),
            format!("extractor_weights = {weights}"),
            format!("extractor_seed = {}", self.extractor_seed),
            format!("train_discriminator = {}", self.train_discriminator),
        ]
        .join("\n")
            + "\n"
    }
}
