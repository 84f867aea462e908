//! Run configuration and its flat `key = value` file format.
//!
//! Blank lines and lines starting with `#` are ignored. Every key below is
//! optional; unknown keys are rejected.
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `seed` | root seed for every random stream | 0 |
//! | `x_percent` | training share of the split, in percent | 80 |
//! | `rating_levels` | number of rating values / relation types `K` | 5 |
//! | `dim` | propagation width `d` | 16 |
//! | `layers` | propagation layers `L` | 2 |
//! | `input_dim` | width of the free user / sub-node embeddings | `dim` |
//! | `recon_hidden` | hidden width of the reconstruction heads | `dim` |
//! | `social_dim` | social encoder width `d_H` | 128 |
//! | `social_layers` | social encoder depth (1..=3) | 1 |
//! | `social_epochs` | phase-1 epochs `E_1` | 200 |
//! | `social_lr` | phase-1 learning rate | `lr` |
//! | `social_encoder` | `mi`, `gcn` or `gat` | `mi` |
//! | `epochs` | phase-2 epoch budget `E_2` | 200 |
//! | `lr` | phase-2 learning rate `η` | 0.001 |
//! | `batch_size` | interactions per mini-batch | 2048 |
//! | `full_batch` | one batch per epoch | false |
//! | `patience` | early-stop patience in epochs | 10 |
//! | `w_interaction` | `ω_1`, weight of the relation reconstruction loss | 0.01 |
//! | `w_social` | `ω_2`, weight of the social reconstruction loss | 0.01 |
//! | `w_reg` | `ω_r`, Frobenius penalty weight | 0.0001 |
//! | `negatives` | negatives drawn per reconstruction positive | 1 |
//! | `ablate` | `none`, `no-social`, `single-type`, `no-reconstruction` | `none` |

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::social::{SocialConfig, SocialEncoderKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    None,
    NoSocial,
    SingleType,
    NoReconstruction,
}

impl FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "no-social" => Ok(Self::NoSocial),
            "single-type" => Ok(Self::SingleType),
            "no-reconstruction" => Ok(Self::NoReconstruction),
            other => Err(Error::Config(format!("unknown ablation `{other}`"))),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::NoSocial => "no-social",
            Self::SingleType => "single-type",
            Self::NoReconstruction => "no-reconstruction",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub x_percent: f64,
    pub rating_levels: usize,
    pub dim: usize,
    pub layers: usize,
    pub input_dim: Option<usize>,
    pub recon_hidden: Option<usize>,
    pub social_dim: usize,
    pub social_layers: usize,
    pub social_epochs: usize,
    pub social_lr: Option<f64>,
    pub social_encoder: SocialEncoderKind,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub full_batch: bool,
    pub patience: usize,
    pub w_interaction: f64,
    pub w_social: f64,
    pub w_reg: f64,
    pub negatives: usize,
    pub ablate: Ablation,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            x_percent: 80.0,
            rating_levels: 5,
            dim: 16,
            layers: 2,
            input_dim: None,
            recon_hidden: None,
            social_dim: 128,
            social_layers: 1,
            social_epochs: 200,
            social_lr: None,
            social_encoder: SocialEncoderKind::Mi,
            epochs: 200,
            lr: 1e-3,
            batch_size: 2048,
            full_batch: false,
            patience: 10,
            w_interaction: 0.01,
            w_social: 0.01,
            w_reg: 1e-4,
            negatives: 1,
            ablate: Ablation::None,
        }
    }
}

/// Loss weights after ablation switches are applied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub interaction: f64,
    pub social: f64,
    pub reg: f64,
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl Config {
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "x_percent",
        "rating_levels",
        "dim",
        "layers",
        "input_dim",
        "recon_hidden",
        "social_dim",
        "social_layers",
        "social_epochs",
        "social_lr",
        "social_encoder",
        "epochs",
        "lr",
        "batch_size",
        "full_batch",
        "patience",
        "w_interaction",
        "w_social",
        "w_reg",
        "negatives",
        "ablate",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "seed" => self.seed = parse(key, value)?,
            "x_percent" => self.x_percent = parse(key, value)?,
            "rating_levels" => self.rating_levels = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "input_dim" => self.input_dim = Some(parse(key, value)?),
            "recon_hidden" => self.recon_hidden = Some(parse(key, value)?),
            "social_dim" => self.social_dim = parse(key, value)?,
            "social_layers" => self.social_layers = parse(key, value)?,
            "social_epochs" => self.social_epochs = parse(key, value)?,
            "social_lr" => self.social_lr = Some(parse(key, value)?),
            "social_encoder" => self.social_encoder = value.parse()?,
            "epochs" => self.epochs = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "full_batch" => self.full_batch = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "w_interaction" => self.w_interaction = parse(key, value)?,
            "w_social" => self.w_social = parse(key, value)?,
            "w_reg" => self.w_reg = parse(key, value)?,
            "negatives" => self.negatives = parse(key, value)?,
            "ablate" => self.ablate = value.parse()?,
            other => {
                return Err(Error::Config(format!(
                    "unknown configuration key `{other}`"
                )))
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "seed" => self.seed.to_string(),
            "x_percent" => self.x_percent.to_string(),
            "rating_levels" => self.rating_levels.to_string(),
            "dim" => self.dim.to_string(),
            "layers" => self.layers.to_string(),
            "input_dim" => self.input_dim().to_string(),
            "recon_hidden" => self.recon_hidden().to_string(),
            "social_dim" => self.social_dim.to_string(),
            "social_layers" => self.social_layers.to_string(),
            "social_epochs" => self.social_epochs.to_string(),
            "social_lr" => self.social_lr().to_string(),
            "social_encoder" => self.social_encoder.to_string(),
            "epochs" => self.epochs.to_string(),
            "lr" => self.lr.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "full_batch" => self.full_batch.to_string(),
            "patience" => self.patience.to_string(),
            "w_interaction" => self.w_interaction.to_string(),
            "w_social" => self.w_social.to_string(),
            "w_reg" => self.w_reg.to_string(),
            "negatives" => self.negatives.to_string(),
            "ablate" => self.ablate.to_string(),
            _ => return None,
        })
    }

    /// Parses `key = value` lines on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    i + 1
                ))
            })?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// Canonical `key = value` rendering; parses back to an equal config.
    pub fn to_kv_string(&self) -> String {
        Self::KEYS
            .iter()
            .filter_map(|k| self.get(k).map(|v| format!("{k} = {v}\n")))
            .collect()
    }

    /// The same configuration with every derived default written out, as
    /// it reads back from its own text form.
    pub fn resolved(&self) -> Self {
        Self {
            input_dim: Some(self.input_dim()),
            recon_hidden: Some(self.recon_hidden()),
            social_lr: Some(self.social_lr()),
            ..self.clone()
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim.unwrap_or(self.dim)
    }

    pub fn recon_hidden(&self) -> usize {
        self.recon_hidden.unwrap_or(self.dim)
    }

    pub fn social_lr(&self) -> f64 {
        self.social_lr.unwrap_or(self.lr)
    }

    pub fn uses_social(&self) -> bool {
        self.ablate != Ablation::NoSocial
    }

    /// Relation types in the interaction graph: 1 for the single-type variant.
    pub fn graph_relations(&self) -> usize {
        if self.ablate == Ablation::SingleType {
            1
        } else {
            self.rating_levels
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        let recon_on = self.ablate != Ablation::NoReconstruction;
        LossWeights {
            interaction: if recon_on && self.graph_relations() >= 2 {
                self.w_interaction
            } else {
                0.0
            },
            social: if recon_on && self.uses_social() {
                self.w_social
            } else {
                0.0
            },
            reg: self.w_reg,
        }
    }

    pub fn social_config(&self) -> SocialConfig {
        SocialConfig {
            dim: self.social_dim,
            layers: self.social_layers,
            epochs: self.social_epochs,
            lr: self.social_lr(),
            seed: self.seed,
            kind: self.social_encoder,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.x_percent > 0.0 && self.x_percent < 100.0) {
            return bad("x_percent must lie strictly between 0 and 100");
        }
        if self.rating_levels == 0 {
            return bad("rating_levels must be at least 1");
        }
        if self.dim == 0 || self.layers == 0 {
            return bad("dim and layers must be positive");
        }
        if self.uses_social() && !self.dim.is_multiple_of(2) {
            return bad("dim must be even when the social matrix is injected");
        }
        if self.epochs == 0
            || (self.uses_social()
                && self.social_epochs == 0
                && self.social_encoder == SocialEncoderKind::Mi)
        {
            return bad("epoch budgets must be at least 1");
        }
        if self.batch_size == 0 || self.negatives == 0 {
            return bad("batch_size and negatives must be positive");
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return bad("lr must be positive");
        }
        if [self.w_interaction, self.w_social, self.w_reg]
            .iter()
            .any(|w| *w < 0.0 || !w.is_finite())
        {
            return bad("loss weights must be non-negative");
        }
        if self.uses_social() {
            self.social_config().validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_text() {
        let mut cfg = Config::default();
        cfg.set("dim", "8").unwrap();
        cfg.set("ablate", "single-type").unwrap();
        cfg.set("social_lr", "0.01").unwrap();
        let back = Config::parse_str(&cfg.to_kv_string()).unwrap();
        assert_eq!(back.dim, 8);
        assert_eq!(back.ablate, Ablation::SingleType);
        assert_eq!(back.to_kv_string(), cfg.to_kv_string());
    }

    #[test]
    fn comments_and_errors() {
        let cfg = Config::parse_str("# comment\n\nlr = 0.01\n").unwrap();
        assert_eq!(cfg.lr, 0.01);
        assert!(Config::parse_str("nope = 1").is_err());
        assert!(Config::parse_str("lr 0.1").is_err());
        assert!(Config::parse_str("dim = x").is_err());
    }

    #[test]
    fn ablation_weights() {
        let mut cfg = Config::default();
        assert_eq!(cfg.loss_weights().interaction, 0.01);
        cfg.ablate = Ablation::NoReconstruction;
        let w = cfg.loss_weights();
        assert_eq!((w.interaction, w.social), (0.0, 0.0));
        cfg.ablate = Ablation::SingleType;
        assert_eq!(cfg.loss_weights().interaction, 0.0);
        assert_eq!(cfg.graph_relations(), 1);
        cfg.ablate = Ablation::NoSocial;
        assert_eq!(cfg.loss_weights().social, 0.0);
    }

    #[test]
    fn validation() {
        assert!(Config::default().validate().is_ok());
        let cfg = Config {
            dim: 7,
            ..Config::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = Config {
            w_reg: -1.0,
            ..Config::default()
        };
        assert!(cfg.validate().is_err());
    }
}
