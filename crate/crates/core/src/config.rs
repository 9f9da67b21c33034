//! Run configuration. Serialized as a flat JSON object; every field has a
//! default, so `{}` reproduces the reference settings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Activation;
use crate::error::{Error, Result};
use crate::loss::{AnnealSchedule, GraphMode, LossToggles, LossWeights};

/// Per-epoch prior-loss increment tuned for CUB.
pub const EPSILON_INCREMENT_CUB: f64 = 0.0717;
/// Per-epoch prior-loss increment tuned for SUN.
pub const EPSILON_INCREMENT_SUN: f64 = 0.02271;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub latent_dim: usize,
    pub image_encoder_hidden: usize,
    pub image_decoder_hidden: usize,
    pub attribute_encoder_hidden: usize,
    pub attribute_decoder_hidden: usize,
    pub activation: Activation,

    pub alpha_start: usize,
    pub alpha_end: usize,
    pub alpha_increment: f64,
    pub beta_start: usize,
    pub beta_end: usize,
    pub beta_increment: f64,
    pub gamma_start: usize,
    pub gamma_end: usize,
    pub gamma_increment: f64,
    pub epsilon_start: usize,
    pub epsilon_end: usize,
    pub epsilon_increment: f64,
    pub margin: f64,

    pub use_ca: bool,
    pub use_da: bool,
    pub use_prior: bool,
    pub graph_mode: GraphMode,
    /// Use the squared 2-Wasserstein distance for distribution alignment.
    pub squared_w2: bool,
    /// Cross-decode distribution means instead of reparameterized samples.
    pub cross_decode_mean: bool,

    pub seed: u64,

    pub classifier_epochs: usize,
    pub classifier_learning_rate: f64,
    pub classifier_batch_size: usize,
    pub seen_samples_per_class: usize,
    pub unseen_samples_per_class: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 50,
            learning_rate: 0.00015,
            latent_dim: 64,
            image_encoder_hidden: 1560,
            image_decoder_hidden: 1660,
            attribute_encoder_hidden: 1450,
            attribute_decoder_hidden: 660,
            activation: Activation::Relu,
            alpha_start: 0,
            alpha_end: 93,
            alpha_increment: 0.003,
            beta_start: 6,
            beta_end: 75,
            beta_increment: 0.045,
            gamma_start: 6,
            gamma_end: 22,
            gamma_increment: 0.55,
            epsilon_start: 0,
            epsilon_end: 49,
            epsilon_increment: EPSILON_INCREMENT_CUB,
            margin: 1.0,
            use_ca: true,
            use_da: true,
            use_prior: true,
            graph_mode: GraphMode::Full,
            squared_w2: false,
            cross_decode_mean: false,
            seed: 0,
            classifier_epochs: 20,
            classifier_learning_rate: 1e-3,
            classifier_batch_size: 32,
            seen_samples_per_class: 200,
            unseen_samples_per_class: 400,
        }
    }
}

/// Resolved per-term schedules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedules {
    pub alpha: AnnealSchedule,
    pub beta: AnnealSchedule,
    pub gamma: AnnealSchedule,
    pub epsilon: AnnealSchedule,
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn schedules(&self) -> Schedules {
        Schedules {
            alpha: AnnealSchedule {
                start_epoch: self.alpha_start,
                end_epoch: self.alpha_end,
                increment: self.alpha_increment,
            },
            beta: AnnealSchedule {
                start_epoch: self.beta_start,
                end_epoch: self.beta_end,
                increment: self.beta_increment,
            },
            gamma: AnnealSchedule {
                start_epoch: self.gamma_start,
                end_epoch: self.gamma_end,
                increment: self.gamma_increment,
            },
            epsilon: AnnealSchedule {
                start_epoch: self.epsilon_start,
                end_epoch: self.epsilon_end,
                increment: self.epsilon_increment,
            },
        }
    }

    pub fn toggles(&self) -> LossToggles {
        LossToggles {
            use_ca: self.use_ca,
            use_da: self.use_da,
            use_prior: self.use_prior,
            graph_mode: self.graph_mode,
        }
        .normalized()
    }

    /// Loss weights in effect during `epoch` (1-based).
    pub fn weights_at(&self, epoch: usize) -> LossWeights {
        let s = self.schedules();
        LossWeights {
            alpha: s.alpha.value(epoch),
            beta: s.beta.value(epoch),
            gamma: s.gamma.value(epoch),
            epsilon: s.epsilon.value(epoch),
            margin: self.margin,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("latent_dim", self.latent_dim),
            ("image_encoder_hidden", self.image_encoder_hidden),
            ("image_decoder_hidden", self.image_decoder_hidden),
            ("attribute_encoder_hidden", self.attribute_encoder_hidden),
            ("attribute_decoder_hidden", self.attribute_decoder_hidden),
            ("classifier_batch_size", self.classifier_batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("classifier_learning_rate", self.classifier_learning_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::Config("margin must be nonnegative".into()));
        }
        let s = self.schedules();
        for sch in [s.alpha, s.beta, s.gamma, s.epsilon] {
            sch.validate()?;
        }
        Ok(())
    }

    /// Short description of the loss configuration and seed.
    pub fn fingerprint(&self) -> String {
        format!("{}/seed={}", self.toggles().fingerprint(), self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_reproduces_defaults() {
        let cfg = TrainConfig::from_json("{}").unwrap();
        assert_eq!(cfg, TrainConfig::default());
        assert_eq!(cfg.epochs, 100);
        assert_eq!(cfg.batch_size, 50);
        assert_eq!(cfg.learning_rate, 0.00015);
        assert_eq!(cfg.latent_dim, 64);
        assert_eq!(cfg.image_encoder_hidden, 1560);
        assert_eq!(cfg.image_decoder_hidden, 1660);
        assert_eq!(cfg.attribute_encoder_hidden, 1450);
        assert_eq!(cfg.attribute_decoder_hidden, 660);
        assert_eq!(cfg.margin, 1.0);
    }

    #[test]
    fn epsilon_cub_saturates_at_49() {
        let cfg = TrainConfig::default();
        let eps = cfg.schedules().epsilon;
        assert!((eps.value(49) - 3.5133).abs() < 1e-9);
        assert_eq!(eps.value(60), eps.value(49));
    }

    #[test]
    fn unknown_fields_and_bad_values_are_rejected() {
        assert!(TrainConfig::from_json(r#"{"epoch": 3}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"batch_size": 0}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"beta_start": 80}"#).is_err());
        let cfg = TrainConfig::from_json(r#"{"graph_mode": "none", "epochs": 3}"#).unwrap();
        assert!(!cfg.toggles().use_prior);
    }

    #[test]
    fn json_round_trip() {
        let cfg = TrainConfig {
            seed: 17,
            graph_mode: GraphMode::Flat,
            ..Default::default()
        };
        assert_eq!(TrainConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
}
