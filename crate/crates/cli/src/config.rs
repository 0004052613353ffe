//! TOML configuration files for `fit` and `account`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dpsynth_core::neural::{DecoderHead, VarianceMode};
use dpsynth_core::privacy::{default_orders, Mechanism, PrivacySpec};
use dpsynth_core::trainer::TrainConfig;
use dpsynth_core::HyperParams;
use serde::Deserialize;

/// Everything `fit` needs. Every field may come from the file, a flag, or
/// the default; flags win.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub train_log: Option<PathBuf>,
    pub seed: u64,
    pub eps: f64,
    pub delta: f64,
    pub encoder_fraction: f64,
    pub pca_fraction: f64,
    pub dim_reduce: usize,
    pub components: usize,
    pub em_iterations: usize,
    pub hidden: usize,
    pub batch: usize,
    pub clip: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub mc_samples: usize,
    pub sgd_noise: Option<f64>,
    pub head: DecoderHead,
    pub variance: VarianceMode,
    pub normalize_latent: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PrivacySpec::default();
        let h = HyperParams::default();
        RunConfig {
            data: None,
            schema: None,
            out: None,
            report: None,
            train_log: None,
            seed: 0,
            eps: p.epsilon_target,
            delta: p.delta,
            encoder_fraction: p.encoder_fraction,
            pca_fraction: p.pca_fraction,
            dim_reduce: h.d_prime,
            components: h.components,
            em_iterations: h.em_iterations,
            hidden: h.hidden,
            batch: h.train.batch_size,
            clip: h.train.clip_norm,
            learning_rate: h.train.learning_rate,
            epochs: h.train.epochs,
            mc_samples: h.train.mc_samples,
            sgd_noise: h.fixed_sgd_noise,
            head: h.head,
            variance: h.variance_mode,
            normalize_latent: h.normalize_latent,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn privacy(&self) -> PrivacySpec {
        PrivacySpec {
            epsilon_target: self.eps,
            delta: self.delta,
            encoder_fraction: self.encoder_fraction,
            pca_fraction: self.pca_fraction,
            orders: default_orders(),
        }
    }

    pub fn hyper(&self) -> HyperParams {
        HyperParams {
            d_prime: self.dim_reduce,
            components: self.components,
            em_iterations: self.em_iterations,
            hidden: self.hidden,
            train: TrainConfig {
                batch_size: self.batch,
                clip_norm: self.clip,
                noise_multiplier: HyperParams::default().train.noise_multiplier,
                learning_rate: self.learning_rate,
                epochs: self.epochs,
                mc_samples: self.mc_samples,
                seed: self.seed,
            },
            fixed_sgd_noise: self.sgd_noise,
            head: self.head,
            variance_mode: self.variance,
            normalize_latent: self.normalize_latent,
        }
    }
}

/// A mechanism list for a budget-only dry run.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccountConfig {
    pub delta: f64,
    #[serde(default = "default_orders")]
    pub orders: Vec<f64>,
    pub mechanisms: Vec<Mechanism>,
}

impl AccountConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
