//! Run configuration: grid geometry, model dimensions, optimizer settings,
//! and data paths. Serialized as flat TOML; command-line flags override
//! file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qotr_core::generator::ModelDims;
use qotr_core::geometry::GridSpec;
use qotr_core::losses::LossWeights;
use qotr_core::qem::NoiseKind;
use qotr_core::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    // grid
    pub height: usize,
    pub width: usize,
    pub margin: usize,
    pub patch_size: usize,
    pub overlap: usize,
    // model dims
    pub d_model: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub n_heads: usize,
    pub qem_blocks: usize,
    pub noise_dim: usize,
    pub noise_dist: String,
    pub disc_scales: usize,
    // optimizer
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    // schedule
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    // loss weights
    pub lambda_rec: f64,
    pub lambda_perceptual: f64,
    // run
    pub seed: u64,
    pub data_dir: PathBuf,
    pub diffaug: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            height: 64,
            width: 64,
            margin: 16,
            patch_size: 8,
            overlap: 4,
            d_model: 64,
            enc_layers: 4,
            dec_layers: 4,
            n_heads: 4,
            qem_blocks: 2,
            noise_dim: 16,
            noise_dist: "normal".into(),
            disc_scales: 2,
            lr: 1e-4,
            beta1: 0.0,
            beta2: 0.99,
            weight_decay: 1e-4,
            batch_size: 8,
            epochs: 40,
            warmup_epochs: 10,
            lambda_rec: 5.0,
            lambda_perceptual: 10.0,
            seed: 42,
            data_dir: PathBuf::from("data"),
            diffaug: true,
        }
    }
}

impl TrainConfig {
    pub fn grid(&self) -> GridSpec {
        GridSpec::new(
            self.height,
            self.width,
            self.margin,
            self.patch_size,
            self.overlap,
        )
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            d_model: self.d_model,
            enc_layers: self.enc_layers,
            dec_layers: self.dec_layers,
            n_heads: self.n_heads,
            qem_blocks: self.qem_blocks,
            noise_dim: self.noise_dim,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_rec: self.lambda_rec,
            lambda_perceptual: self.lambda_perceptual,
        }
    }

    pub fn noise_kind(&self) -> Result<NoiseKind> {
        match self.noise_dist.as_str() {
            "normal" => Ok(NoiseKind::Normal),
            "uniform" => Ok(NoiseKind::Uniform),
            other => Err(Error::Config(format!(
                "noise_dist must be \"normal\" or \"uniform\", got \"{other}\""
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid().validate()?;
        self.noise_kind()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.lambda_rec < 0.0 || self.lambda_perceptual < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad config file: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip() {
        let cfg = TrainConfig {
            epochs: 3,
            warmup_epochs: 2,
            ..TrainConfig::default()
        };
        let text = cfg.to_toml();
        let back = TrainConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = TrainConfig::from_toml("epochs = 7\nwarmup_epochs = 3\nseed = 1\n").unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.d_model, TrainConfig::default().d_model);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(TrainConfig::from_toml("no_such_key = 1\n").is_err());
    }

    #[test]
    fn invalid_grid_rejected() {
        assert!(TrainConfig::from_toml("height = 65\n").is_err());
    }

    #[test]
    fn warmup_must_fit_epochs() {
        assert!(TrainConfig::from_toml("epochs = 5\nwarmup_epochs = 6\n").is_err());
    }

    #[test]
    fn noise_kind_parsing() {
        let cfg = TrainConfig::from_toml("noise_dist = \"uniform\"\n").unwrap();
        assert_eq!(cfg.noise_kind().unwrap(), NoiseKind::Uniform);
        assert!(TrainConfig::from_toml("noise_dist = \"poisson\"\n").is_err());
    }
}
