//! Run configuration: one TOML document covering every stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::linguistic::{PrecomputedBackend, SslBackend, StubBackend};
use crate::losses::{FdrlConfig, LossWeights};
use crate::model::ModelConfig;
use crate::perturbation::PerturbConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SslKind {
    Stub,
    Precomputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SslConfig {
    pub backend: SslKind,
    pub dim: usize,
    /// Projection seed of the stub backend.
    pub seed: u64,
    /// Feature directory of the precomputed backend.
    pub dir: Option<PathBuf>,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            backend: SslKind::Stub,
            dim: StubBackend::DEFAULT_DIM,
            seed: 0,
            dir: None,
        }
    }
}

impl SslConfig {
    pub fn build(&self) -> Result<Box<dyn SslBackend>> {
        match self.backend {
            SslKind::Stub => Ok(Box::new(StubBackend::new(self.dim, self.seed)?)),
            SslKind::Precomputed => {
                let dir = self
                    .dir
                    .as_ref()
                    .ok_or_else(|| Error::config("ssl.dir is required for the precomputed backend"))?;
                Ok(Box::new(PrecomputedBackend::new(dir, self.dim)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub cache_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    /// Newline-delimited training metrics.
    pub metrics_log: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            cache_dir: PathBuf::from("cache"),
            checkpoint_dir: PathBuf::from("checkpoints"),
            metrics_log: PathBuf::from("metrics.ndjson"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub stft: StftConfig,
    pub features: FeatureConfig,
    pub perturb: PerturbConfig,
    pub ssl: SslConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub fdrl: FdrlConfig,
    pub loss: LossWeights,
    pub paths: PathsConfig,
}

fn sha256_json<T: Serialize>(v: &T) -> Result<String> {
    // serde_json::Value keeps object keys sorted, so the encoding is canonical
    let canonical = serde_json::to_string(&serde_json::to_value(v)?)?;
    Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
}

impl RunConfig {
    /// Desk-scale preset: tiny model with a matching stub backend.
    pub fn tiny() -> Self {
        let model = ModelConfig::tiny();
        Self {
            ssl: SslConfig {
                dim: model.d_ssl,
                ..SslConfig::default()
            },
            model,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("reading {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Hash of the whole configuration.
    pub fn hash(&self) -> Result<String> {
        sha256_json(self)
    }

    /// Hash of only the settings that shape cached features.
    pub fn feature_hash(&self) -> Result<String> {
        sha256_json(&(&self.stft, &self.features, &self.perturb, &self.ssl))
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.perturb.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.fdrl.validate()?;
        self.loss.validate()?;
        if self.stft.hop_samples != self.model.hop() {
            return Err(Error::config(format!(
                "stft hop {} differs from the decoder upsampling product {}",
                self.stft.hop_samples,
                self.model.hop()
            )));
        }
        if self.stft.n_bins() != self.model.n_linear_bins {
            return Err(Error::config(format!(
                "stft gives {} bins, model expects {}",
                self.stft.n_bins(),
                self.model.n_linear_bins
            )));
        }
        if self.features.n_mels != self.model.n_mels_ref {
            return Err(Error::config(format!(
                "features.n_mels {} differs from model.n_mels_ref {}",
                self.features.n_mels, self.model.n_mels_ref
            )));
        }
        if self.ssl.dim != self.model.d_ssl {
            return Err(Error::config(format!(
                "ssl.dim {} differs from model.d_ssl {}",
                self.ssl.dim, self.model.d_ssl
            )));
        }
        if self.fdrl.sample_rate != self.stft.sample_rate {
            return Err(Error::config("fdrl.sample_rate must equal stft.sample_rate"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_consistent() {
        RunConfig::default().validate().unwrap();
        RunConfig::tiny().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_preserves_hash() {
        let cfg = RunConfig::tiny();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
        assert_eq!(cfg.hash().unwrap().len(), 64);
    }

    #[test]
    fn partial_document_uses_defaults() {
        let cfg = RunConfig::from_toml("[train]\nbatch_size = 2\n").unwrap();
        assert_eq!(cfg.train.batch_size, 2);
        assert_eq!(cfg.model, ModelConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_toml("[train]\nbatchsize = 2\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[speakers]\nn = 2\n"), Err(Error::Config(_))));
    }

    #[test]
    fn inconsistent_sections_rejected() {
        assert!(RunConfig::from_toml("[stft]\nhop_samples = 256\n").is_err());
        assert!(RunConfig::from_toml("[ssl]\ndim = 768\n").is_err());
    }

    #[test]
    fn feature_hash_ignores_training_settings() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.train.max_steps = 10;
        assert_eq!(a.feature_hash().unwrap(), b.feature_hash().unwrap());
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        b.perturb.seed = 9;
        assert_ne!(a.feature_hash().unwrap(), b.feature_hash().unwrap());
    }
}
