//! Per-clip feature extraction: the four aligned frame tracks used for
//! training plus the utterance-level reference mel.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::{
    frame_energy, mel_filterbank, mel_spectrogram, normalize_energy, resample, stft, AudioClip, MelFilterbank,
    MelNorm, StftConfig, ENERGY_EPSILON,
};
use crate::error::{Error, Result};
use crate::linguistic::{extract_features, retime_to_hop, SslBackend, SSL_SAMPLE_RATE};
use crate::perturbation::{perturb_timbre, PerturbConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Mel bands of the reference-encoder input.
    pub n_mels: usize,
    pub mel_f_min: f64,
    /// `None` means Nyquist.
    pub mel_f_max: Option<f64>,
    pub mel_norm: MelNorm,
    pub energy_epsilon: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            n_mels: 128,
            mel_f_min: 0.0,
            mel_f_max: None,
            mel_norm: MelNorm::None,
            energy_epsilon: ENERGY_EPSILON,
        }
    }
}

/// Aligned tracks of one clip; every grid has `n_frames` columns and the
/// waveform is zero-padded to `n_frames * hop` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipFeatures {
    pub id: String,
    /// `bins x T` magnitude.
    pub linear: Array2<f32>,
    /// `n_mels x T` log-mel over the whole utterance.
    pub mel: Array2<f32>,
    /// Log-mean normalized over the whole utterance.
    pub energy: Vec<f32>,
    /// `D_ssl x T`, extracted from the perturbed clip.
    pub ling: Array2<f32>,
    pub waveform: Vec<f32>,
}

impl ClipFeatures {
    pub fn n_frames(&self) -> usize {
        self.linear.ncols()
    }

    pub fn check(&self, hop: usize) -> Result<()> {
        let t = self.n_frames();
        if self.mel.ncols() != t || self.energy.len() != t || self.ling.ncols() != t || self.waveform.len() != t * hop {
            return Err(Error::dim(format!("feature tracks of {} are misaligned", self.id)));
        }
        Ok(())
    }
}

/// Deterministic per-clip seed so each clip gets its own perturbation draw.
pub fn clip_seed(base: u64, id: &str) -> u64 {
    let digest = Sha256::new().chain_update(base.to_le_bytes()).chain_update(id.as_bytes()).finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub struct FeatureExtractor<'a> {
    stft: StftConfig,
    filterbank: MelFilterbank,
    energy_epsilon: f64,
    backend: &'a dyn SslBackend,
}

impl<'a> FeatureExtractor<'a> {
    pub fn new(stft_cfg: &StftConfig, cfg: &FeatureConfig, backend: &'a dyn SslBackend) -> Result<Self> {
        stft_cfg.validate()?;
        let f_max = cfg.mel_f_max.unwrap_or(stft_cfg.sample_rate as f64 / 2.0);
        let filterbank = mel_filterbank(stft_cfg, cfg.n_mels, cfg.mel_f_min, f_max, cfg.mel_norm)?;
        Ok(Self {
            stft: stft_cfg.clone(),
            filterbank,
            energy_epsilon: cfg.energy_epsilon,
            backend,
        })
    }

    pub fn stft_config(&self) -> &StftConfig {
        &self.stft
    }

    fn at_model_rate(&self, clip: &AudioClip) -> Result<AudioClip> {
        if clip.is_empty() {
            return Err(Error::domain("clip has no samples"));
        }
        resample(clip, self.stft.sample_rate)
    }

    /// `(linear, normalized energy)` of a clip at the model rate.
    pub fn linear_and_energy(&self, clip: &AudioClip) -> Result<(Array2<f32>, Vec<f32>)> {
        let clip = self.at_model_rate(clip)?;
        let spec = stft(&clip, &self.stft)?;
        let energy = normalize_energy(&frame_energy(&spec), self.energy_epsilon)?;
        Ok((spec.frames, energy.values.iter().map(|&v| v as f32).collect()))
    }

    /// Utterance-level log-mel for the reference encoder.
    pub fn reference_mel(&self, clip: &AudioClip) -> Result<Array2<f32>> {
        let clip = self.at_model_rate(clip)?;
        let spec = stft(&clip, &self.stft)?;
        Ok(mel_spectrogram(&spec, &self.filterbank, true)?.frames)
    }

    /// Content features on the model frame grid. With `perturb` set, timbre is
    /// randomized at 16 kHz before extraction.
    pub fn linguistic(&self, clip: &AudioClip, n_frames: usize, perturb: Option<&PerturbConfig>) -> Result<Array2<f32>> {
        if clip.is_empty() {
            return Err(Error::domain("clip has no samples"));
        }
        let mut c16 = resample(clip, SSL_SAMPLE_RATE)?;
        if let Some(p) = perturb {
            c16 = perturb_timbre(&c16, p)?;
        }
        let feats = extract_features(&c16, self.backend)?;
        retime_to_hop(&feats, n_frames)
    }

    /// All training tracks. `perturb.seed` is combined with `id`.
    pub fn extract(&self, id: &str, clip: &AudioClip, perturb: Option<&PerturbConfig>) -> Result<ClipFeatures> {
        let model_clip = self.at_model_rate(clip)?;
        let spec = stft(&model_clip, &self.stft)?;
        let t = spec.n_frames();
        let energy = normalize_energy(&frame_energy(&spec), self.energy_epsilon)?;
        let mel = mel_spectrogram(&spec, &self.filterbank, true)?.frames;
        let perturb = perturb.map(|p| PerturbConfig {
            seed: clip_seed(p.seed, id),
            ..p.clone()
        });
        let ling = self.linguistic(clip, t, perturb.as_ref())?;
        let mut waveform = model_clip.into_samples();
        waveform.resize(t * self.stft.hop_samples, 0.0);
        Ok(ClipFeatures {
            id: id.to_string(),
            linear: spec.frames,
            mel,
            energy: energy.values.iter().map(|&v| v as f32).collect(),
            ling,
            waveform,
        })
    }
}
