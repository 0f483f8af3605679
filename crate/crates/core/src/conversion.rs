//! Inference: source content and energy plus a reference timbre to a 44.1 kHz
//! waveform.

use candle_core::Tensor;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dsp::AudioClip;
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::model::{Latent, StyleVector, VcModel};

/// Prior noise scale used when none is given.
pub const DEFAULT_TEMPERATURE: f64 = 0.667;

#[derive(Debug, Clone)]
pub struct ConversionRequest {
    pub source: AudioClip,
    pub reference: AudioClip,
    pub temperature: f64,
    pub seed: u64,
}

impl ConversionRequest {
    pub fn new(source: AudioClip, reference: AudioClip) -> Self {
        Self {
            source,
            reference,
            temperature: DEFAULT_TEMPERATURE,
            seed: 0,
        }
    }
}

/// Read-only view of a model plus the matching feature pipeline.
pub struct Converter<'a> {
    model: &'a VcModel,
    features: &'a FeatureExtractor<'a>,
}

impl<'a> Converter<'a> {
    pub fn new(model: &'a VcModel, features: &'a FeatureExtractor<'a>) -> Result<Self> {
        let stft = features.stft_config();
        if stft.hop_samples != model.config.hop() || stft.n_bins() != model.config.n_linear_bins {
            return Err(Error::State(format!(
                "model expects hop {} with {} bins, feature pipeline gives hop {} with {} bins",
                model.config.hop(),
                model.config.n_linear_bins,
                stft.hop_samples,
                stft.n_bins()
            )));
        }
        Ok(Self { model, features })
    }

    fn grid(&self, a: &Array2<f32>) -> Result<Tensor> {
        let (r, c) = a.dim();
        let t = Tensor::from_vec(a.iter().copied().collect::<Vec<_>>(), (1, r, c), self.model.device())?;
        Ok(t.to_dtype(self.model.dtype())?)
    }

    fn noise(&self, dims: &[usize], seed: u64) -> Result<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = dims.iter().product();
        let v: Vec<f32> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        Ok(Tensor::from_vec(v, dims, self.model.device())?.to_dtype(self.model.dtype())?)
    }

    fn to_clip(&self, wave: Tensor) -> Result<AudioClip> {
        let v: Vec<f32> = wave.squeeze(0)?.to_dtype(candle_core::DType::F32)?.to_vec1()?;
        AudioClip::new(v, self.features.stft_config().sample_rate)
    }

    /// Style vector from the whole reference utterance.
    pub fn style(&self, reference: &AudioClip) -> Result<StyleVector> {
        let mel = self.features.reference_mel(reference)?;
        self.model.generator.reference_encode(&self.grid(&mel)?)
    }

    pub fn convert(&self, req: &ConversionRequest) -> Result<AudioClip> {
        if !(req.temperature >= 0.0) {
            return Err(Error::config(format!("temperature must be >= 0, got {}", req.temperature)));
        }
        if req.source.is_empty() || req.reference.is_empty() {
            return Err(Error::domain("conversion needs non-empty source and reference clips"));
        }
        let g = &self.model.generator;
        let style = self.style(&req.reference)?;
        let (_, energy) = self.features.linear_and_energy(&req.source)?;
        let t = energy.len();
        let ling = self.features.linguistic(&req.source, t, None)?;
        let energy = Tensor::from_vec(energy, (1, t), self.model.device())?.to_dtype(self.model.dtype())?;
        let prior = g.prior(&self.grid(&ling)?, &energy, &style)?;
        let z_prime = prior.sample(&self.noise(prior.dims(), req.seed)?, req.temperature)?;
        let z = g.flow_inverse(&z_prime, &style)?;
        self.to_clip(g.decode(&z)?)
    }

    /// Posterior round trip; `temperature` 0 decodes the posterior mean.
    pub fn reconstruct(&self, clip: &AudioClip, temperature: f64, seed: u64) -> Result<AudioClip> {
        if clip.is_empty() {
            return Err(Error::domain("cannot reconstruct an empty clip"));
        }
        let (linear, _) = self.features.linear_and_energy(clip)?;
        let post = self.model.generator.posterior_encode(&self.grid(&linear)?)?;
        let z: Latent = post.sample(&self.noise(post.dims(), seed)?, temperature)?;
        self.to_clip(self.model.generator.decode(&z)?)
    }
}
