//! Training objectives: annealed KL, multi-hop log-mel reconstruction (FDRL),
//! least-squares adversarial and normalized feature matching.

use std::f64::consts::PI;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::dsp::{mel_filterbank, AudioClip, MelNorm, StftConfig, WindowKind, MEL_EPSILON, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::model::spectral::DftConv;
use crate::model::{GaussianFrames, Latent};

/// Cosine ramp of the KL weight: 0 at step 0, 1 from `t_anneal` on.
pub fn kl_anneal_weight(t_cur: u64, t_anneal: u64) -> f64 {
    if t_anneal == 0 {
        return 1.0;
    }
    let r = t_cur.min(t_anneal) as f64 / t_anneal as f64;
    0.5 * ((PI * (r - 1.0)).cos() + 1.0)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// One-sample estimate of `KL(q(z|x) || p(z|c))` where the prior density is
/// evaluated through the flow: mean over batch, channels and frames of
/// `log q(z) - log N(z'; prior)`, minus the log-determinant per element.
///
/// `log_det` holds one value per sequence, `(B,)`.
pub fn kl_loss(
    post: &GaussianFrames,
    z: &Latent,
    prior: &GaussianFrames,
    z_prime: &Latent,
    log_det: &Tensor,
) -> Result<Tensor> {
    let dims = post.dims().to_vec();
    if prior.dims() != dims.as_slice() || z.0.dims() != dims.as_slice() || z_prime.0.dims() != dims.as_slice() {
        return Err(Error::dim("KL operands must share one shape"));
    }
    for (name, g) in [("posterior", post), ("prior", prior)] {
        let min = scalar(&g.sigma()?.flatten_all()?.min(0)?)?;
        if !(min > 0.0) {
            return Err(Error::Numeric(format!("{name} sigma not strictly positive (min {min})")));
        }
    }
    // Gaussian normalizing constants cancel between the two log-densities.
    let q = ((&z.0 - &post.mu)? * post.log_sigma.neg()?.exp()?)?.sqr()?;
    let p = ((&z_prime.0 - &prior.mu)? * prior.log_sigma.neg()?.exp()?)?.sqr()?;
    let per_elem = ((&prior.log_sigma - &post.log_sigma)? + ((p - q)? * 0.5)?)?;
    let (_, d, t) = (dims[0], dims[1], dims[2]);
    let ld = (log_det.mean_all()? / (d * t) as f64)?;
    Ok((per_elem.mean_all()? - ld)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdrlConfig {
    pub hops: Vec<usize>,
    /// Window length as a multiple of the hop.
    pub window_factor: usize,
    pub n_mels: usize,
    pub sample_rate: u32,
    pub f_min: f64,
    /// Upper mel edge; `None` means Nyquist.
    pub f_max: Option<f64>,
    /// Add an L1 term on linear magnitudes at every scale.
    pub linear_term: bool,
}

impl Default for FdrlConfig {
    fn default() -> Self {
        Self {
            hops: vec![882, 441, 220, 110, 55],
            window_factor: 4,
            n_mels: 80,
            sample_rate: SAMPLE_RATE,
            f_min: 0.0,
            f_max: None,
            linear_term: false,
        }
    }
}

impl FdrlConfig {
    /// Per-scale analysis settings; the window fills the FFT frame.
    pub fn stft_configs(&self) -> Vec<StftConfig> {
        self.hops
            .iter()
            .map(|&hop| StftConfig {
                sample_rate: self.sample_rate,
                win_samples: hop * self.window_factor,
                hop_samples: hop,
                fft_size: hop * self.window_factor,
                window: WindowKind::Hann,
                center_pad: true,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hops.is_empty() || self.hops.contains(&0) || self.window_factor == 0 {
            return Err(Error::config("FDRL needs at least one positive hop and window factor"));
        }
        Ok(())
    }
}

struct Scale {
    dft: DftConv,
    /// `(n_mels, n_bins)`
    mel: Tensor,
}

/// Multi-resolution log-mel L1 loss, prepared for one dtype and device.
pub struct Fdrl {
    scales: Vec<Scale>,
    linear_term: bool,
}

impl Fdrl {
    pub fn new(cfg: &FdrlConfig, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let f_max = cfg.f_max.unwrap_or(cfg.sample_rate as f64 / 2.0);
        let scales = cfg
            .stft_configs()
            .iter()
            .map(|sc| {
                let fb = mel_filterbank(sc, cfg.n_mels, cfg.f_min, f_max, MelNorm::None)?;
                let (m, b) = fb.weights.dim();
                let mel = Tensor::from_vec(fb.weights.into_raw_vec_and_offset().0, (m, b), device)?.to_dtype(dtype)?;
                Ok(Scale {
                    dft: DftConv::new(sc, dtype, device)?,
                    mel,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scales,
            linear_term: cfg.linear_term,
        })
    }

    /// `reference` and `generated` are `(B, L)`; returns a scalar tensor.
    pub fn forward(&self, reference: &Tensor, generated: &Tensor) -> Result<Tensor> {
        if reference.dims() != generated.dims() {
            return Err(Error::dim(format!(
                "FDRL inputs differ in shape: {:?} vs {:?}",
                reference.dims(),
                generated.dims()
            )));
        }
        let mut total: Option<Tensor> = None;
        for s in &self.scales {
            let mag_r = s.dft.magnitude(reference, 1e-12)?;
            let mag_g = s.dft.magnitude(generated, 1e-12)?;
            let log_mel = |m: &Tensor| -> Result<Tensor> {
                Ok((s.mel.broadcast_matmul(m)? + MEL_EPSILON as f64)?.log()?)
            };
            let mut term = (log_mel(&mag_r)? - log_mel(&mag_g)?)?.abs()?.mean_all()?;
            if self.linear_term {
                term = (term + (mag_r - mag_g)?.abs()?.mean_all()?)?;
            }
            total = Some(match total {
                None => term,
                Some(t) => (t + term)?,
            });
        }
        Ok(total.expect("validated non-empty"))
    }
}

/// FDRL between two clips of equal length and rate.
pub fn fdrl(reference: &AudioClip, generated: &AudioClip, cfg: &FdrlConfig) -> Result<f64> {
    if reference.len() != generated.len() {
        return Err(Error::dim(format!(
            "FDRL needs equal lengths, got {} and {}",
            reference.len(),
            generated.len()
        )));
    }
    if reference.sample_rate() != generated.sample_rate() || reference.sample_rate() != cfg.sample_rate {
        return Err(Error::config("FDRL clips must share the configured sample rate"));
    }
    let dev = Device::Cpu;
    let loss = Fdrl::new(cfg, DType::F32, &dev)?;
    let to_t = |c: &AudioClip| Tensor::from_slice(c.samples(), (1, c.len()), &dev);
    scalar(&loss.forward(&to_t(reference)?, &to_t(generated)?)?)
}

/// Least-squares GAN losses summed over sub-discriminators:
/// `(generator, discriminator)`.
pub fn adversarial_losses(real: &[Tensor], fake: &[Tensor]) -> Result<(Tensor, Tensor)> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(Error::dim("real and fake logit sets must pair up and be non-empty"));
    }
    let mut gen: Option<Tensor> = None;
    let mut disc: Option<Tensor> = None;
    for (r, f) in real.iter().zip(fake) {
        let g = (f - 1.0)?.sqr()?.mean_all()?;
        let d = ((r - 1.0)?.sqr()?.mean_all()? + f.sqr()?.mean_all()?)?;
        gen = Some(match gen {
            None => g,
            Some(a) => (a + g)?,
        });
        disc = Some(match disc {
            None => d,
            Some(a) => (a + d)?,
        });
    }
    Ok((gen.expect("non-empty"), disc.expect("non-empty")))
}

/// Generator-side LS-GAN term only.
pub fn generator_adversarial_loss(fake: &[Tensor]) -> Result<Tensor> {
    let mut acc: Option<Tensor> = None;
    for f in fake {
        let g = (f - 1.0)?.sqr()?.mean_all()?;
        acc = Some(match acc {
            None => g,
            Some(a) => (a + g)?,
        });
    }
    acc.ok_or_else(|| Error::dim("no logits"))
}

/// Sum over layers of `mean|r - f| / mean|r|`. Real features are treated as
/// constants.
pub fn feature_matching_loss(real: &[Vec<Tensor>], fake: &[Vec<Tensor>]) -> Result<Tensor> {
    if real.len() != fake.len() {
        return Err(Error::dim("feature sets differ in sub-discriminator count"));
    }
    let mut acc: Option<Tensor> = None;
    for (rs, fs) in real.iter().zip(fake) {
        if rs.len() != fs.len() {
            return Err(Error::dim("feature sets differ in layer count"));
        }
        for (r, f) in rs.iter().zip(fs) {
            if r.dims() != f.dims() {
                return Err(Error::dim(format!("feature maps {:?} vs {:?}", r.dims(), f.dims())));
            }
            let r = r.detach();
            let scale = (r.abs()?.mean_all()? + 1e-12)?;
            let term = (f - &r)?.abs()?.mean_all()?.div(&scale)?;
            acc = Some(match acc {
                None => term,
                Some(a) => (a + term)?,
            });
        }
    }
    acc.ok_or_else(|| Error::dim("no feature maps"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_rec: f64,
    pub lambda_fm: f64,
    pub lambda_adv: f64,
    /// Scheduled per step; the configured value is the starting point only.
    pub lambda_kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_rec: 45.0,
            lambda_fm: 2.0,
            lambda_adv: 1.0,
            lambda_kl: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_rec, self.lambda_fm, self.lambda_adv, self.lambda_kl];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config("loss weights must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn with_kl(self, lambda_kl: f64) -> Self {
        Self { lambda_kl, ..self }
    }
}

/// Unweighted generator loss terms.
#[derive(Debug, Clone)]
pub struct LossParts {
    pub kl: Tensor,
    pub rec: Tensor,
    pub fm: Tensor,
    pub adv: Tensor,
}

/// `λ_kl·KL + λ_rec·rec + λ_fm·fm + λ_adv·adv`. A zero λ_kl drops the KL
/// term from the graph entirely.
pub fn total_generator_loss(parts: &LossParts, w: &LossWeights) -> Result<Tensor> {
    for (name, t) in [("kl", &parts.kl), ("rec", &parts.rec), ("fm", &parts.fm), ("adv", &parts.adv)] {
        let v = scalar(t)?;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("loss part {name} is {v}")));
        }
    }
    let mut total = ((parts.rec.affine(w.lambda_rec, 0.0)? + parts.fm.affine(w.lambda_fm, 0.0)?)?
        + parts.adv.affine(w.lambda_adv, 0.0)?)?;
    if w.lambda_kl != 0.0 {
        total = (total + parts.kl.affine(w.lambda_kl, 0.0)?)?;
    }
    Ok(total)
}
