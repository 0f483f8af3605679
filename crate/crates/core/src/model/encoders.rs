use candle_core::Tensor;

use super::config::ModelConfig;
use super::layers::{leaky_relu, mish, sigmoid, softmax_last, Conv1d, ConvCfg, Linear, Padding, WaveNet};
use super::params::Params;
use super::types::{GaussianFrames, StyleVector};
use crate::error::{Error, Result};

fn split_stats(stats: &Tensor, latent: usize) -> Result<GaussianFrames> {
    GaussianFrames::new(stats.narrow(1, 0, latent)?, stats.narrow(1, latent, latent)?)
}

/// Linear spectrogram to `q(z | x_linear)`.
#[derive(Debug, Clone)]
pub struct PosteriorEncoder {
    pre: Conv1d,
    wn: WaveNet,
    proj: Conv1d,
    n_bins: usize,
    latent: usize,
}

impl PosteriorEncoder {
    pub fn new(cfg: &ModelConfig, p: &Params) -> Result<Self> {
        let h = cfg.hidden_dim;
        Ok(Self {
            pre: Conv1d::new(&p.pp("pre"), cfg.n_linear_bins, h, 1, ConvCfg::default())?,
            wn: WaveNet::new(
                &p.pp("wn"),
                h,
                cfg.posterior_kernel,
                cfg.posterior_dilation_rate,
                cfg.posterior_layers,
                0,
            )?,
            proj: Conv1d::new(&p.pp("proj"), h, 2 * cfg.latent_dim, 1, ConvCfg::default())?,
            n_bins: cfg.n_linear_bins,
            latent: cfg.latent_dim,
        })
    }

    pub fn forward(&self, x_linear: &Tensor) -> Result<GaussianFrames> {
        let (_, bins, t) = x_linear.dims3()?;
        if bins != self.n_bins {
            return Err(Error::dim(format!("posterior expects {} bins, got {bins}", self.n_bins)));
        }
        if t == 0 {
            return Err(Error::domain("posterior input has no frames"));
        }
        let h = self.pre.forward(x_linear)?;
        let h = self.wn.forward(&h, None)?;
        split_stats(&self.proj.forward(&h)?, self.latent)
    }
}

/// Convolution followed by a gated linear unit, with a residual connection.
#[derive(Debug, Clone)]
struct ConvGlu {
    conv: Conv1d,
    channels: usize,
}

impl ConvGlu {
    fn new(p: &Params, channels: usize, kernel: usize) -> Result<Self> {
        let cfg = ConvCfg {
            padding: Padding::Replicate,
            ..ConvCfg::default()
        };
        Ok(Self {
            conv: Conv1d::new(p, channels, 2 * channels, kernel, cfg)?,
            channels,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.conv.forward(x)?;
        let a = y.narrow(1, 0, self.channels)?;
        let b = y.narrow(1, self.channels, self.channels)?;
        Ok((x + (a * sigmoid(&b)?)?)?)
    }
}

#[derive(Debug, Clone)]
struct SelfAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
}

impl SelfAttention {
    fn new(p: &Params, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::new(&p.pp("q"), dim, dim)?,
            k: Linear::new(&p.pp("k"), dim, dim)?,
            v: Linear::new(&p.pp("v"), dim, dim)?,
            out: Linear::new(&p.pp("out"), dim, dim)?,
            heads,
        })
    }

    /// `x`: `(B, T, dim)`.
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, dim) = x.dims3()?;
        let dh = dim / self.heads;
        let split = |y: Tensor| -> Result<Tensor> {
            Ok(y.reshape((b, t, self.heads, dh))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.q.forward(x)?)?;
        let k = split(self.k.forward(x)?)?;
        let v = split(self.v.forward(x)?)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (dh as f64).sqrt())?;
        let ctx = softmax_last(&scores)?.matmul(&v)?;
        let ctx = ctx.transpose(1, 2)?.reshape((b, t, dim))?;
        Ok((x + self.out.forward(&ctx)?)?)
    }
}

/// Utterance mel spectrogram to a single style vector.
///
/// The body has no positional terms and pads by edge replication, so a mel
/// made of one repeated frame yields the same vector at any length.
#[derive(Debug, Clone)]
pub struct ReferenceEncoder {
    spectral: [Linear; 2],
    temporal: [ConvGlu; 2],
    attention: SelfAttention,
    fc: Linear,
    n_mels: usize,
}

impl ReferenceEncoder {
    pub fn new(cfg: &ModelConfig, p: &Params) -> Result<Self> {
        let h = cfg.ref_hidden_dim;
        Ok(Self {
            spectral: [
                Linear::new(&p.pp("spectral.0"), cfg.n_mels_ref, h)?,
                Linear::new(&p.pp("spectral.1"), h, h)?,
            ],
            temporal: [
                ConvGlu::new(&p.pp("temporal.0"), h, cfg.ref_kernel)?,
                ConvGlu::new(&p.pp("temporal.1"), h, cfg.ref_kernel)?,
            ],
            attention: SelfAttention::new(&p.pp("attention"), h, cfg.ref_heads)?,
            fc: Linear::new(&p.pp("fc"), h, cfg.style_dim)?,
            n_mels: cfg.n_mels_ref,
        })
    }

    /// `mel`: `(B, n_mels, T)` log-mel.
    pub fn forward(&self, mel: &Tensor) -> Result<StyleVector> {
        let (_, n_mels, t) = mel.dims3()?;
        if t == 0 {
            return Err(Error::domain("reference mel has no frames"));
        }
        if n_mels != self.n_mels {
            return Err(Error::dim(format!("reference encoder expects {} mels, got {n_mels}", self.n_mels)));
        }
        let mut x = mel.transpose(1, 2)?.contiguous()?;
        for l in &self.spectral {
            x = mish(&l.forward(&x)?)?;
        }
        let mut x = x.transpose(1, 2)?.contiguous()?;
        for l in &self.temporal {
            x = l.forward(&x)?;
        }
        let x = self.attention.forward(&x.transpose(1, 2)?.contiguous()?)?;
        let x = self.fc.forward(&x)?;
        Ok(StyleVector(x.mean(1)?))
    }
}

/// Normalized frame energy to a per-frame embedding.
#[derive(Debug, Clone)]
pub struct EnergyEncoder {
    convs: Vec<Conv1d>,
}

impl EnergyEncoder {
    pub fn new(cfg: &ModelConfig, p: &Params) -> Result<Self> {
        let mut convs = Vec::with_capacity(cfg.energy_layers);
        for i in 0..cfg.energy_layers {
            let c_in = if i == 0 { 1 } else { cfg.hidden_dim };
            convs.push(Conv1d::new(
                &p.pp(format!("convs.{i}")),
                c_in,
                cfg.hidden_dim,
                cfg.energy_kernel,
                ConvCfg::default(),
            )?);
        }
        Ok(Self { convs })
    }

    /// `energy`: `(B, T)`.
    pub fn forward(&self, energy: &Tensor) -> Result<Tensor> {
        let mut x = energy.unsqueeze(1)?;
        let n = self.convs.len();
        for (i, c) in self.convs.iter().enumerate() {
            x = c.forward(&x)?;
            if i + 1 < n {
                x = leaky_relu(&x, 0.1)?;
            }
        }
        Ok(x)
    }
}

/// Pointwise projection of retimed SSL features.
#[derive(Debug, Clone)]
pub struct LinguisticProjection {
    conv: Conv1d,
    d_ssl: usize,
}

impl LinguisticProjection {
    pub fn new(cfg: &ModelConfig, p: &Params) -> Result<Self> {
        Ok(Self {
            conv: Conv1d::new(p, cfg.d_ssl, cfg.d_ling, 1, ConvCfg::default())?,
            d_ssl: cfg.d_ssl,
        })
    }

    pub fn forward(&self, feats: &Tensor) -> Result<Tensor> {
        let d = feats.dim(1)?;
        if d != self.d_ssl {
            return Err(Error::dim(format!("linguistic projection expects {} dims, got {d}", self.d_ssl)));
        }
        self.conv.forward(feats)
    }
}

/// One convolution over `[ling; energy; style]` giving the prior parameters.
#[derive(Debug, Clone)]
pub struct FusionNetwork {
    conv: Conv1d,
    latent: usize,
}

impl FusionNetwork {
    pub fn new(cfg: &ModelConfig, p: &Params) -> Result<Self> {
        let c_in = cfg.d_ling + cfg.hidden_dim + cfg.style_dim;
        Ok(Self {
            conv: Conv1d::new(p, c_in, 2 * cfg.latent_dim, cfg.fusion_kernel, ConvCfg::default())?,
            latent: cfg.latent_dim,
        })
    }

    pub fn forward(&self, ling: &Tensor, energy: &Tensor, style: &StyleVector) -> Result<GaussianFrames> {
        let (b, _, t) = ling.dims3()?;
        let (be, _, te) = energy.dims3()?;
        if t != te || b != be {
            return Err(Error::dim(format!(
                "linguistic grid is {b}x{t} but energy grid is {be}x{te} (batch x frames)"
            )));
        }
        let s = style.as_global()?;
        let s = s.broadcast_as((b, s.dim(1)?, t))?;
        let x = Tensor::cat(&[ling, energy, &s], 1)?;
        split_stats(&self.conv.forward(&x)?, self.latent)
    }
}

