use candle_core::Tensor;

use super::config::ModelConfig;
use super::layers::{Conv1d, ConvCfg, WaveNet};
use super::params::Params;
use super::types::{Latent, StyleVector};
use crate::error::Result;

/// Affine coupling on channel halves; the second half is shifted and scaled by
/// functions of the first half and the style vector.
#[derive(Debug, Clone)]
struct Coupling {
    pre: Conv1d,
    wn: WaveNet,
    post: Conv1d,
    half: usize,
    mean_only: bool,
}

impl Coupling {
    fn new(cfg: &ModelConfig, p: &Params) -> Result<Self> {
        let half = cfg.latent_dim / 2;
        let h = cfg.hidden_dim;
        let out = if cfg.flow_mean_only { half } else { 2 * half };
        Ok(Self {
            pre: Conv1d::new(&p.pp("pre"), half, h, 1, ConvCfg::default())?,
            wn: WaveNet::new(&p.pp("wn"), h, cfg.flow_kernel, 1, cfg.flow_wn_layers, cfg.style_dim)?,
            post: Conv1d::new(
                &p.pp("post"),
                h,
                out,
                1,
                ConvCfg {
                    zero_init: true,
                    ..ConvCfg::default()
                },
            )?,
            half,
            mean_only: cfg.flow_mean_only,
        })
    }

    /// Returns `(m, log_s)`; `log_s` is `None` for shift-only couplings.
    fn stats(&self, x0: &Tensor, g: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        let h = self.pre.forward(x0)?;
        let h = self.wn.forward(&h, Some(g))?;
        let stats = self.post.forward(&h)?;
        if self.mean_only {
            Ok((stats, None))
        } else {
            Ok((stats.narrow(1, 0, self.half)?, Some(stats.narrow(1, self.half, self.half)?)))
        }
    }

    fn forward(&self, x: &Tensor, g: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        let x0 = x.narrow(1, 0, self.half)?;
        let x1 = x.narrow(1, self.half, self.half)?;
        let (m, log_s) = self.stats(&x0, g)?;
        let (x1, log_det) = match log_s {
            Some(ls) => {
                let y = (m + (x1 * ls.exp()?)?)?;
                (y, Some(ls.sum((1, 2))?))
            }
            None => ((m + x1)?, None),
        };
        Ok((Tensor::cat(&[&x0, &x1], 1)?, log_det))
    }

    fn inverse(&self, y: &Tensor, g: &Tensor) -> Result<Tensor> {
        let y0 = y.narrow(1, 0, self.half)?;
        let y1 = y.narrow(1, self.half, self.half)?;
        let (m, log_s) = self.stats(&y0, g)?;
        let x1 = (y1 - m)?;
        let x1 = match log_s {
            Some(ls) => (x1 * ls.neg()?.exp()?)?,
            None => x1,
        };
        Ok(Tensor::cat(&[&y0, &x1], 1)?)
    }
}

fn flip_channels(x: &Tensor) -> Result<Tensor> {
    let c = x.dim(1)?;
    let idx: Vec<u32> = (0..c as u32).rev().collect();
    let idx = Tensor::from_vec(idx, c, x.device())?;
    Ok(x.index_select(&idx, 1)?)
}

/// Style-conditioned stack of couplings, each followed by a channel flip.
/// Initialized to the identity map.
#[derive(Debug, Clone)]
pub struct Flow {
    couplings: Vec<Coupling>,
}

impl Flow {
    pub fn new(cfg: &ModelConfig, p: &Params) -> Result<Self> {
        let couplings = (0..cfg.flow_layers)
            .map(|i| Coupling::new(cfg, &p.pp(format!("couplings.{i}"))))
            .collect::<Result<_>>()?;
        Ok(Self { couplings })
    }

    /// `z -> z'` with the per-sequence log-determinant `(B,)`.
    pub fn forward(&self, z: &Latent, style: &StyleVector) -> Result<(Latent, Tensor)> {
        let g = style.as_global()?;
        let mut x = z.0.clone();
        let mut log_det = Tensor::zeros(x.dim(0)?, x.dtype(), x.device())?;
        for c in &self.couplings {
            let (y, ld) = c.forward(&x, &g)?;
            if let Some(ld) = ld {
                log_det = (log_det + ld)?;
            }
            x = flip_channels(&y)?;
        }
        Ok((Latent(x), log_det))
    }

    pub fn inverse(&self, z_prime: &Latent, style: &StyleVector) -> Result<Latent> {
        let g = style.as_global()?;
        let mut x = z_prime.0.clone();
        for c in self.couplings.iter().rev() {
            x = c.inverse(&flip_channels(&x)?, &g)?;
        }
        Ok(Latent(x))
    }
}
