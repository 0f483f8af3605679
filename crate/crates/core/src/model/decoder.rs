use candle_core::Tensor;

use super::config::ModelConfig;
use super::layers::{leaky_relu, Conv1d, ConvCfg, Upsample};
use super::params::Params;
use super::types::Latent;
use crate::error::{Error, Result};

const SLOPE: f64 = 0.1;

#[derive(Debug, Clone)]
struct ResBlock {
    dilated: Vec<Conv1d>,
    plain: Vec<Conv1d>,
}

impl ResBlock {
    fn new(p: &Params, channels: usize, kernel: usize, dilations: &[usize]) -> Result<Self> {
        let mut dilated = Vec::new();
        let mut plain = Vec::new();
        for (i, &d) in dilations.iter().enumerate() {
            dilated.push(Conv1d::new(
                &p.pp(format!("dilated.{i}")),
                channels,
                channels,
                kernel,
                ConvCfg::dilated(d),
            )?);
            plain.push(Conv1d::new(
                &p.pp(format!("plain.{i}")),
                channels,
                channels,
                kernel,
                ConvCfg::default(),
            )?);
        }
        Ok(Self { dilated, plain })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        for (c1, c2) in self.dilated.iter().zip(&self.plain) {
            let y = c1.forward(&leaky_relu(&x, SLOPE)?)?;
            let y = c2.forward(&leaky_relu(&y, SLOPE)?)?;
            x = (x + y)?;
        }
        Ok(x)
    }
}

/// Latent frames to waveform by learned upsampling and multi-receptive-field
/// residual blocks. Takes no style input.
#[derive(Debug, Clone)]
pub struct Decoder {
    pre: Conv1d,
    ups: Vec<Upsample>,
    blocks: Vec<Vec<ResBlock>>,
    post: Conv1d,
    latent: usize,
    hop: usize,
}

impl Decoder {
    pub fn new(cfg: &ModelConfig, p: &Params) -> Result<Self> {
        let c0 = cfg.decoder_initial_channels;
        let pre = Conv1d::new(&p.pp("pre"), cfg.latent_dim, c0, 7, ConvCfg::default())?;
        let mut ups = Vec::new();
        let mut blocks = Vec::new();
        let mut ch = c0;
        for (i, &rate) in cfg.upsample_rates.iter().enumerate() {
            let next = ch / 2;
            ups.push(Upsample::new(&p.pp(format!("ups.{i}")), ch, next, rate)?);
            let stage = cfg
                .resblock_kernels
                .iter()
                .zip(&cfg.resblock_dilations)
                .enumerate()
                .map(|(j, (&k, d))| ResBlock::new(&p.pp(format!("blocks.{i}.{j}")), next, k, d))
                .collect::<Result<Vec<_>>>()?;
            blocks.push(stage);
            ch = next;
        }
        let post = Conv1d::new(
            &p.pp("post"),
            ch,
            1,
            7,
            ConvCfg {
                bias: false,
                ..ConvCfg::default()
            },
        )?;
        Ok(Self {
            pre,
            ups,
            blocks,
            post,
            latent: cfg.latent_dim,
            hop: cfg.hop(),
        })
    }

    /// `(B, latent, T)` to `(B, T * hop)` in `[-1, 1]`.
    pub fn forward(&self, z: &Latent) -> Result<Tensor> {
        let (_, c, t) = z.0.dims3()?;
        if c != self.latent {
            return Err(Error::dim(format!("decoder expects {} latent channels, got {c}", self.latent)));
        }
        let mut x = self.pre.forward(&z.0)?;
        for (up, stage) in self.ups.iter().zip(&self.blocks) {
            x = up.forward(&leaky_relu(&x, SLOPE)?)?;
            let mut acc: Option<Tensor> = None;
            for b in stage {
                let y = b.forward(&x)?;
                acc = Some(match acc {
                    None => y,
                    Some(a) => (a + y)?,
                });
            }
            x = (acc.expect("at least one residual block") / stage.len() as f64)?;
        }
        let y = self.post.forward(&leaky_relu(&x, 0.01)?)?.tanh()?;
        debug_assert_eq!(y.dim(2)?, t * self.hop);
        Ok(y.squeeze(1)?)
    }
}
