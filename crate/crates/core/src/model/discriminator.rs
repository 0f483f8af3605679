use candle_core::{DType, Device, Tensor};

use super::config::{DiscriminatorConfig, ModelConfig};
use super::layers::{leaky_relu, Conv1d, Conv2dTf, ConvCfg, Linear, Padding};
use super::params::Params;
use super::spectral::DftConv;
use super::types::StyleVector;
use crate::dsp::{StftConfig, WindowKind, SAMPLE_RATE};
use crate::error::{Error, Result};

const SLOPE: f64 = 0.1;

/// Logits and intermediate activations of every sub-discriminator, in a fixed
/// order: period discriminators first, then one per STFT resolution.
#[derive(Debug, Clone)]
pub struct DiscOutput {
    /// `(B, N_i)` per sub-discriminator.
    pub logits: Vec<Tensor>,
    pub features: Vec<Vec<Tensor>>,
}

struct SubOutput {
    logits: Tensor,
    features: Vec<Tensor>,
    /// `(B, C)` pooled last hidden activation, used for style projection.
    pooled: Tensor,
}

#[derive(Debug, Clone)]
struct PeriodDisc {
    period: usize,
    convs: Vec<Conv1d>,
    post: Conv1d,
}

impl PeriodDisc {
    fn new(p: &Params, period: usize, channels: &[usize]) -> Result<Self> {
        let mut convs = Vec::new();
        let mut c_in = 1;
        for (i, &c) in channels.iter().enumerate() {
            let stride = if i + 1 < channels.len() { 3 } else { 1 };
            convs.push(Conv1d::new(
                &p.pp(format!("convs.{i}")),
                c_in,
                c,
                5,
                ConvCfg {
                    stride,
                    padding: Padding::Zeros(2, 2),
                    weight_norm: true,
                    ..ConvCfg::default()
                },
            )?);
            c_in = c;
        }
        let post = Conv1d::new(
            &p.pp("post"),
            c_in,
            1,
            3,
            ConvCfg {
                weight_norm: true,
                ..ConvCfg::default()
            },
        )?;
        Ok(Self { period, convs, post })
    }

    fn forward(&self, wave: &Tensor) -> Result<SubOutput> {
        let (b, len) = wave.dims2()?;
        let p = self.period;
        let n = len.div_ceil(p);
        let x = wave.pad_with_zeros(1, 0, n * p - len)?;
        // columns of the (n, p) folding become independent sequences
        let mut x = x.reshape((b, n, p))?.transpose(1, 2)?.reshape((b * p, 1, n))?;
        let mut features = Vec::new();
        for c in &self.convs {
            x = leaky_relu(&c.forward(&x)?, SLOPE)?;
            features.push(x.clone());
        }
        let (_, ch, t) = x.dims3()?;
        let pooled = x.reshape((b, p, ch, t))?.mean(3)?.mean(1)?;
        let y = self.post.forward(&x)?;
        features.push(y.clone());
        let logits = y.reshape((b, ()))?;
        Ok(SubOutput {
            logits,
            features,
            pooled,
        })
    }
}

#[derive(Debug, Clone)]
struct BandDisc {
    stft: DftConv,
    /// Inverse root window energy, bringing spectra to waveform scale.
    scale: f64,
    bands: Vec<(usize, usize)>,
    convs: Vec<Vec<Conv2dTf>>,
    post: Conv2dTf,
}

impl BandDisc {
    fn new(p: &Params, n_fft: usize, cfg: &DiscriminatorConfig, dtype: DType, device: &Device) -> Result<Self> {
        let stft_cfg = StftConfig {
            sample_rate: SAMPLE_RATE,
            win_samples: n_fft,
            hop_samples: n_fft / 4,
            fft_size: n_fft,
            window: WindowKind::Hann,
            center_pad: true,
        };
        let scale = 1.0 / stft_cfg.window.coefficients(n_fft).iter().map(|w| w * w).sum::<f64>().sqrt();
        let stft = DftConv::new(&stft_cfg, dtype, device)?;
        let nb = stft.n_bins();
        let bands: Vec<(usize, usize)> = cfg
            .bands
            .iter()
            .map(|&(lo, hi)| ((lo * nb as f64) as usize, (hi * nb as f64) as usize))
            .collect();
        if bands.iter().any(|&(lo, hi)| hi <= lo) {
            return Err(Error::config(format!("fft size {n_fft} too small for the band split")));
        }
        let ch = cfg.band_channels;
        let convs = (0..bands.len())
            .map(|i| {
                let bp = p.pp(format!("bands.{i}"));
                Ok(vec![
                    Conv2dTf::new(&bp.pp("0"), 2, ch, (3, 9), 1, (1, 4))?,
                    Conv2dTf::new(&bp.pp("1"), ch, ch, (3, 9), 2, (1, 4))?,
                    Conv2dTf::new(&bp.pp("2"), ch, ch, (3, 9), 2, (1, 4))?,
                    Conv2dTf::new(&bp.pp("3"), ch, ch, (3, 9), 2, (1, 4))?,
                    Conv2dTf::new(&bp.pp("4"), ch, ch, (3, 3), 1, (1, 1))?,
                ])
            })
            .collect::<Result<Vec<_>>>()?;
        let post = Conv2dTf::new(&p.pp("post"), ch, 1, (3, 3), 1, (1, 1))?;
        Ok(Self {
            stft,
            scale,
            bands,
            convs,
            post,
        })
    }

    fn forward(&self, wave: &Tensor) -> Result<SubOutput> {
        let b = wave.dim(0)?;
        let spec = (self.stft.complex(wave)? * self.scale)?;
        let mut features = Vec::new();
        let mut outs = Vec::new();
        for (&(lo, hi), convs) in self.bands.iter().zip(&self.convs) {
            let mut x = spec.narrow(3, lo, hi - lo)?;
            for c in convs {
                x = leaky_relu(&c.forward(&x)?, SLOPE)?;
                features.push(x.clone());
            }
            outs.push(x);
        }
        let x = Tensor::cat(&outs, 3)?;
        let pooled = x.mean(3)?.mean(2)?;
        let y = self.post.forward(&x)?;
        features.push(y.clone());
        Ok(SubOutput {
            logits: y.reshape((b, ()))?,
            features,
            pooled,
        })
    }
}

/// Multi-period plus multi-band multi-resolution STFT discriminator.
#[derive(Debug, Clone)]
pub struct Discriminator {
    periods: Vec<PeriodDisc>,
    bands: Vec<BandDisc>,
    projections: Option<Vec<Linear>>,
}

impl Discriminator {
    pub fn new(cfg: &ModelConfig, p: &Params) -> Result<Self> {
        let d = &cfg.discriminator;
        d.validate()?;
        let periods = d
            .periods
            .iter()
            .map(|&period| PeriodDisc::new(&p.pp(format!("mpd.{period}")), period, &d.period_channels))
            .collect::<Result<Vec<_>>>()?;
        let bands = d
            .fft_sizes
            .iter()
            .map(|&n| BandDisc::new(&p.pp(format!("mrd.{n}")), n, d, p.dtype(), p.device()))
            .collect::<Result<Vec<_>>>()?;
        let projections = if d.conditional {
            let last = *d.period_channels.last().expect("validated non-empty");
            let widths = std::iter::repeat(last)
                .take(periods.len())
                .chain(std::iter::repeat(d.band_channels).take(bands.len()));
            Some(
                widths
                    .enumerate()
                    .map(|(i, w)| Linear::new(&p.pp(format!("style_proj.{i}")), cfg.style_dim, w))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(Self {
            periods,
            bands,
            projections,
        })
    }

    pub fn num_subdiscriminators(&self) -> usize {
        self.periods.len() + self.bands.len()
    }

    pub fn is_conditional(&self) -> bool {
        self.projections.is_some()
    }

    /// `wave`: `(B, L)` at 44.1 kHz. `style` is required by conditional
    /// discriminators and ignored otherwise.
    pub fn forward(&self, wave: &Tensor, style: Option<&StyleVector>) -> Result<DiscOutput> {
        if self.is_conditional() && style.is_none() {
            return Err(Error::State("conditional discriminator needs a style vector".into()));
        }
        let mut subs = Vec::with_capacity(self.num_subdiscriminators());
        for d in &self.periods {
            subs.push(d.forward(wave)?);
        }
        for d in &self.bands {
            subs.push(d.forward(wave)?);
        }
        let mut logits = Vec::with_capacity(subs.len());
        let mut features = Vec::with_capacity(subs.len());
        for (i, s) in subs.into_iter().enumerate() {
            let l = match (&self.projections, style) {
                (Some(proj), Some(style)) => {
                    let e = proj[i].forward(style.tensor())?;
                    let term = (e * &s.pooled)?.sum_keepdim(1)?;
                    s.logits.broadcast_add(&term)?
                }
                _ => s.logits,
            };
            logits.push(l);
            features.push(s.features);
        }
        Ok(DiscOutput { logits, features })
    }
}
