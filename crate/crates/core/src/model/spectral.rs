//! Differentiable short-time Fourier analysis as a strided convolution with a
//! windowed DFT basis.

use candle_core::{DType, Device, Tensor, D};

use crate::dsp::{reflect_index, StftConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct DftConv {
    /// `(2 * n_bins, 1, fft_size)`: cosine rows then negated sine rows.
    basis: Tensor,
    cfg: StftConfig,
}

impl DftConv {
    pub fn new(cfg: &StftConfig, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let n_fft = cfg.fft_size;
        let n_bins = cfg.n_bins();
        let win = cfg.window.coefficients(cfg.win_samples);
        let off = (n_fft - cfg.win_samples) / 2;
        let mut basis = vec![0.0f64; 2 * n_bins * n_fft];
        for k in 0..n_bins {
            for (j, w) in win.iter().enumerate() {
                let n = off + j;
                let phase = 2.0 * std::f64::consts::PI * (k * n % n_fft) as f64 / n_fft as f64;
                basis[k * n_fft + n] = w * phase.cos();
                basis[(n_bins + k) * n_fft + n] = -w * phase.sin();
            }
        }
        let basis = Tensor::from_vec(basis, (2 * n_bins, 1, n_fft), device)?.to_dtype(dtype)?;
        Ok(Self {
            basis,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn n_bins(&self) -> usize {
        self.cfg.n_bins()
    }

    /// `wave (B, L)` to `(B, 2 * n_bins, frames)`.
    fn analyse(&self, wave: &Tensor) -> Result<Tensor> {
        let (_, len) = wave.dims2()?;
        if len == 0 {
            return Err(Error::domain("cannot analyse an empty waveform"));
        }
        let x = if self.cfg.center_pad {
            let pad = (self.cfg.fft_size / 2) as isize;
            let idx: Vec<u32> = (-pad..len as isize + pad)
                .map(|i| reflect_index(i, len) as u32)
                .collect();
            let idx = Tensor::from_vec(idx, len + 2 * pad as usize, wave.device())?;
            wave.index_select(&idx, 1)?
        } else {
            wave.clone()
        };
        let x = x.unsqueeze(1)?.contiguous()?;
        if x.dim(D::Minus1)? < self.cfg.fft_size {
            return Err(Error::dim("waveform shorter than one analysis frame"));
        }
        Ok(x.conv1d(&self.basis, 0, self.cfg.hop_samples, 1, 1)?)
    }

    /// Real and imaginary parts as `(B, 2, frames, n_bins)`.
    pub fn complex(&self, wave: &Tensor) -> Result<Tensor> {
        let y = self.analyse(wave)?;
        let (b, _, t) = y.dims3()?;
        Ok(y.reshape((b, 2, self.n_bins(), t))?.transpose(2, 3)?)
    }

    /// Magnitude `(B, n_bins, frames)`; `floor` keeps the gradient finite at zero.
    pub fn magnitude(&self, wave: &Tensor, floor: f64) -> Result<Tensor> {
        let y = self.analyse(wave)?;
        let nb = self.n_bins();
        let re = y.narrow(1, 0, nb)?;
        let im = y.narrow(1, nb, nb)?;
        Ok(((re.sqr()? + im.sqr()?)? + floor)?.sqrt()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{stft, AudioClip};

    #[test]
    fn matches_reference_stft() {
        let samples: Vec<f32> = (0..3000)
            .map(|i| (i as f32 * 0.031).sin() * 0.5 + (i as f32 * 0.17).cos() * 0.2)
            .collect();
        let clip = AudioClip::new(samples.clone(), 44100).unwrap();
        for cfg in [
            StftConfig::default(),
            StftConfig {
                win_samples: 220,
                hop_samples: 55,
                fft_size: 256,
                ..StftConfig::default()
            },
        ] {
            let expect = stft(&clip, &cfg).unwrap().frames;
            let dft = DftConv::new(&cfg, DType::F64, &Device::Cpu).unwrap();
            let wave = Tensor::from_vec(samples.iter().map(|&s| s as f64).collect::<Vec<_>>(), (1, 3000), &Device::Cpu)
                .unwrap();
            let got = dft.magnitude(&wave, 0.0).unwrap().squeeze(0).unwrap().to_vec2::<f64>().unwrap();
            assert_eq!(got.len(), expect.nrows());
            assert_eq!(got[0].len(), expect.ncols());
            for (b, row) in got.iter().enumerate() {
                for (t, v) in row.iter().enumerate() {
                    assert!((v - expect[[b, t]] as f64).abs() < 1e-3, "bin {b} frame {t}");
                }
            }
        }
    }

    #[test]
    fn complex_layout() {
        let cfg = StftConfig {
            win_samples: 64,
            hop_samples: 16,
            fft_size: 64,
            ..StftConfig::default()
        };
        let dft = DftConv::new(&cfg, DType::F32, &Device::Cpu).unwrap();
        let wave = Tensor::zeros((2, 160), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(dft.complex(&wave).unwrap().dims(), &[2, 2, 11, 33]);
    }
}
