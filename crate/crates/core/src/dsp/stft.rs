use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hann,
    Rectangular,
}

impl WindowKind {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
            WindowKind::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub win_samples: usize,
    pub hop_samples: usize,
    pub fft_size: usize,
    pub window: WindowKind,
    pub center_pad: bool,
}

impl Default for StftConfig {
    /// 20 ms window, 220-sample hop (the decoder's upsampling product) at 44.1 kHz.
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            win_samples: 882,
            hop_samples: 220,
            fft_size: 882,
            window: WindowKind::Hann,
            center_pad: true,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.hop_samples == 0 {
            return Err(Error::config("sample rate and hop must be positive"));
        }
        if !(self.hop_samples <= self.win_samples && self.win_samples <= self.fft_size) {
            return Err(Error::config(format!(
                "need hop ({}) <= window ({}) <= fft size ({})",
                self.hop_samples, self.win_samples, self.fft_size
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count for a signal of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        if self.center_pad {
            1 + len / self.hop_samples
        } else if len >= self.fft_size {
            1 + (len - self.fft_size) / self.hop_samples
        } else {
            0
        }
    }
}

/// Magnitude spectrogram, `n_bins x frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSpectrogram {
    pub frames: Array2<f32>,
    pub config: StftConfig,
}

impl LinearSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.ncols()
    }

    pub fn n_bins(&self) -> usize {
        self.frames.nrows()
    }
}

/// Index into `0..len` mirrored at both ends without repeating the edge sample.
pub fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

pub fn stft(clip: &AudioClip, cfg: &StftConfig) -> Result<LinearSpectrogram> {
    cfg.validate()?;
    if clip.sample_rate() != cfg.sample_rate {
        return Err(Error::config(format!(
            "clip rate {} Hz does not match STFT rate {} Hz",
            clip.sample_rate(),
            cfg.sample_rate
        )));
    }
    if clip.is_empty() {
        return Err(Error::domain("cannot analyse an empty clip"));
    }
    Ok(LinearSpectrogram {
        frames: magnitude_frames(clip.samples(), cfg),
        config: cfg.clone(),
    })
}

/// Core STFT on raw samples; assumes a validated config.
pub(crate) fn magnitude_frames(x: &[f32], cfg: &StftConfig) -> Array2<f32> {
    let n_frames = cfg.n_frames(x.len());
    let n_bins = cfg.n_bins();
    let n_fft = cfg.fft_size;
    let pad = if cfg.center_pad { (n_fft / 2) as isize } else { 0 };
    // window is centred inside the FFT frame
    let win = cfg.window.coefficients(cfg.win_samples);
    let win_off = (n_fft - cfg.win_samples) / 2;

    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut out = Array2::<f32>::zeros((n_bins, n_frames));
    for t in 0..n_frames {
        let start = (t * cfg.hop_samples) as isize - pad;
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (j, &w) in win.iter().enumerate() {
            let pos = start + (win_off + j) as isize;
            let s = if cfg.center_pad {
                x[reflect_index(pos, x.len())]
            } else {
                x[pos as usize]
            };
            buf[win_off + j] = Complex::new(s as f64 * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for b in 0..n_bins {
            out[[b, t]] = buf[b].norm() as f32;
        }
    }
    out
}
