use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dsp::{LinearSpectrogram, StftConfig};
use crate::error::{Error, Result};

/// Offset added before taking the log of a mel magnitude.
pub const MEL_EPSILON: f32 = 1e-5;

/// Row normalization of the triangular filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MelNorm {
    /// Unit-peak triangles.
    #[default]
    None,
    /// Each triangle scaled to unit area (Slaney style).
    Area,
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    /// `n_mels x n_linear_bins`
    pub weights: Array2<f32>,
    pub f_min: f64,
    pub f_max: f64,
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.weights.ncols()
    }
}

/// HTK-scale triangular filters with centres equally spaced in mel.
pub fn mel_filterbank(
    cfg: &StftConfig,
    n_mels: usize,
    f_min: f64,
    f_max: f64,
    norm: MelNorm,
) -> Result<MelFilterbank> {
    let nyquist = cfg.sample_rate as f64 / 2.0;
    if !(0.0 <= f_min && f_min < f_max && f_max <= nyquist) {
        return Err(Error::config(format!(
            "mel range must satisfy 0 <= f_min < f_max <= {nyquist}, got {f_min}..{f_max}"
        )));
    }
    let n_bins = cfg.n_bins();
    if n_mels == 0 || n_mels > n_bins {
        return Err(Error::config(format!(
            "n_mels ({n_mels}) must be in 1..={n_bins} linear bins"
        )));
    }
    let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;

    let mut weights = Array2::<f32>::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let scale = match norm {
            MelNorm::None => 1.0,
            MelNorm::Area => 2.0 / (hi - lo),
        };
        for b in 0..n_bins {
            let f = b as f64 * bin_hz;
            let w = ((f - lo) / (c - lo)).min((hi - f) / (hi - c));
            if w > 0.0 {
                weights[[m, b]] = (w * scale) as f32;
            }
        }
    }
    Ok(MelFilterbank {
        weights,
        f_min,
        f_max,
    })
}

/// `n_mels x frames`; log-scaled grids hold `ln(magnitude + MEL_EPSILON)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Array2<f32>,
    pub log_scaled: bool,
}

impl MelSpectrogram {
    pub fn n_mels(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.frames.ncols()
    }
}

pub fn mel_spectrogram(
    linear: &LinearSpectrogram,
    fb: &MelFilterbank,
    log_scale: bool,
) -> Result<MelSpectrogram> {
    if fb.n_bins() != linear.n_bins() {
        return Err(Error::dim(format!(
            "filterbank expects {} bins, spectrogram has {}",
            fb.n_bins(),
            linear.n_bins()
        )));
    }
    let mut frames = fb.weights.dot(&linear.frames);
    if log_scale {
        frames.mapv_inplace(|v| (v + MEL_EPSILON).ln());
    }
    Ok(MelSpectrogram {
        frames,
        log_scaled: log_scale,
    })
}
