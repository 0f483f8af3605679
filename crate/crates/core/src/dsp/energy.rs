use crate::dsp::LinearSpectrogram;
use crate::error::{Error, Result};

/// Offset used by the log-mean energy normalization.
pub const ENERGY_EPSILON: f64 = 1e-5;

/// Per-frame energy track.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyContour {
    pub values: Vec<f64>,
    pub normalized: bool,
    /// The offset applied during normalization, 0 for raw contours.
    pub epsilon: f64,
}

impl EnergyContour {
    pub fn raw(values: Vec<f64>) -> Self {
        Self {
            values,
            normalized: false,
            epsilon: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// L2 norm of each magnitude frame.
pub fn frame_energy(linear: &LinearSpectrogram) -> EnergyContour {
    let values = linear
        .frames
        .columns()
        .into_iter()
        .map(|col| col.iter().map(|&m| (m as f64) * (m as f64)).sum::<f64>().sqrt())
        .collect();
    EnergyContour::raw(values)
}

/// `y = ln(x + eps) - ln(mean(x) + eps)` with the mean taken over the whole contour.
pub fn normalize_energy(e: &EnergyContour, epsilon: f64) -> Result<EnergyContour> {
    if e.normalized {
        return Err(Error::domain("energy contour is already normalized"));
    }
    if e.is_empty() {
        return Err(Error::domain("cannot normalize an empty energy contour"));
    }
    let mean = e.values.iter().sum::<f64>() / e.len() as f64;
    let offset = (mean + epsilon).ln();
    Ok(EnergyContour {
        values: e.values.iter().map(|&x| (x + epsilon).ln() - offset).collect(),
        normalized: true,
        epsilon,
    })
}
