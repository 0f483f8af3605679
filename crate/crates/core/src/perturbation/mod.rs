//! Timbre perturbation applied to training inputs before content extraction:
//! random peaking EQ, then formant shift, pitch shift and pitch-range scaling
//! by PSOLA resynthesis.

mod peq;
mod pitch;
mod psola;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{resample_by_ratio, AudioClip};
use crate::error::{Error, Result};

pub use peq::PeakingBand;
pub use pitch::{track_pitch, PitchTrack, F0_MAX, F0_MIN};

/// Floor for shifted pitch targets, Hz.
const MIN_TARGET_F0: f64 = 25.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    pub formant_shift_max: f64,
    pub pitch_shift_max: f64,
    pub pitch_range_max: f64,
    pub peq_bands: usize,
    pub peq_gain_db_range: f64,
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            formant_shift_max: 1.8,
            pitch_shift_max: 3.0,
            pitch_range_max: 2.0,
            peq_bands: 8,
            peq_gain_db_range: 12.0,
            seed: 0,
        }
    }
}

impl PerturbConfig {
    /// Ranges that leave the waveform untouched.
    pub fn identity() -> Self {
        Self {
            formant_shift_max: 1.0,
            pitch_shift_max: 1.0,
            pitch_range_max: 1.0,
            peq_bands: 0,
            peq_gain_db_range: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("formant_shift_max", self.formant_shift_max),
            ("pitch_shift_max", self.pitch_shift_max),
            ("pitch_range_max", self.pitch_range_max),
        ] {
            if !(v.is_finite() && v >= 1.0) {
                return Err(Error::config(format!("{name} must be >= 1, got {v}")));
            }
        }
        if !(self.peq_gain_db_range.is_finite() && self.peq_gain_db_range >= 0.0) {
            return Err(Error::config("peq_gain_db_range must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbRatios {
    pub formant: f64,
    pub pitch: f64,
    pub range: f64,
}

impl PerturbRatios {
    pub const IDENTITY: Self = Self {
        formant: 1.0,
        pitch: 1.0,
        range: 1.0,
    };

    fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

/// Log-uniform draw from `[1/max, max]`; exactly 1 when `max == 1`.
fn log_uniform(rng: &mut impl Rng, max: f64) -> f64 {
    if max <= 1.0 {
        return 1.0;
    }
    let l = max.ln();
    rng.gen_range(-l..=l).exp()
}

pub fn sample_ratios(cfg: &PerturbConfig, rng: &mut impl Rng) -> PerturbRatios {
    PerturbRatios {
        formant: log_uniform(rng, cfg.formant_shift_max),
        pitch: log_uniform(rng, cfg.pitch_shift_max),
        range: log_uniform(rng, cfg.pitch_range_max),
    }
}

/// A fully drawn perturbation.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbPlan {
    pub eq: Vec<PeakingBand>,
    pub ratios: PerturbRatios,
}

impl PerturbPlan {
    pub fn draw(cfg: &PerturbConfig, sample_rate: u32, rng: &mut impl Rng) -> Self {
        let nyq_limit = (0.45 * sample_rate as f64).min(16_000.0);
        let eq = (0..cfg.peq_bands)
            .map(|_| {
                let lo: f64 = 60f64.ln();
                let center_hz = rng.gen_range(lo..nyq_limit.ln().max(lo + 1e-6)).exp();
                let q = rng.gen_range(0.7f64.ln()..5f64.ln()).exp();
                let gain_db = if cfg.peq_gain_db_range > 0.0 {
                    rng.gen_range(-cfg.peq_gain_db_range..=cfg.peq_gain_db_range)
                } else {
                    0.0
                };
                PeakingBand {
                    center_hz,
                    gain_db,
                    q,
                }
            })
            .collect();
        let ratios = sample_ratios(cfg, rng);
        Self { eq, ratios }
    }
}

/// Draws a plan from `cfg.seed` and applies it.
pub fn perturb_timbre(clip: &AudioClip, cfg: &PerturbConfig) -> Result<AudioClip> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let plan = PerturbPlan::draw(cfg, clip.sample_rate(), &mut rng);
    apply_plan(clip, &plan)
}

/// Applies EQ, then formant/pitch/range modification. Output length and rate
/// always match the input.
pub fn apply_plan(clip: &AudioClip, plan: &PerturbPlan) -> Result<AudioClip> {
    if clip.is_empty() {
        return Err(Error::domain("cannot perturb an empty clip"));
    }
    let sr = clip.sample_rate();
    let n = clip.len();

    let mut x: Vec<f64> = clip.samples().iter().map(|&s| s as f64).collect();
    for band in &plan.eq {
        band.apply(&mut x, sr as f64);
    }
    let eqd: Vec<f32> = x.iter().map(|&v| v as f32).collect();

    let r = plan.ratios;
    let out = if r.is_identity() {
        eqd
    } else {
        let track = track_pitch(&eqd, sr);
        match track.median() {
            None if r.formant == 1.0 => eqd,
            median => {
                let median = median.unwrap_or(1.0);
                // speeding playback up by the formant ratio scales every frequency
                let sped = if r.formant == 1.0 {
                    eqd
                } else {
                    let len = ((n as f64) / r.formant).round().max(1.0) as usize;
                    resample_by_ratio(&eqd, 1.0 / r.formant, len)
                };
                let target = |t: f64| {
                    track.at(t).map(|f0| {
                        let ranged = median + (f0 - median) * r.range;
                        (r.pitch * ranged).clamp(MIN_TARGET_F0, sr as f64 / 4.0)
                    })
                };
                psola::psola(
                    &sped,
                    sr,
                    psola::scaled_track(&track, r.formant),
                    1.0 / r.formant,
                    n,
                    target,
                )
            }
        }
    };
    debug_assert_eq!(out.len(), n);
    Ok(AudioClip::from_unnormalized(out, sr)?.with_provenance_of(clip))
}
