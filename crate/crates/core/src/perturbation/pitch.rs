//! Normalized cross-correlation pitch tracker used to place PSOLA marks.

pub const F0_MIN: f64 = 50.0;
pub const F0_MAX: f64 = 1000.0;
const VOICING_THRESHOLD: f64 = 0.6;
/// Frames quieter than this fraction of the loudest frame are unvoiced.
const SILENCE_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct PitchTrack {
    /// Frame `i` is centred on sample `i * hop`.
    pub hop: usize,
    pub f0: Vec<Option<f64>>,
}

impl PitchTrack {
    /// f0 at a (fractional) sample position, nearest frame.
    pub fn at(&self, sample: f64) -> Option<f64> {
        if self.f0.is_empty() {
            return None;
        }
        let i = (sample / self.hop as f64).round().max(0.0) as usize;
        self.f0[i.min(self.f0.len() - 1)]
    }

    pub fn median(&self) -> Option<f64> {
        let mut voiced: Vec<f64> = self.f0.iter().flatten().copied().collect();
        if voiced.is_empty() {
            return None;
        }
        voiced.sort_by(f64::total_cmp);
        let n = voiced.len();
        Some(if n % 2 == 1 {
            voiced[n / 2]
        } else {
            0.5 * (voiced[n / 2 - 1] + voiced[n / 2])
        })
    }
}

pub fn track_pitch(x: &[f32], sample_rate: u32) -> PitchTrack {
    let sr = sample_rate as f64;
    let hop = (sr / 100.0).round().max(1.0) as usize;
    let min_lag = (sr / F0_MAX.min(sr / 4.0)).floor().max(2.0) as usize;
    let max_lag = (sr / F0_MIN).ceil() as usize;
    let win = 2 * max_lag;
    let n_frames = x.len() / hop + 1;

    let at = |i: isize| -> f64 {
        if i < 0 || i as usize >= x.len() {
            0.0
        } else {
            x[i as usize] as f64
        }
    };

    let frame_rms: Vec<f64> = (0..n_frames)
        .map(|f| {
            let start = (f * hop) as isize - (win / 2) as isize;
            ((0..win).map(|n| at(start + n as isize).powi(2)).sum::<f64>() / win as f64).sqrt()
        })
        .collect();
    let loudest = frame_rms.iter().copied().fold(0.0, f64::max);

    let mut f0 = Vec::with_capacity(n_frames);
    let mut a = vec![0.0; win];
    let mut b = vec![0.0; win + max_lag + 2];
    for f in 0..n_frames {
        if loudest <= 0.0 || frame_rms[f] < SILENCE_FRACTION * loudest {
            f0.push(None);
            continue;
        }
        let start = (f * hop) as isize - (win / 2) as isize;
        for (n, v) in b.iter_mut().enumerate() {
            *v = at(start + n as isize);
        }
        a.copy_from_slice(&b[..win]);
        let ea: f64 = a.iter().map(|v| v * v).sum();
        // prefix sums of b^2 give the energy of each shifted window
        let mut prefix = vec![0.0; b.len() + 1];
        for (i, v) in b.iter().enumerate() {
            prefix[i + 1] = prefix[i] + v * v;
        }
        let r: Vec<f64> = (0..=max_lag + 1)
            .map(|lag| {
                if lag < min_lag.saturating_sub(1) {
                    return 0.0;
                }
                let num: f64 = a.iter().zip(&b[lag..lag + win]).map(|(p, q)| p * q).sum();
                let eb = prefix[lag + win] - prefix[lag];
                let den = (ea * eb).sqrt();
                if den > 0.0 {
                    num / den
                } else {
                    0.0
                }
            })
            .collect();
        let best = (min_lag..=max_lag).map(|l| r[l]).fold(f64::MIN, f64::max);
        if best < VOICING_THRESHOLD {
            f0.push(None);
            continue;
        }
        // shortest lag that is a local peak close to the global best avoids octave drops
        let lag = (min_lag..=max_lag)
            .find(|&l| r[l] >= 0.9 * best && r[l] >= r[l - 1] && r[l] >= r[l + 1])
            .unwrap_or(min_lag);
        let (y0, y1, y2) = (r[lag - 1], r[lag], r[lag + 1]);
        let denom = y0 - 2.0 * y1 + y2;
        let shift = if denom.abs() > 1e-12 {
            (0.5 * (y0 - y2) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        f0.push(Some(sr / (lag as f64 + shift)));
    }
    PitchTrack { hop, f0 }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sawtooth(freq: f64, sr: u32, len: usize) -> Vec<f32> {
        (0..len)
            .map(|i| {
                let p = (i as f64 * freq / sr as f64).fract();
                (0.8 * (2.0 * p - 1.0)) as f32
            })
            .collect()
    }

    #[test]
    fn tracks_sawtooth() {
        let track = track_pitch(&sawtooth(220.0, 16000, 16000), 16000);
        let med = track.median().unwrap();
        assert!((med - 220.0).abs() < 2.0, "median {med}");
    }

    #[test]
    fn silence_unvoiced() {
        let track = track_pitch(&vec![0.0; 8000], 16000);
        assert!(track.f0.iter().all(Option::is_none));
        assert!(track.median().is_none());
    }

    #[test]
    fn sine_at_high_pitch() {
        let x: Vec<f32> = (0..16000)
            .map(|i| (2.0 * std::f64::consts::PI * 700.0 * i as f64 / 16000.0).sin() as f32)
            .collect();
        let med = track_pitch(&x, 16000).median().unwrap();
        assert!((med - 700.0).abs() < 7.0, "median {med}");
    }
}
