use std::f64::consts::PI;

use crate::dsp::AudioClip;
use crate::error::{Error, Result};

/// Zero crossings of the interpolation kernel on each side.
const KERNEL_ZEROS: f64 = 24.0;
const KAISER_BETA: f64 = 8.6;

/// Band-limited resampling to `target_rate`. Output length is
/// `round(len * target / source)`; equal rates return the clip unchanged.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::domain("target sample rate must be positive"));
    }
    if target_rate == clip.sample_rate() {
        return Ok(clip.clone());
    }
    let ratio = target_rate as f64 / clip.sample_rate() as f64;
    let out_len = (clip.len() as f64 * ratio).round() as usize;
    let out = resample_by_ratio(clip.samples(), ratio, out_len);
    Ok(AudioClip::from_unnormalized(out, target_rate)?.with_provenance_of(clip))
}

/// Windowed-sinc interpolation. `ratio` is output rate over input rate; the
/// kernel cutoff drops to the output Nyquist when downsampling.
pub fn resample_by_ratio(input: &[f32], ratio: f64, out_len: usize) -> Vec<f32> {
    if input.is_empty() {
        return vec![0.0; out_len];
    }
    let cutoff = ratio.min(1.0);
    let half_width = KERNEL_ZEROS / cutoff;
    let norm = bessel_i0(KAISER_BETA);
    let last = input.len() as isize - 1;
    (0..out_len)
        .map(|j| {
            let t = j as f64 / ratio;
            let lo = ((t - half_width).ceil() as isize).max(0);
            let hi = ((t + half_width).floor() as isize).min(last);
            let mut acc = 0.0f64;
            for k in lo..=hi {
                let d = t - k as f64;
                let x = d / half_width;
                let w = bessel_i0(KAISER_BETA * (1.0 - x * x).max(0.0).sqrt()) / norm;
                acc += input[k as usize] as f64 * cutoff * sinc(cutoff * d) * w;
            }
            acc as f32
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-16 {
            break;
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_second_keeps_duration() {
        let clip = AudioClip::silence(44100, 44100);
        let out = resample(&clip, 16000).unwrap();
        assert_eq!(out.len(), 16000);
        assert_eq!(out.sample_rate(), 16000);
    }

    #[test]
    fn same_rate_is_identity() {
        let samples: Vec<f32> = (0..1000).map(|i| ((i as f32) * 0.37).sin() * 0.5).collect();
        let clip = AudioClip::new(samples, 16000).unwrap();
        let out = resample(&clip, 16000).unwrap();
        assert_eq!(out, clip);
    }

    #[test]
    fn rejects_zero_rate() {
        let clip = AudioClip::silence(10, 16000);
        assert!(resample(&clip, 0).is_err());
    }

    #[test]
    fn low_tone_survives_round_trip() {
        let n = 8000;
        let x: Vec<f32> = (0..n)
            .map(|i| (2.0 * std::f32::consts::PI * 300.0 * i as f32 / 16000.0).sin() * 0.5)
            .collect();
        let clip = AudioClip::new(x.clone(), 16000).unwrap();
        let up = resample(&clip, 44100).unwrap();
        let back = resample(&up, 16000).unwrap();
        assert_eq!(back.len(), n);
        // ignore kernel edge effects
        let err: f32 = x[500..n - 500]
            .iter()
            .zip(&back.samples()[500..n - 500])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max);
        assert!(err < 1e-3, "max error {err}");
    }
}
