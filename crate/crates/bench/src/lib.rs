//! Shared inputs for the benchmarks.

use nhvc_core::dsp::AudioClip;

/// Deterministic harmonic test clip at 44.1 kHz.
pub fn harmonic_clip(seconds: f64) -> AudioClip {
    let n = (seconds * 44_100.0) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f32 / 44_100.0;
            (1..6).map(|h| (2.0 * std::f32::consts::PI * 180.0 * h as f32 * t).sin() / (2 * h) as f32).sum()
        })
        .collect();
    AudioClip::new(samples, 44_100).expect("samples are in range")
}
