use image::{Rgb, RgbImage};
use ndarray::Array2;

/// Piecewise-linear dark-to-bright palette.
const STOPS: [[f32; 3]; 5] = [
    [0.0, 0.0, 4.0],
    [87.0, 16.0, 110.0],
    [188.0, 55.0, 84.0],
    [249.0, 142.0, 9.0],
    [252.0, 255.0, 164.0],
];

fn palette(v: f32) -> Rgb<u8> {
    let x = v.clamp(0.0, 1.0) * (STOPS.len() - 1) as f32;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f32;
    let c = |k: usize| (STOPS[i][k] + (STOPS[i + 1][k] - STOPS[i][k]) * f).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// One column per frame, one row per band with low frequencies at the
/// bottom. Values are scaled to the clip's own range over an 80 dB span.
pub fn render(log_mel: &Array2<f32>) -> RgbImage {
    let (bands, frames) = log_mel.dim();
    let max = log_mel.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let min = log_mel.iter().copied().fold(f32::INFINITY, f32::min).max(max - 80.0 / 20.0 * std::f32::consts::LN_10);
    let span = max - min;
    RgbImage::from_fn(frames as u32, bands as u32, |x, y| {
        let v = log_mel[[bands - 1 - y as usize, x as usize]];
        palette(if span > 0.0 { (v - min) / span } else { 0.0 })
    })
}
