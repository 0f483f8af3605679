//! Time-domain pitch-synchronous overlap-add.

use std::f64::consts::PI;

use super::pitch::PitchTrack;

/// Mark spacing used where the signal is unvoiced, in seconds.
const UNVOICED_SPACING_S: f64 = 0.01;
/// Lower bound on the overlap-add normalizer; grains spaced further apart
/// than their length leave attenuated gaps rather than amplified tails.
const WSUM_FLOOR: f64 = 0.5;

#[derive(Debug, Clone, Copy)]
struct Mark {
    pos: usize,
    period: f64,
}

/// Pitch marks over `x`, where the pitch at position `t` is given by `f0_at(t)`.
/// Voiced marks are snapped to the waveform maximum within a quarter period.
fn analysis_marks(x: &[f32], sr: f64, f0_at: impl Fn(f64) -> Option<f64>) -> Vec<Mark> {
    let uv = sr * UNVOICED_SPACING_S;
    let mut marks = Vec::new();
    let mut pos = 0.0f64;
    while (pos as usize) < x.len() {
        let period = f0_at(pos).map_or(uv, |f| sr / f);
        let mut p = pos.round() as usize;
        if f0_at(pos).is_some() {
            let reach = (period / 4.0) as usize;
            let lo = p.saturating_sub(reach);
            let hi = (p + reach).min(x.len() - 1);
            if let Some((i, _)) = x[lo..=hi]
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
            {
                p = lo + i;
            }
        }
        // marks stay strictly increasing
        if marks.last().is_some_and(|m: &Mark| p <= m.pos) {
            p = marks.last().unwrap().pos + 1;
        }
        if p >= x.len() {
            break;
        }
        marks.push(Mark { pos: p, period });
        pos = p as f64 + period;
    }
    marks
}

/// Re-synthesizes `source` onto `out_len` samples. Output time `t` draws grains
/// from source position `t * time_scale`; voiced output regions (per
/// `target_f0`) are re-spaced at the target period.
///
/// `source_f0` gives the pitch of `source` at a source position.
pub(crate) fn psola(
    source: &[f32],
    sample_rate: u32,
    source_f0: impl Fn(f64) -> Option<f64>,
    time_scale: f64,
    out_len: usize,
    target_f0: impl Fn(f64) -> Option<f64>,
) -> Vec<f32> {
    let sr = sample_rate as f64;
    let mut out = vec![0.0f64; out_len];
    let mut wsum = vec![0.0f64; out_len];
    if source.is_empty() || out_len == 0 {
        return vec![0.0; out_len];
    }
    let marks = analysis_marks(source, sr, &source_f0);
    if marks.is_empty() {
        return vec![0.0; out_len];
    }
    let uv = sr * UNVOICED_SPACING_S;
    let mut t_s = 0.0f64;
    while (t_s as usize) < out_len {
        let t_a = t_s * time_scale;
        let idx = match marks.binary_search_by(|m| (m.pos as f64).total_cmp(&t_a)) {
            Ok(i) => i,
            Err(i) if i == 0 => 0,
            Err(i) if i >= marks.len() => marks.len() - 1,
            Err(i) => {
                if t_a - marks[i - 1].pos as f64 <= marks[i].pos as f64 - t_a {
                    i - 1
                } else {
                    i
                }
            }
        };
        let mark = marks[idx];
        let half = mark.period.round().max(1.0) as isize;
        let centre = t_s.round() as isize;
        for k in -half..half {
            let src = mark.pos as isize + k;
            let dst = centre + k;
            if src < 0 || src as usize >= source.len() || dst < 0 || dst as usize >= out_len {
                continue;
            }
            let w = 0.5 - 0.5 * (PI * (k + half) as f64 / half as f64).cos();
            out[dst as usize] += w * source[src as usize] as f64;
            wsum[dst as usize] += w;
        }
        let step = target_f0(t_s).map_or(uv, |f| sr / f);
        t_s += step.max(1.0);
    }
    out.iter()
        .zip(&wsum)
        .map(|(&o, &w)| (o / w.max(WSUM_FLOOR)) as f32)
        .collect()
}

/// Pitch of a signal that was sped up by `rate`, expressed on the sped-up timeline.
pub(crate) fn scaled_track(track: &PitchTrack, rate: f64) -> impl Fn(f64) -> Option<f64> + '_ {
    move |pos| track.at(pos * rate).map(|f| f * rate)
}
