//! Energy-contour agreement between source and converted audio, with an
//! optional external ASR hook for character and word error rates.

use std::io::Write;
use std::path::PathBuf;
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::dsp::{frame_energy, normalize_energy, stft, write_wav, AudioClip, EnergyContour, StftConfig};
use crate::error::{Error, Result};

fn check_pair(a: &EnergyContour, b: &EnergyContour) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim(format!("contours have {} and {} frames", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::domain("empty energy contour"));
    }
    Ok(())
}

/// Pearson correlation of two equal-length contours.
pub fn pcc_energy(a: &EnergyContour, b: &EnergyContour) -> Result<f64> {
    check_pair(a, b)?;
    if a.len() < 2 {
        return Err(Error::domain("correlation needs at least two frames"));
    }
    let n = a.len() as f64;
    let ma = a.values.iter().sum::<f64>() / n;
    let mb = b.values.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.values.iter().zip(&b.values) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 {
        return Err(Error::ZeroVariance("first contour"));
    }
    if sbb == 0.0 {
        return Err(Error::ZeroVariance("second contour"));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

pub fn rmse_energy(a: &EnergyContour, b: &EnergyContour) -> Result<f64> {
    check_pair(a, b)?;
    let mse = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    Ok(mse.sqrt())
}

/// Normalized energy contour of a clip under the training analysis settings.
pub fn energy_contour(clip: &AudioClip, cfg: &StftConfig, epsilon: f64) -> Result<EnergyContour> {
    normalize_energy(&frame_energy(&stft(clip, cfg)?), epsilon)
}

/// Truncates two contours to a common length. Converted audio of `T` frames
/// re-analyses to `T + 1` frames, so a one-frame difference is expected;
/// anything larger is a mismatch.
pub fn align_contours(a: EnergyContour, b: EnergyContour) -> Result<(EnergyContour, EnergyContour)> {
    let n = a.len().min(b.len());
    if a.len().abs_diff(b.len()) > 1 {
        return Err(Error::dim(format!(
            "converted audio does not match its source: {} vs {} frames",
            a.len(),
            b.len()
        )));
    }
    let cut = |c: EnergyContour| EnergyContour {
        values: c.values[..n].to_vec(),
        ..c
    };
    Ok((cut(a), cut(b)))
}

/// Transcribes a clip.
pub trait AsrPlugin {
    fn transcribe(&self, clip: &AudioClip) -> Result<String>;
}

/// Runs `program args... <wav>` and reads the transcript from stdout.
#[derive(Debug, Clone)]
pub struct CommandAsr {
    pub program: String,
    pub args: Vec<String>,
}

impl CommandAsr {
    /// Splits a command line on whitespace.
    pub fn parse(cmd: &str) -> Result<Self> {
        let mut parts = cmd.split_whitespace().map(str::to_string);
        let program = parts.next().ok_or_else(|| Error::config("empty ASR command"))?;
        Ok(Self {
            program,
            args: parts.collect(),
        })
    }
}

impl AsrPlugin for CommandAsr {
    fn transcribe(&self, clip: &AudioClip) -> Result<String> {
        let path: PathBuf = std::env::temp_dir().join(format!(
            "nhvc-asr-{}-{:x}.wav",
            std::process::id(),
            rand::random::<u64>()
        ));
        write_wav(&path, clip)?;
        let out = Command::new(&self.program).args(&self.args).arg(&path).output();
        let _ = std::fs::remove_file(&path);
        let out = out.map_err(|e| Error::Plugin(format!("{}: {e}", self.program)))?;
        if !out.status.success() {
            let mut msg = String::from_utf8_lossy(&out.stderr).into_owned();
            msg.truncate(500);
            return Err(Error::Plugin(format!("{} exited with {}: {msg}", self.program, out.status)));
        }
        Ok(String::from_utf8_lossy(&out.stdout).trim().to_string())
    }
}

fn normalize_text(s: &str) -> String {
    s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Character error rate of `hyp` against `reference`.
pub fn character_error_rate(reference: &str, hyp: &str) -> f64 {
    let r: Vec<char> = normalize_text(reference).chars().collect();
    let h: Vec<char> = normalize_text(hyp).chars().collect();
    if r.is_empty() {
        return if h.is_empty() { 0.0 } else { 1.0 };
    }
    strsim::generic_levenshtein(&r, &h) as f64 / r.len() as f64
}

pub fn word_error_rate(reference: &str, hyp: &str) -> f64 {
    let r_text = normalize_text(reference);
    let h_text = normalize_text(hyp);
    let r: Vec<&str> = r_text.split(' ').filter(|w| !w.is_empty()).collect();
    let h: Vec<&str> = h_text.split(' ').filter(|w| !w.is_empty()).collect();
    if r.is_empty() {
        return if h.is_empty() { 0.0 } else { 1.0 };
    }
    strsim::generic_levenshtein(&r, &h) as f64 / r.len() as f64
}

#[derive(Debug, Clone)]
pub struct EvalPair {
    pub id: String,
    pub source: AudioClip,
    pub converted: AudioClip,
    /// Only pairs with phonemic content are scored by ASR.
    pub linguistic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub id: String,
    /// Missing when either contour has zero variance.
    pub pcc_e: Option<f64>,
    pub rmse_e: f64,
    pub cer: Option<f64>,
    pub wer: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: Option<String>,
    pub pairs: Vec<PairResult>,
    pub count: usize,
    pub pcc_count: usize,
    pub mean_pcc_e: Option<f64>,
    pub mean_rmse_e: Option<f64>,
    pub asr_count: usize,
    pub mean_cer: Option<f64>,
    pub mean_wer: Option<f64>,
    /// Set when the ASR plug-in failed and the report fell back to energy only.
    pub asr_error: Option<String>,
}

fn mean(xs: impl Iterator<Item = f64>) -> (usize, Option<f64>) {
    let (n, s) = xs.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n, (n > 0).then(|| s / n as f64))
}

pub fn evaluate_pairs(
    pairs: &[EvalPair],
    asr: Option<&dyn AsrPlugin>,
    stft_cfg: &StftConfig,
    epsilon: f64,
) -> Result<EvalReport> {
    let mut results = Vec::with_capacity(pairs.len());
    let mut asr_error = None;
    for p in pairs {
        let (a, b) = align_contours(
            energy_contour(&p.source, stft_cfg, epsilon)?,
            energy_contour(&p.converted, stft_cfg, epsilon)?,
        )?;
        let pcc_e = match pcc_energy(&a, &b) {
            Ok(v) => Some(v),
            Err(Error::ZeroVariance(which)) => {
                log::warn!("{}: correlation undefined ({which} is constant)", p.id);
                None
            }
            Err(e) => return Err(e),
        };
        let rmse_e = rmse_energy(&a, &b)?;
        let (mut cer, mut wer) = (None, None);
        if let (Some(asr), true, None) = (asr, p.linguistic, &asr_error) {
            match asr.transcribe(&p.source).and_then(|r| Ok((r, asr.transcribe(&p.converted)?))) {
                Ok((r, h)) => {
                    cer = Some(character_error_rate(&r, &h));
                    wer = Some(word_error_rate(&r, &h));
                }
                Err(e) => {
                    log::warn!("ASR plug-in failed, reporting energy metrics only: {e}");
                    asr_error = Some(e.to_string());
                }
            }
        }
        results.push(PairResult {
            id: p.id.clone(),
            pcc_e,
            rmse_e,
            cer,
            wer,
        });
    }
    if asr_error.is_some() {
        for r in &mut results {
            r.cer = None;
            r.wer = None;
        }
    }
    let (pcc_count, mean_pcc_e) = mean(results.iter().filter_map(|r| r.pcc_e));
    let (_, mean_rmse_e) = mean(results.iter().map(|r| r.rmse_e));
    let (asr_count, mean_cer) = mean(results.iter().filter_map(|r| r.cer));
    let (_, mean_wer) = mean(results.iter().filter_map(|r| r.wer));
    Ok(EvalReport {
        config_hash: None,
        count: results.len(),
        pairs: results,
        pcc_count,
        mean_pcc_e,
        mean_rmse_e,
        asr_count,
        mean_cer,
        mean_wer,
        asr_error,
    })
}

impl EvalReport {
    /// One JSON record per pair followed by the aggregate record.
    pub fn write_ndjson(&self, out: &mut impl Write) -> Result<()> {
        for p in &self.pairs {
            writeln!(out, "{}", serde_json::to_string(p)?)?;
        }
        let aggregate = EvalReport {
            pairs: Vec::new(),
            ..self.clone()
        };
        writeln!(out, "{}", serde_json::json!({ "aggregate": aggregate }))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(v: &[f64]) -> EnergyContour {
        EnergyContour::raw(v.to_vec())
    }

    #[test]
    fn pcc_examples() {
        let a = c(&[0.1, -0.4, 0.9, 0.3]);
        assert!((pcc_energy(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg = c(&a.values.iter().map(|v| -v).collect::<Vec<_>>());
        assert!((pcc_energy(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((pcc_energy(&c(&[1.0, 2.0, 3.0]), &c(&[2.0, 4.0, 6.0])).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(pcc_energy(&c(&[1.0, 1.0]), &c(&[1.0, 2.0])), Err(Error::ZeroVariance(_))));
    }

    #[test]
    fn rmse_examples() {
        let a = c(&[0.3, 0.7]);
        assert_eq!(rmse_energy(&a, &a).unwrap(), 0.0);
        assert_eq!(rmse_energy(&c(&[0.0, 0.0]), &c(&[1.0, 1.0])).unwrap(), 1.0);
        assert_eq!(rmse_energy(&c(&[0.0, 2.0]), &c(&[2.0, 0.0])).unwrap(), 2.0);
        assert!(matches!(rmse_energy(&c(&[0.0]), &c(&[0.0, 1.0])), Err(Error::Dimension(_))));
    }

    #[test]
    fn alignment_allows_one_frame() {
        let (a, b) = align_contours(c(&[1.0, 2.0, 3.0]), c(&[1.0, 2.0])).unwrap();
        assert_eq!((a.len(), b.len()), (2, 2));
        assert!(align_contours(c(&[1.0, 2.0, 3.0]), c(&[1.0])).is_err());
    }

    #[test]
    fn error_rates() {
        assert_eq!(character_error_rate("abc", "abc"), 0.0);
        assert!((character_error_rate("abcd", "abxd") - 0.25).abs() < 1e-12);
        assert!((word_error_rate("the cat sat", "the bat sat down") - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(word_error_rate("Hello  World", "hello world"), 0.0);
    }

    fn contour() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-5.0f64..5.0, 8)
    }

    proptest! {
        #[test]
        fn pcc_affine_invariant(a in contour(), b in contour(), scale in 0.01f64..100.0, shift in -10.0f64..10.0) {
            let (ca, cb) = (c(&a), c(&b));
            if let Ok(r) = pcc_energy(&ca, &cb) {
                let moved = c(&b.iter().map(|v| scale * v + shift).collect::<Vec<_>>());
                let r2 = pcc_energy(&ca, &moved).unwrap();
                prop_assert!((r - r2).abs() < 1e-9);
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }

        #[test]
        fn rmse_triangle(a in contour(), b in contour(), d in contour()) {
            let (a, b, d) = (c(&a), c(&b), c(&d));
            let ab = rmse_energy(&a, &b).unwrap();
            let bd = rmse_energy(&b, &d).unwrap();
            let ad = rmse_energy(&a, &d).unwrap();
            prop_assert!(ad <= ab + bd + 1e-12);
        }
    }
}
