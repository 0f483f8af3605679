use std::fmt;
use std::path::Path;
use std::str::FromStr;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical model sample rate.
pub const SAMPLE_RATE: u32 = 44_100;

/// Which of the three dataset groups a clip belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Exclamation,
    Designed,
    Animal,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Exclamation => "exclamation",
            Category::Designed => "designed",
            Category::Animal => "animal",
        })
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exclamation" => Ok(Category::Exclamation),
            "designed" => Ok(Category::Designed),
            "animal" => Ok(Category::Animal),
            other => Err(Error::config(format!("unknown category {other:?}"))),
        }
    }
}

/// A mono waveform with amplitudes in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
    pub source_path: Option<String>,
    pub category: Option<Category>,
}

impl AudioClip {
    /// Fails on non-finite samples, samples outside [-1, 1] or a zero rate.
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::domain("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::domain(format!("non-finite sample at index {i}")));
        }
        if let Some(i) = samples.iter().position(|s| s.abs() > 1.0) {
            return Err(Error::domain(format!(
                "sample {} at index {i} outside [-1, 1]",
                samples[i]
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
            source_path: None,
            category: None,
        })
    }

    /// Peak-normalizes when any |sample| exceeds 1; non-finite values are
    /// still rejected.
    pub fn from_unnormalized(mut samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        let peak = samples.iter().fold(0.0f32, |m, s| m.max(s.abs()));
        if peak.is_finite() && peak > 1.0 {
            samples.iter_mut().for_each(|s| *s /= peak);
        }
        Self::new(samples, sample_rate)
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
            source_path: None,
            category: None,
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Carries provenance over to a derived waveform.
    pub fn with_provenance_of(mut self, other: &AudioClip) -> Self {
        self.source_path = other.source_path.clone();
        self.category = other.category;
        self
    }
}

/// Reads a 16-bit integer or 32-bit float PCM WAV, mixing down to mono.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Format {
            path: path.into(),
            reason: "zero channels".into(),
        });
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedCodec {
                path: path.into(),
                reason: format!("{fmt:?} with {bits} bits per sample"),
            })
        }
    };
    let mono: Vec<f32> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();
    let mut clip = AudioClip::from_unnormalized(mono, spec.sample_rate).map_err(|e| Error::Format {
        path: path.into(),
        reason: e.to_string(),
    })?;
    clip.source_path = Some(path.display().to_string());
    Ok(clip)
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::Unsupported => Error::UnsupportedCodec {
            path: path.into(),
            reason: "encoding not supported".into(),
        },
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::NotFound => Error::Io(io),
        other => Error::Format {
            path: path.into(),
            reason: other.to_string(),
        },
    }
}

/// Writes 16-bit PCM mono.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let to_io = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Format {
            path: path.into(),
            reason: other.to_string(),
        },
    };
    let mut writer = WavWriter::create(path, spec).map_err(to_io)?;
    for &s in clip.samples() {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(to_io)?;
    }
    writer.finalize().map_err(to_io)
}
