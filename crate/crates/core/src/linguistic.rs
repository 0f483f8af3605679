//! Content features from a self-supervised speech model, retimed onto the
//! 220-sample model frame grid.
//!
//! The extractor sits behind [`SslBackend`]. [`StubBackend`] is a seeded
//! random projection of framed mel statistics with no weights to download;
//! [`PrecomputedBackend`] reads hidden states exported by an external model.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dsp::{self, AudioClip, MelNorm, StftConfig, WindowKind};
use crate::error::{Error, Result};

pub const SSL_SAMPLE_RATE: u32 = 16_000;
/// 25 ms analysis window at 16 kHz.
pub const SSL_WINDOW: usize = 400;
/// 20 ms stride at 16 kHz.
pub const SSL_STRIDE: usize = 320;

/// Frame count of a wav2vec2-style feature encoder for `len` input samples.
pub fn ssl_frame_count(len: usize) -> usize {
    if len < SSL_WINDOW {
        1
    } else {
        (len - SSL_WINDOW) / SSL_STRIDE + 1
    }
}

/// `dim x frames` hidden states at a 20 ms stride.
#[derive(Debug, Clone, PartialEq)]
pub struct LinguisticFeatures {
    pub frames: Array2<f32>,
    pub backend_id: String,
}

impl LinguisticFeatures {
    pub const STRIDE_MS: f64 = 20.0;
    pub const WINDOW_MS: f64 = 25.0;

    pub fn dim(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.frames.ncols()
    }
}

pub trait SslBackend: Send + Sync {
    fn id(&self) -> &str;

    fn feature_dim(&self) -> usize;

    /// Called with a 16 kHz clip.
    fn extract(&self, clip16k: &AudioClip) -> Result<LinguisticFeatures>;
}

pub fn extract_features(clip16k: &AudioClip, backend: &dyn SslBackend) -> Result<LinguisticFeatures> {
    if clip16k.sample_rate() != SSL_SAMPLE_RATE {
        return Err(Error::config(format!(
            "content extractor needs {SSL_SAMPLE_RATE} Hz input, got {} Hz",
            clip16k.sample_rate()
        )));
    }
    let feats = backend.extract(clip16k)?;
    if feats.dim() != backend.feature_dim() {
        return Err(Error::dim(format!(
            "backend {} returned {} dims, declared {}",
            backend.id(),
            feats.dim(),
            backend.feature_dim()
        )));
    }
    Ok(feats)
}

/// Linear interpolation onto `target_t` evenly spaced positions spanning the
/// original first and last frame.
pub fn retime_to_hop(feats: &LinguisticFeatures, target_t: usize) -> Result<Array2<f32>> {
    let src_t = feats.n_frames();
    if src_t == 0 {
        return Err(Error::domain("no feature frames to retime"));
    }
    if target_t == 0 {
        return Err(Error::domain("target frame count must be at least 1"));
    }
    let mut out = Array2::<f32>::zeros((feats.dim(), target_t));
    for j in 0..target_t {
        let pos = if target_t == 1 || src_t == 1 {
            0.0
        } else {
            j as f64 * (src_t - 1) as f64 / (target_t - 1) as f64
        };
        let i0 = (pos.floor() as usize).min(src_t - 1);
        let i1 = (i0 + 1).min(src_t - 1);
        let w = (pos - i0 as f64) as f32;
        for d in 0..feats.dim() {
            let a = feats.frames[[d, i0]];
            let b = feats.frames[[d, i1]];
            out[[d, j]] = if w == 0.0 { a } else { a + (b - a) * w };
        }
    }
    Ok(out)
}

/// Fixed random projection of `ln(1 + mel)` over 25 ms / 20 ms frames.
/// Linear in the mel statistics, so silence maps to all-zero features.
pub struct StubBackend {
    projection: Array2<f32>,
    stft: StftConfig,
    mel: Array2<f32>,
    id: String,
}

impl StubBackend {
    pub const DEFAULT_DIM: usize = 1024;
    const N_MELS: usize = 80;

    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("stub feature dimension must be positive"));
        }
        let stft = StftConfig {
            sample_rate: SSL_SAMPLE_RATE,
            win_samples: SSL_WINDOW,
            hop_samples: SSL_STRIDE,
            fft_size: 512,
            window: WindowKind::Hann,
            center_pad: false,
        };
        let mel = dsp::mel_filterbank(&stft, Self::N_MELS, 0.0, 8000.0, MelNorm::None)?.weights;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (Self::N_MELS as f32).sqrt();
        let projection = Array2::from_shape_simple_fn((dim, Self::N_MELS), || {
            let v: f32 = StandardNormal.sample(&mut rng);
            v * scale
        });
        Ok(Self {
            projection,
            stft,
            mel,
            id: format!("stub-{dim}-seed{seed}"),
        })
    }
}

impl SslBackend for StubBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn feature_dim(&self) -> usize {
        self.projection.nrows()
    }

    fn extract(&self, clip16k: &AudioClip) -> Result<LinguisticFeatures> {
        let n_frames = ssl_frame_count(clip16k.len());
        // the FFT frame is wider than the 400-sample window; pad so every frame fits
        let needed = (n_frames - 1) * SSL_STRIDE + self.stft.fft_size;
        let offset = (self.stft.fft_size - SSL_WINDOW) / 2;
        let mut x = vec![0.0f32; needed];
        for (i, &s) in clip16k.samples().iter().enumerate() {
            if i + offset < needed {
                x[i + offset] = s;
            }
        }
        let spec = dsp::magnitude_frames(&x, &self.stft);
        debug_assert_eq!(spec.ncols(), n_frames);
        let stats = self.mel.dot(&spec).mapv(f32::ln_1p);
        Ok(LinguisticFeatures {
            frames: self.projection.dot(&stats),
            backend_id: self.id.clone(),
        })
    }
}

/// Reads features exported by an external model. For a clip whose
/// `source_path` has stem `name`, loads `<dir>/<name>.safetensors` and takes
/// the `features` tensor of shape `[dim, frames]` (f32).
pub struct PrecomputedBackend {
    dir: PathBuf,
    dim: usize,
    id: String,
}

impl PrecomputedBackend {
    pub fn new(dir: impl AsRef<Path>, dim: usize) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        if !dir.is_dir() {
            return Err(Error::config(format!(
                "feature directory {} does not exist",
                dir.display()
            )));
        }
        Ok(Self {
            id: format!("precomputed:{}", dir.display()),
            dir,
            dim,
        })
    }
}

impl SslBackend for PrecomputedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn feature_dim(&self) -> usize {
        self.dim
    }

    fn extract(&self, clip16k: &AudioClip) -> Result<LinguisticFeatures> {
        let stem = clip16k
            .source_path
            .as_deref()
            .and_then(|p| Path::new(p).file_stem())
            .ok_or_else(|| Error::Data("clip has no source path to look features up by".into()))?;
        let path = self.dir.join(stem).with_extension("safetensors");
        let bytes = std::fs::read(&path)?;
        let st = safetensors::SafeTensors::deserialize(&bytes)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let view = st
            .tensor("features")
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if view.dtype() != safetensors::Dtype::F32 || view.shape().len() != 2 {
            return Err(Error::Data(format!(
                "{}: expected a 2-d f32 `features` tensor",
                path.display()
            )));
        }
        let (d, t) = (view.shape()[0], view.shape()[1]);
        let data: Vec<f32> = view
            .data()
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let frames = Array2::from_shape_vec((d, t), data).map_err(|e| Error::Data(e.to_string()))?;
        Ok(LinguisticFeatures {
            frames,
            backend_id: self.id.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn feats(frames: Array2<f32>) -> LinguisticFeatures {
        LinguisticFeatures {
            frames,
            backend_id: "t".into(),
        }
    }

    #[test]
    fn one_second_frame_count() {
        assert_eq!(ssl_frame_count(16000), 49);
        let stub = StubBackend::new(32, 0).unwrap();
        let f = extract_features(&AudioClip::silence(16000, 16000), &stub).unwrap();
        assert_eq!(f.n_frames(), 49);
        assert_eq!(f.dim(), 32);
    }

    #[test]
    fn silence_gives_zero_features() {
        let stub = StubBackend::new(StubBackend::DEFAULT_DIM, 1).unwrap();
        let f = extract_features(&AudioClip::silence(5000, 16000), &stub).unwrap();
        assert!(f.frames.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_across_instances() {
        let clip = AudioClip::new(
            (0..8000).map(|i| ((i as f32) * 0.05).sin() * 0.4).collect(),
            16000,
        )
        .unwrap();
        let a = extract_features(&clip, &StubBackend::new(64, 9).unwrap()).unwrap();
        let b = extract_features(&clip, &StubBackend::new(64, 9).unwrap()).unwrap();
        assert_eq!(a, b);
        assert!(a.frames.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn wrong_rate_rejected() {
        let stub = StubBackend::new(8, 0).unwrap();
        assert!(matches!(
            extract_features(&AudioClip::silence(100, 44100), &stub),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn retime_midpoint() {
        let out = retime_to_hop(&feats(array![[0.0, 1.0]]), 3).unwrap();
        assert_eq!(out, array![[0.0, 0.5, 1.0]]);
    }

    #[test]
    fn retime_endpoints_and_constants() {
        let src = Array2::from_shape_fn((3, 10), |(d, t)| (d * 10 + t * t) as f32);
        let out = retime_to_hop(&feats(src.clone()), 40).unwrap();
        assert_eq!(out.ncols(), 40);
        assert_eq!(out.column(0), src.column(0));
        assert_eq!(out.column(39), src.column(9));

        let flat = Array2::from_elem((2, 5), 3.5f32);
        let out = retime_to_hop(&feats(flat), 17).unwrap();
        assert!(out.iter().all(|&v| v == 3.5));
    }

    #[test]
    fn retime_rejects_zero_target() {
        assert!(retime_to_hop(&feats(array![[1.0]]), 0).is_err());
    }

    #[test]
    fn precomputed_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..6).map(|v| v as f32).collect();
        let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        let view = safetensors::tensor::TensorView::new(safetensors::Dtype::F32, vec![2, 3], &bytes)
            .unwrap();
        safetensors::serialize_to_file(
            [("features", view)],
            None,
            &dir.path().join("clip.safetensors"),
        )
        .unwrap();
        let backend = PrecomputedBackend::new(dir.path(), 2).unwrap();
        let mut clip = AudioClip::silence(16000, 16000);
        clip.source_path = Some("/data/clip.wav".into());
        let f = extract_features(&clip, &backend).unwrap();
        assert_eq!(f.frames, array![[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]]);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn retime_stays_within_bounds(
            vals in proptest::collection::vec(-5.0f32..5.0, 1..20),
            target in 1usize..64,
        ) {
            let n = vals.len();
            let src = Array2::from_shape_vec((1, n), vals.clone()).unwrap();
            let out = retime_to_hop(&feats(src), target).unwrap();
            let lo = vals.iter().copied().fold(f32::MAX, f32::min);
            let hi = vals.iter().copied().fold(f32::MIN, f32::max);
            for &v in out.iter() {
                proptest::prop_assert!(v >= lo - 1e-5 && v <= hi + 1e-5);
            }
        }
    }
}
