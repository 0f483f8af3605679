#![allow(dead_code)]

use candle_core::{DType, Device};
use nhvc_core::dsp::AudioClip;
use nhvc_core::features::{ClipFeatures, FeatureConfig, FeatureExtractor};
use nhvc_core::linguistic::StubBackend;
use nhvc_core::losses::{FdrlConfig, LossWeights};
use nhvc_core::model::ModelConfig;
use nhvc_core::training::{Dataset, TrainConfig, TrainState};
use nhvc_core::dsp::StftConfig;

/// Voiced, speech-like test signal: a harmonic source with a gliding f0,
/// two formant-like resonances and a syllabic envelope.
pub fn speechlike(seconds: f64, f0: f64, seed: u64) -> AudioClip {
    let sr = 44_100.0;
    let n = (seconds * sr) as usize;
    let mut phase = 0.0f64;
    let jitter = (seed % 7) as f64 * 0.13;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let f = f0 * (1.0 + 0.15 * (2.0 * std::f64::consts::PI * 0.7 * t + jitter).sin());
            phase += 2.0 * std::f64::consts::PI * f / sr;
            let formants = [(700.0 + 200.0 * (1.3 * t).sin(), 1.0), (1200.0 + 300.0 * (0.9 * t).cos(), 0.5)];
            let mut v = 0.0;
            for h in 1..=20 {
                let hf = h as f64 * f;
                if hf > 8000.0 {
                    break;
                }
                let gain: f64 = formants
                    .iter()
                    .map(|&(fc, g)| g / (1.0 + ((hf - fc) / 150.0).powi(2)))
                    .sum::<f64>()
                    + 0.05;
                v += gain * (h as f64 * phase).sin();
            }
            let env = (0.5 - 0.5 * (2.0 * std::f64::consts::PI * 3.0 * t).cos()).powf(1.5);
            (0.25 * env * v) as f32
        })
        .collect::<Vec<_>>();
    let peak = samples.iter().fold(0.0f32, |m, v| m.max(v.abs())).max(1e-6);
    AudioClip::new(samples.iter().map(|v| 0.8 * v / peak).collect(), 44_100).unwrap()
}

pub fn tiny_backend(cfg: &ModelConfig) -> StubBackend {
    StubBackend::new(cfg.d_ssl, 0).unwrap()
}

pub fn tiny_features(clip: &AudioClip, id: &str, backend: &StubBackend) -> ClipFeatures {
    let ex = FeatureExtractor::new(&StftConfig::default(), &FeatureConfig { n_mels: ModelConfig::tiny().n_mels_ref, ..FeatureConfig::default() }, backend).unwrap();
    ex.extract(id, clip, None).unwrap()
}

pub fn tiny_state(train: TrainConfig) -> TrainState {
    TrainState::new(
        &ModelConfig::tiny(),
        &train,
        &FdrlConfig::default(),
        &LossWeights::default(),
        "test-hash",
        DType::F32,
        &Device::Cpu,
    )
    .unwrap()
}

pub fn short_train() -> TrainConfig {
    TrainConfig {
        batch_size: 1,
        segment_frames: 8,
        t_anneal: 4,
        ..TrainConfig::default()
    }
}

pub fn tiny_dataset() -> Dataset {
    let cfg = ModelConfig::tiny();
    let backend = tiny_backend(&cfg);
    let f = tiny_features(&speechlike(0.1, 140.0, 0), "clip", &backend);
    Dataset::new(vec![f], 8, cfg.hop()).unwrap()
}
