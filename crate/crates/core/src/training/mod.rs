//! Alternating discriminator / generator optimization over random fixed-length
//! segments, with versioned checkpoints.

mod checkpoint;
mod optim;
mod run;

use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, load_model, save_checkpoint, CheckpointMeta, CHECKPOINT_FORMAT};
pub use optim::{AdamW, AdamWConfig};
pub use run::{checkpoint_path, latest_checkpoint, run_training, RunOutputs};

use crate::error::{Error, Result};
use crate::features::ClipFeatures;
use crate::losses::{
    adversarial_losses, feature_matching_loss, generator_adversarial_loss, kl_anneal_weight, kl_loss,
    total_generator_loss, Fdrl, FdrlConfig, LossParts, LossWeights,
};
use crate::model::{GaussianFrames, Latent, ModelConfig, StyleVector, VcModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_steps: u64,
    pub segment_frames: usize,
    pub optimizer: AdamWConfig,
    pub t_anneal: u64,
    pub checkpoint_every: u64,
    /// Write a metrics record every this many steps.
    pub log_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            max_steps: 400_000,
            segment_frames: 100,
            optimizer: AdamWConfig::default(),
            t_anneal: 50_000,
            checkpoint_every: 5_000,
            log_every: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.segment_frames == 0 || self.t_anneal == 0 {
            return Err(Error::config("batch_size, segment_frames and t_anneal must be positive"));
        }
        if self.checkpoint_every == 0 || self.log_every == 0 {
            return Err(Error::config("checkpoint_every and log_every must be positive"));
        }
        self.optimizer.validate()
    }
}

/// Aligned crop of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: String,
    pub start: usize,
    pub linear: Array2<f32>,
    pub energy: Vec<f32>,
    pub ling: Array2<f32>,
    pub waveform: Vec<f32>,
}

/// Crops `frames` frames at a uniformly random start; the waveform crop covers
/// exactly the same frames.
pub fn sample_segment(clip: &ClipFeatures, frames: usize, hop: usize, rng: &mut impl Rng) -> Result<Segment> {
    let t = clip.n_frames();
    if t < frames {
        return Err(Error::ClipTooShort {
            id: clip.id.clone(),
            frames: t,
            required: frames,
        });
    }
    let start = rng.gen_range(0..=t - frames);
    let end = start + frames;
    Ok(Segment {
        id: clip.id.clone(),
        start,
        linear: clip.linear.slice(s![.., start..end]).to_owned(),
        energy: clip.energy[start..end].to_vec(),
        ling: clip.ling.slice(s![.., start..end]).to_owned(),
        waveform: clip.waveform[start * hop..end * hop].to_vec(),
    })
}

/// Training clips long enough for one segment.
pub struct Dataset {
    clips: Vec<ClipFeatures>,
}

impl Dataset {
    /// Drops clips shorter than `segment_frames` with a warning.
    pub fn new(clips: Vec<ClipFeatures>, segment_frames: usize, hop: usize) -> Result<Self> {
        let mut kept = Vec::with_capacity(clips.len());
        for c in clips {
            c.check(hop)?;
            if c.n_frames() < segment_frames {
                log::warn!(
                    "skipping {}: {} frames < {} required",
                    c.id,
                    c.n_frames(),
                    segment_frames
                );
                continue;
            }
            kept.push(c);
        }
        if kept.is_empty() {
            return Err(Error::Data("no clip is long enough for one training segment".into()));
        }
        Ok(Self { clips: kept })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn clips(&self) -> &[ClipFeatures] {
        &self.clips
    }
}

fn array_tensor(a: &Array2<f32>, device: &Device, dtype: DType) -> Result<Tensor> {
    let (r, c) = a.dim();
    let v: Vec<f32> = a.iter().copied().collect();
    Ok(Tensor::from_vec(v, (r, c), device)?.to_dtype(dtype)?)
}

/// Stacked segments plus each clip's full reference mel.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<String>,
    /// `(B, bins, S)`
    pub linear: Tensor,
    /// `(B, S)`
    pub energy: Tensor,
    /// `(B, D_ssl, S)`
    pub ling: Tensor,
    /// `(B, S * hop)`
    pub waveform: Tensor,
    /// `(1, n_mels, T_i)` per item.
    pub ref_mels: Vec<Tensor>,
}

impl Batch {
    pub fn new(segments: &[Segment], ref_mels: &[&Array2<f32>], dtype: DType, device: &Device) -> Result<Self> {
        if segments.is_empty() || segments.len() != ref_mels.len() {
            return Err(Error::Data("batch needs one reference mel per segment".into()));
        }
        let stack = |ts: Vec<Tensor>| -> Result<Tensor> { Ok(Tensor::stack(&ts, 0)?) };
        let linear = stack(segments.iter().map(|s| array_tensor(&s.linear, device, dtype)).collect::<Result<_>>()?)?;
        let ling = stack(segments.iter().map(|s| array_tensor(&s.ling, device, dtype)).collect::<Result<_>>()?)?;
        let energy = stack(
            segments
                .iter()
                .map(|s| Ok(Tensor::from_slice(&s.energy, s.energy.len(), device)?.to_dtype(dtype)?))
                .collect::<Result<_>>()?,
        )?;
        let waveform = stack(
            segments
                .iter()
                .map(|s| Ok(Tensor::from_slice(&s.waveform, s.waveform.len(), device)?.to_dtype(dtype)?))
                .collect::<Result<_>>()?,
        )?;
        let ref_mels = ref_mels
            .iter()
            .map(|m| Ok(array_tensor(m, device, dtype)?.unsqueeze(0)?))
            .collect::<Result<_>>()?;
        Ok(Self {
            ids: segments.iter().map(|s| s.id.clone()).collect(),
            linear,
            energy,
            ling,
            waveform,
            ref_mels,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Unweighted loss parts of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub lambda_kl: f64,
    pub kl: f64,
    pub rec: f64,
    pub fm: f64,
    pub adv: f64,
    pub disc: f64,
    pub total: f64,
    pub lr: f64,
    pub wall_time_s: f64,
}

impl LossReport {
    /// Equality of everything except timing.
    pub fn same_losses(&self, other: &LossReport) -> bool {
        LossReport {
            wall_time_s: 0.0,
            ..self.clone()
        } == LossReport {
            wall_time_s: 0.0,
            ..other.clone()
        }
    }
}

/// Exponential moving averages of the loss parts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub rec: f64,
    pub kl: f64,
    pub disc: f64,
    pub count: u64,
}

impl RunningStats {
    fn update(&mut self, r: &LossReport) {
        let a = if self.count == 0 { 1.0 } else { 0.02 };
        self.rec += a * (r.rec - self.rec);
        self.kl += a * (r.kl - self.kl);
        self.disc += a * (r.disc - self.disc);
        self.count += 1;
    }
}

fn value(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Everything needed to continue training: models, optimizers, rng, step.
pub struct TrainState {
    pub model: VcModel,
    pub train: TrainConfig,
    pub weights: LossWeights,
    pub fdrl_config: FdrlConfig,
    pub config_hash: String,
    pub stats: RunningStats,
    /// Stored verbatim in checkpoints.
    pub run_config: Option<serde_json::Value>,
    fdrl: Fdrl,
    opt_g: AdamW,
    opt_d: AdamW,
    rng: ChaCha8Rng,
    step: u64,
    started: Instant,
}

impl TrainState {
    pub fn new(
        model_cfg: &ModelConfig,
        train: &TrainConfig,
        fdrl_config: &FdrlConfig,
        weights: &LossWeights,
        config_hash: &str,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        train.validate()?;
        weights.validate()?;
        let model = VcModel::new(model_cfg, dtype, device)?;
        Self::from_model(model, train, fdrl_config, weights, config_hash)
    }

    fn from_model(
        model: VcModel,
        train: &TrainConfig,
        fdrl_config: &FdrlConfig,
        weights: &LossWeights,
        config_hash: &str,
    ) -> Result<Self> {
        let fdrl = Fdrl::new(fdrl_config, model.dtype(), model.device())?;
        let opt_g = AdamW::new(model.gen_params.named_vars(), train.optimizer)?;
        let opt_d = AdamW::new(model.disc_params.named_vars(), train.optimizer)?;
        Ok(Self {
            fdrl,
            opt_g,
            opt_d,
            rng: ChaCha8Rng::seed_from_u64(train.seed),
            step: 0,
            started: Instant::now(),
            model,
            train: train.clone(),
            weights: *weights,
            fdrl_config: fdrl_config.clone(),
            config_hash: config_hash.to_string(),
            stats: RunningStats::default(),
            run_config: None,
        })
    }

    /// Number of completed (D, G) update pairs.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn lambda_kl(&self) -> f64 {
        kl_anneal_weight(self.step, self.train.t_anneal)
    }

    pub fn lr(&self) -> f64 {
        self.train.optimizer.lr_at(self.step)
    }

    /// Draws a batch of random segments from the trainer's generator.
    pub fn next_batch(&mut self, data: &Dataset) -> Result<Batch> {
        let hop = self.model.config.hop();
        let mut segs = Vec::with_capacity(self.train.batch_size);
        let mut mels = Vec::with_capacity(self.train.batch_size);
        for _ in 0..self.train.batch_size {
            let clip = &data.clips[self.rng.gen_range(0..data.clips.len())];
            segs.push(sample_segment(clip, self.train.segment_frames, hop, &mut self.rng)?);
            mels.push(&clip.mel);
        }
        Batch::new(&segs, &mels, self.model.dtype(), self.model.device())
    }

    fn noise(&mut self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let v: Vec<f32> = (0..n).map(|_| StandardNormal.sample(&mut self.rng)).collect();
        Ok(Tensor::from_vec(v, shape, self.model.device())?.to_dtype(self.model.dtype())?)
    }

    fn abort(&self, ids: &[String], detail: String) -> Error {
        Error::NonFiniteLoss {
            step: self.step,
            batch_ids: ids.to_vec(),
            detail,
        }
    }

    fn forward(&mut self, batch: &Batch) -> Result<Forward> {
        let g = &self.model.generator;
        let styles = batch
            .ref_mels
            .iter()
            .map(|m| Ok(g.reference_encode(m)?.0))
            .collect::<Result<Vec<_>>>()?;
        let style = StyleVector(Tensor::cat(&styles, 0)?);
        let post = g.posterior_encode(&batch.linear)?;
        let noise = self.noise(&post.dims().to_vec())?;
        let g = &self.model.generator;
        let z = post.sample(&noise, 1.0)?;
        let prior = g.prior(&batch.ling, &batch.energy, &style)?;
        let (z_prime, log_det) = g.flow_forward(&z, &style)?;
        let y_hat = g.decode(&z)?;
        Ok(Forward {
            style,
            post,
            z,
            prior,
            z_prime,
            log_det,
            y_hat,
        })
    }

    fn disc_style(&self, fwd: &Forward) -> Option<StyleVector> {
        self.model
            .discriminator
            .is_conditional()
            .then(|| StyleVector(fwd.style.0.detach()))
    }

    /// Updates only the discriminator, with the generator output detached.
    fn discriminator_phase(&mut self, batch: &Batch, fwd: &Forward, lr: f64) -> Result<f64> {
        let d = &self.model.discriminator;
        let style = self.disc_style(fwd);
        let real = d.forward(&batch.waveform, style.as_ref())?;
        let fake = d.forward(&fwd.y_hat.detach(), style.as_ref())?;
        let (_, loss_d) = adversarial_losses(&real.logits, &fake.logits)?;
        let disc = value(&loss_d)?;
        if !disc.is_finite() {
            return Err(self.abort(&batch.ids, format!("discriminator loss is {disc}")));
        }
        let grads = loss_d.backward()?;
        self.opt_d.step(&grads, lr)?;
        Ok(disc)
    }

    /// Updates only the generator against the freshly updated discriminator.
    fn generator_phase(&mut self, batch: &Batch, fwd: &Forward, lambda_kl: f64, lr: f64) -> Result<[f64; 5]> {
        let d = &self.model.discriminator;
        let style = self.disc_style(fwd);
        let real = d.forward(&batch.waveform, style.as_ref())?;
        let fake = d.forward(&fwd.y_hat, style.as_ref())?;
        let parts = LossParts {
            kl: kl_loss(&fwd.post, &fwd.z, &fwd.prior, &fwd.z_prime, &fwd.log_det)?,
            rec: self.fdrl.forward(&batch.waveform, &fwd.y_hat)?,
            fm: feature_matching_loss(&real.features, &fake.features)?,
            adv: generator_adversarial_loss(&fake.logits)?,
        };
        let total = total_generator_loss(&parts, &self.weights.with_kl(lambda_kl)).map_err(|e| match e {
            Error::Numeric(msg) => self.abort(&batch.ids, msg),
            other => other,
        })?;
        let grads = total.backward()?;
        self.opt_g.step(&grads, lr)?;
        Ok([
            value(&parts.kl)?,
            value(&parts.rec)?,
            value(&parts.fm)?,
            value(&parts.adv)?,
            value(&total)?,
        ])
    }

    /// One discriminator update followed by one generator update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<LossReport> {
        let lambda_kl = self.lambda_kl();
        let lr = self.lr();
        let fwd = self.forward(batch)?;
        let disc = self.discriminator_phase(batch, &fwd, lr)?;
        let [kl, rec, fm, adv, total] = self.generator_phase(batch, &fwd, lambda_kl, lr)?;
        let report = LossReport {
            step: self.step,
            lambda_kl,
            kl,
            rec,
            fm,
            adv,
            disc,
            total,
            lr,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        self.stats.update(&report);
        self.step += 1;
        Ok(report)
    }
}

struct Forward {
    style: StyleVector,
    post: GaussianFrames,
    z: Latent,
    prior: GaussianFrames,
    z_prime: Latent,
    log_det: Tensor,
    y_hat: Tensor,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(frames: usize) -> ClipFeatures {
        ClipFeatures {
            id: "c".into(),
            linear: Array2::from_shape_fn((4, frames), |(b, t)| (b * 1000 + t) as f32),
            mel: Array2::zeros((2, frames)),
            energy: (0..frames).map(|t| t as f32).collect(),
            ling: Array2::from_shape_fn((3, frames), |(_, t)| t as f32),
            waveform: (0..frames * 220).map(|i| i as f32).collect(),
        }
    }

    #[test]
    fn segment_alignment() {
        let c = clip(1203);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_segment(&c, 100, 220, &mut rng).unwrap();
        assert_eq!(s.linear.dim(), (4, 100));
        assert_eq!(s.waveform.len(), 22_000);
        assert_eq!(s.energy[0] as usize, s.start);
        assert_eq!(s.ling[[0, 0]] as usize, s.start);
        assert_eq!(s.waveform[0] as usize, s.start * 220);
        assert_eq!(s.linear[[1, 99]] as usize, 1000 + s.start + 99);
    }

    #[test]
    fn exact_length_forces_start_zero() {
        let c = clip(100);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            assert_eq!(sample_segment(&c, 100, 220, &mut rng).unwrap().start, 0);
        }
        assert!(matches!(
            sample_segment(&clip(99), 100, 220, &mut rng),
            Err(Error::ClipTooShort { frames: 99, .. })
        ));
    }

    #[test]
    fn same_seed_same_crops() {
        let c = clip(500);
        let starts = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| sample_segment(&c, 100, 220, &mut rng).unwrap().start)
                .collect::<Vec<_>>()
        };
        assert_eq!(starts(9), starts(9));
    }

    #[test]
    fn dataset_skips_short_clips() {
        let d = Dataset::new(vec![clip(50), clip(150)], 100, 220).unwrap();
        assert_eq!(d.len(), 1);
        assert!(matches!(Dataset::new(vec![clip(50)], 100, 220), Err(Error::Data(_))));
    }

    mod steps {
        use super::*;
        use crate::model::ParamStore;
        use rand_distr::Uniform;

        pub(crate) fn random_clip(id: &str, frames: usize, cfg: &ModelConfig, seed: u64) -> ClipFeatures {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = Uniform::new(-0.5f32, 0.5);
            let mut grid = |r: usize| Array2::from_shape_simple_fn((r, frames), || u.sample(&mut rng).abs());
            let linear = grid(cfg.n_linear_bins);
            let mel = grid(cfg.n_mels_ref);
            let ling = grid(cfg.d_ssl);
            ClipFeatures {
                id: id.into(),
                linear,
                mel,
                energy: (0..frames).map(|t| (t as f32 * 0.3).sin()).collect(),
                ling,
                waveform: (0..frames * cfg.hop()).map(|i| 0.3 * (i as f32 * 0.03).sin()).collect(),
            }
        }

        fn state() -> (TrainState, Dataset) {
            let cfg = ModelConfig::tiny();
            let train = TrainConfig {
                batch_size: 1,
                segment_frames: 8,
                ..TrainConfig::default()
            };
            let fdrl = FdrlConfig::default();
            let s = TrainState::new(&cfg, &train, &fdrl, &LossWeights::default(), "h", DType::F32, &Device::Cpu).unwrap();
            let data = Dataset::new(vec![random_clip("a", 12, &cfg, 1)], 8, cfg.hop()).unwrap();
            (s, data)
        }

        fn snapshot(store: &ParamStore) -> Vec<(String, Vec<f32>)> {
            store
                .named_vars()
                .into_iter()
                .map(|(k, v)| (k, v.as_tensor().flatten_all().unwrap().to_vec1().unwrap()))
                .collect()
        }

        #[test]
        fn phases_touch_only_their_network() {
            let (mut s, data) = state();
            let batch = s.next_batch(&data).unwrap();
            let fwd = s.forward(&batch).unwrap();
            let (g0, d0) = (snapshot(&s.model.gen_params), snapshot(&s.model.disc_params));
            s.discriminator_phase(&batch, &fwd, 2e-4).unwrap();
            let (g1, d1) = (snapshot(&s.model.gen_params), snapshot(&s.model.disc_params));
            assert_eq!(g0, g1);
            assert_ne!(d0, d1);
            s.generator_phase(&batch, &fwd, 0.0, 2e-4).unwrap();
            let (g2, d2) = (snapshot(&s.model.gen_params), snapshot(&s.model.disc_params));
            assert_eq!(d1, d2);
            assert_ne!(g1, g2);
        }

        #[test]
        fn steps_are_deterministic_and_start_without_kl() {
            let run = || {
                let (mut s, data) = state();
                (0..2)
                    .map(|_| {
                        let b = s.next_batch(&data).unwrap();
                        s.train_step(&b).unwrap()
                    })
                    .collect::<Vec<_>>()
            };
            let (a, b) = (run(), run());
            assert_eq!(a[0].lambda_kl, 0.0);
            assert_eq!(a[0].step, 0);
            assert_eq!(a[1].step, 1);
            for (x, y) in a.iter().zip(&b) {
                assert!(x.same_losses(y), "{x:?} vs {y:?}");
                assert!(x.total.is_finite());
            }
        }
    }
}
