use std::io::Write;
use std::path::{Path, PathBuf};

use super::checkpoint::save_checkpoint;
use super::{Dataset, LossReport, TrainState};
use crate::error::Result;

/// Where a training run writes its side outputs.
#[derive(Default)]
pub struct RunOutputs<'a> {
    /// Receives one JSON record per logged step.
    pub metrics: Option<&'a mut dyn Write>,
    pub checkpoint_dir: Option<&'a Path>,
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step-{step:08}.ckpt"))
}

/// Newest checkpoint in `dir` by step number.
pub fn latest_checkpoint(dir: &Path) -> Option<PathBuf> {
    std::fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| {
            let step: u64 = p.file_name()?.to_str()?.strip_prefix("step-")?.strip_suffix(".ckpt")?.parse().ok()?;
            Some((step, p))
        })
        .max_by_key(|(s, _)| *s)
        .map(|(_, p)| p)
}

/// Trains until `state.step() == max_steps`. Steps whose index is a multiple
/// of `log_every` are logged; a checkpoint is written every
/// `checkpoint_every` completed steps and at the end.
pub fn run_training(
    state: &mut TrainState,
    data: &Dataset,
    max_steps: u64,
    mut out: RunOutputs<'_>,
) -> Result<(Vec<LossReport>, Vec<PathBuf>)> {
    let mut logged = Vec::new();
    let mut written = Vec::new();
    let every = state.train.checkpoint_every;
    while state.step() < max_steps {
        let batch = state.next_batch(data)?;
        let report = state.train_step(&batch)?;
        if report.step % state.train.log_every == 0 {
            log::info!(
                "step {} rec {:.4} kl {:.4} (lambda {:.4}) fm {:.4} adv {:.4} disc {:.4}",
                report.step,
                report.rec,
                report.kl,
                report.lambda_kl,
                report.fm,
                report.adv,
                report.disc
            );
            if let Some(w) = out.metrics.as_deref_mut() {
                writeln!(w, "{}", serde_json::to_string(&report)?)?;
                w.flush()?;
            }
            logged.push(report);
        }
        let done = state.step();
        if let Some(dir) = out.checkpoint_dir {
            if done % every == 0 || done == max_steps {
                let path = checkpoint_path(dir, done);
                save_checkpoint(state, &path)?;
                written.push(path);
            }
        }
    }
    Ok((logged, written))
}
