use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{RunningStats, TrainConfig, TrainState};
use crate::container;
use crate::error::{Error, Result};
use crate::losses::{FdrlConfig, LossWeights};
use crate::model::{ModelConfig, VcModel};

pub const CHECKPOINT_FORMAT: &str = "nhvc-checkpoint/1";

/// Self-describing header of a checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub config_hash: String,
    pub step: u64,
    pub dtype: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub fdrl: FdrlConfig,
    pub weights: LossWeights,
    /// Full run configuration of the producing tool, when it recorded one.
    #[serde(default)]
    pub run_config: Option<serde_json::Value>,
}

fn put<T: Serialize>(m: &mut HashMap<String, String>, key: &str, v: &T) -> Result<()> {
    m.insert(key.to_string(), serde_json::to_string(v)?);
    Ok(())
}

fn get<T: DeserializeOwned>(m: &HashMap<String, String>, key: &str) -> Result<T> {
    let raw = m
        .get(key)
        .ok_or_else(|| Error::State(format!("checkpoint header lacks {key}")))?;
    Ok(serde_json::from_str(raw)?)
}

fn parse_dtype(s: &str) -> Result<DType> {
    match s {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => Err(Error::State(format!("unsupported checkpoint dtype {other}"))),
    }
}

fn with_prefix(prefix: &str, m: BTreeMap<String, Tensor>) -> impl Iterator<Item = (String, Tensor)> + '_ {
    m.into_iter().map(move |(k, v)| (format!("{prefix}{k}"), v))
}

fn strip(prefix: &str, m: &BTreeMap<String, Tensor>) -> BTreeMap<String, Tensor> {
    m.iter()
        .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
        .collect()
}

fn params(store: &crate::model::ParamStore) -> BTreeMap<String, Tensor> {
    store
        .named_vars()
        .into_iter()
        .map(|(k, v)| (k, v.as_tensor().clone()))
        .collect()
}

/// Writes parameters, optimizer moments, rng and step atomically.
pub fn save_checkpoint(state: &TrainState, path: impl AsRef<Path>) -> Result<()> {
    let mut tensors = BTreeMap::new();
    tensors.extend(with_prefix("gen.", params(&state.model.gen_params)));
    tensors.extend(with_prefix("disc.", params(&state.model.disc_params)));
    tensors.extend(with_prefix("opt_g.", state.opt_g.state_tensors()));
    tensors.extend(with_prefix("opt_d.", state.opt_d.state_tensors()));

    let meta = CheckpointMeta {
        format: CHECKPOINT_FORMAT.to_string(),
        config_hash: state.config_hash.clone(),
        step: state.step,
        dtype: state.model.dtype().as_str().to_string(),
        model: state.model.config.clone(),
        train: state.train.clone(),
        fdrl: state.fdrl_config.clone(),
        weights: state.weights,
        run_config: state.run_config.clone(),
    };
    let mut header = HashMap::new();
    put(&mut header, "meta", &meta)?;
    put(&mut header, "rng", &state.rng)?;
    put(&mut header, "stats", &state.stats)?;
    put(&mut header, "opt_updates", &(state.opt_g.updates(), state.opt_d.updates()))?;
    container::write_atomic(path.as_ref(), &tensors, header)
}

fn read_checked(path: &Path, device: &Device) -> Result<(BTreeMap<String, Tensor>, HashMap<String, String>, CheckpointMeta)> {
    let (tensors, header) = container::read(path, device)?;
    let meta: CheckpointMeta = get(&header, "meta")?;
    if meta.format != CHECKPOINT_FORMAT {
        return Err(Error::State(format!(
            "checkpoint {} has format {:?}, expected {CHECKPOINT_FORMAT:?}",
            path.display(),
            meta.format
        )));
    }
    Ok((tensors, header, meta))
}

fn build_model(meta: &CheckpointMeta, tensors: &BTreeMap<String, Tensor>, device: &Device) -> Result<VcModel> {
    let model = VcModel::new(&meta.model, parse_dtype(&meta.dtype)?, device)?;
    model.gen_params.load(&strip("gen.", tensors))?;
    model.disc_params.load(&strip("disc.", tensors))?;
    Ok(model)
}

/// Restores a full training state. A differing `expected_hash` only warns.
pub fn load_checkpoint(path: impl AsRef<Path>, device: &Device, expected_hash: Option<&str>) -> Result<TrainState> {
    let path = path.as_ref();
    let (tensors, header, meta) = read_checked(path, device)?;
    if let Some(h) = expected_hash.filter(|h| *h != meta.config_hash) {
        log::warn!(
            "checkpoint {} was written under config {}, current config is {h}",
            path.display(),
            meta.config_hash
        );
    }
    let model = build_model(&meta, &tensors, device)?;
    let mut state = TrainState::from_model(model, &meta.train, &meta.fdrl, &meta.weights, &meta.config_hash)?;
    let (g_updates, d_updates): (u64, u64) = get(&header, "opt_updates")?;
    state.opt_g.load_state(&strip("opt_g.", &tensors), g_updates)?;
    state.opt_d.load_state(&strip("opt_d.", &tensors), d_updates)?;
    state.rng = get::<ChaCha8Rng>(&header, "rng")?;
    state.stats = get::<RunningStats>(&header, "stats")?;
    state.step = meta.step;
    state.run_config = meta.run_config.clone();
    Ok(state)
}

/// Model weights only, for inference.
pub fn load_model(path: impl AsRef<Path>, device: &Device) -> Result<(VcModel, CheckpointMeta)> {
    let (tensors, _, meta) = read_checked(path.as_ref(), device)?;
    let model = build_model(&meta, &tensors, device)?;
    Ok((model, meta))
}
