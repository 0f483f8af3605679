use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Shape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, fan-in taken from all dims but the first.
    FanIn,
    Normal(f64),
}

/// Named trainable variables, initialized from a seeded generator so that two
/// stores built with the same seed and layer order are bit-identical.
#[derive(Clone)]
pub struct ParamStore {
    vars: Arc<Mutex<BTreeMap<String, Var>>>,
    rng: Arc<Mutex<ChaCha8Rng>>,
    device: Device,
    dtype: DType,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            vars: Arc::default(),
            rng: Arc::new(Mutex::new(ChaCha8Rng::seed_from_u64(seed))),
            device: device.clone(),
            dtype,
        }
    }

    pub fn root(&self) -> Params {
        Params {
            store: self.clone(),
            prefix: String::new(),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Variables in name order.
    pub fn named_vars(&self) -> Vec<(String, Var)> {
        self.vars
            .lock()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn vars_with_prefix(&self, prefix: &str) -> Vec<(String, Var)> {
        self.named_vars()
            .into_iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.named_vars().iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Overwrites every variable from `tensors`; all names must be present with
    /// matching shapes. Nothing is modified on failure.
    pub fn load(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let vars = self.vars.lock().unwrap();
        for (name, var) in vars.iter() {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::State(format!("missing parameter {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::State(format!(
                    "parameter {name}: stored shape {:?}, model shape {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
        }
        for (name, var) in vars.iter() {
            var.set(&tensors[name].to_dtype(self.dtype)?.to_device(&self.device)?)?;
        }
        Ok(())
    }

    fn insert(&self, name: String, value: &Tensor) -> Result<Tensor> {
        let mut vars = self.vars.lock().unwrap();
        if vars.contains_key(&name) {
            return Err(Error::State(format!("parameter {name} declared twice")));
        }
        let var = Var::from_tensor(&value.detach().to_dtype(self.dtype)?.to_device(&self.device)?)?;
        let out = var.as_tensor().clone();
        vars.insert(name, var);
        Ok(out)
    }

    fn create(&self, name: String, shape: Shape, init: Init) -> Result<Tensor> {
        if self.vars.lock().unwrap().contains_key(&name) {
            return Err(Error::State(format!("parameter {name} declared twice")));
        }
        let n = shape.elem_count();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::FanIn => {
                let fan_in: usize = shape.dims().iter().skip(1).product::<usize>().max(1);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut rng = self.rng.lock().unwrap();
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
            }
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).map_err(|e| Error::config(e.to_string()))?;
                let mut rng = self.rng.lock().unwrap();
                (0..n).map(|_| dist.sample(&mut *rng)).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?;
        self.insert(name, &t)
    }
}

/// A prefix into a [`ParamStore`].
#[derive(Clone)]
pub struct Params {
    store: ParamStore,
    prefix: String,
}

impl Params {
    pub fn pp(&self, name: impl std::fmt::Display) -> Params {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Params {
            store: self.store.clone(),
            prefix,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn get(&self, shape: impl Into<Shape>, name: &str, init: Init) -> Result<Tensor> {
        self.store.create(self.full_name(name), shape.into(), init)
    }

    /// Registers a variable with the given initial value.
    pub fn get_init(&self, name: &str, value: &Tensor) -> Result<Tensor> {
        self.store.insert(self.full_name(name), value)
    }

    pub fn device(&self) -> &Device {
        &self.store.device
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }
}
