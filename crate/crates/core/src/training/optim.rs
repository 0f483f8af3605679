use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Multiplicative learning-rate decay applied once per step.
    pub lr_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.8,
            beta2: 0.99,
            eps: 1e-9,
            weight_decay: 0.01,
            lr_decay: 0.999875,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.lr_decay > 0.0
            && self.lr_decay <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid optimizer settings {self:?}")))
        }
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        self.lr * self.lr_decay.powf(step as f64)
    }
}

/// Adam with decoupled weight decay over a fixed set of variables. Moments are
/// exposed for checkpointing.
pub struct AdamW {
    cfg: AdamWConfig,
    vars: Vec<(String, Var)>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamW {
    pub fn new(vars: Vec<(String, Var)>, cfg: AdamWConfig) -> Result<Self> {
        cfg.validate()?;
        let m = vars.iter().map(|(_, v)| v.zeros_like()).collect::<candle_core::Result<Vec<_>>>()?;
        let v = m.clone();
        Ok(Self { cfg, vars, m, v, t: 0 })
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.cfg
    }

    pub fn updates(&self) -> u64 {
        self.t
    }

    /// One update at learning rate `lr`; variables without a gradient are left
    /// untouched.
    pub fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (i, (_, var)) in self.vars.iter().enumerate() {
            let Some(g) = grads.get(var) else { continue };
            let g = g.detach();
            let m = ((&self.m[i] * b1)? + (&g * (1.0 - b1))?)?;
            let v = ((&self.v[i] * b2)? + (g.sqr()? * (1.0 - b2))?)?;
            let denom = ((&v / c2)?.sqrt()? + self.cfg.eps)?;
            let update = ((&m / c1)? / denom)?;
            let decayed = (var.as_tensor() * (1.0 - lr * self.cfg.weight_decay))?;
            var.set(&(decayed - (update * lr)?)?)?;
            self.m[i] = m.detach();
            self.v[i] = v.detach();
        }
        Ok(())
    }

    /// Moments keyed `m.<name>` / `v.<name>`.
    pub fn state_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (i, (name, _)) in self.vars.iter().enumerate() {
            out.insert(format!("m.{name}"), self.m[i].clone());
            out.insert(format!("v.{name}"), self.v[i].clone());
        }
        out
    }

    pub fn load_state(&mut self, tensors: &BTreeMap<String, Tensor>, updates: u64) -> Result<()> {
        let mut m = Vec::with_capacity(self.vars.len());
        let mut v = Vec::with_capacity(self.vars.len());
        for (name, var) in &self.vars {
            for (key, dst) in [(format!("m.{name}"), &mut m), (format!("v.{name}"), &mut v)] {
                let t = tensors
                    .get(&key)
                    .ok_or_else(|| Error::State(format!("optimizer state lacks {key}")))?;
                if t.dims() != var.dims() {
                    return Err(Error::State(format!("optimizer state {key} has shape {:?}", t.dims())));
                }
                dst.push(t.to_dtype(var.dtype())?.to_device(var.device())?);
            }
        }
        self.m = m;
        self.v = v;
        self.t = updates;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn matches_hand_computed_first_step() {
        let var = Var::from_tensor(&Tensor::new(&[1.0f64, -2.0], &Device::Cpu).unwrap()).unwrap();
        let cfg = AdamWConfig::default();
        let mut opt = AdamW::new(vec![("w".into(), var.clone())], cfg).unwrap();
        let loss = (var.as_tensor().sqr().unwrap().sum_all().unwrap() * 0.5).unwrap();
        opt.step(&loss.backward().unwrap(), 0.1).unwrap();
        // first bias-corrected step moves each weight by lr * sign(grad)
        let got = var.as_tensor().to_vec1::<f64>().unwrap();
        let expect = [1.0 * (1.0 - 0.1 * 0.01) - 0.1, -2.0 * (1.0 - 0.1 * 0.01) + 0.1];
        for (g, e) in got.iter().zip(expect) {
            assert!((g - e).abs() < 1e-8, "{g} vs {e}");
        }
    }

    #[test]
    fn converges_on_quadratic() {
        let var = Var::from_tensor(&Tensor::new(&[3.0f64], &Device::Cpu).unwrap()).unwrap();
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(vec![("w".into(), var.clone())], cfg).unwrap();
        for _ in 0..500 {
            let loss = (var.as_tensor() - 1.0).unwrap().sqr().unwrap().sum_all().unwrap();
            opt.step(&loss.backward().unwrap(), 0.05).unwrap();
        }
        let w = var.as_tensor().to_vec1::<f64>().unwrap()[0];
        assert!((w - 1.0).abs() < 1e-2, "{w}");
    }

    #[test]
    fn state_round_trip() {
        let var = Var::zeros(3, DType::F32, &Device::Cpu).unwrap();
        let mut opt = AdamW::new(vec![("w".into(), var.clone())], AdamWConfig::default()).unwrap();
        let loss = ((var.as_tensor() + 1.0).unwrap().sqr().unwrap()).sum_all().unwrap();
        opt.step(&loss.backward().unwrap(), 1e-3).unwrap();
        let state = opt.state_tensors();
        let mut other = AdamW::new(vec![("w".into(), var)], AdamWConfig::default()).unwrap();
        other.load_state(&state, opt.updates()).unwrap();
        assert_eq!(other.updates(), 1);
        assert_eq!(
            other.state_tensors()["m.w"].to_vec1::<f32>().unwrap(),
            state["m.w"].to_vec1::<f32>().unwrap()
        );
        assert!(other.load_state(&BTreeMap::new(), 0).is_err());
    }

    #[test]
    fn lr_decays_per_step() {
        let c = AdamWConfig::default();
        assert_eq!(c.lr_at(0), 2e-4);
        assert!((c.lr_at(2) - 2e-4 * 0.999875f64.powi(2)).abs() < 1e-18);
    }
}
