//! Named parameters with gradient accumulators and adaptive-moment
//! optimizer state.

use std::collections::BTreeMap;

use rand::Rng;

use super::tensor::Tensor;
use crate::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Parameters, gradients, and optimizer moments keyed by name. Iteration is
/// in name order, so updates are deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    grads: BTreeMap<String, Tensor>,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn from_params(params: Vec<(String, Tensor)>) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for (name, tensor) in params {
            store.insert(&name, tensor)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Structural(format!("duplicate parameter {name:?}")));
        }
        self.params.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    /// Panics if the parameter is missing; model code owns its names.
    pub fn tensor(&self, name: &str) -> &Tensor {
        self.params.get(name).unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    pub fn set(&mut self, name: &str, tensor: Tensor) {
        let slot = self.params.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name:?}"));
        assert_eq!(slot.shape(), tensor.shape(), "parameter shape changed");
        *slot = tensor;
    }

    pub fn param_elem(&self, name: &str, i: usize) -> f64 {
        self.tensor(name).data()[i]
    }

    pub fn set_param_elem(&mut self, name: &str, i: usize, v: f64) {
        let slot = self.params.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name:?}"));
        slot.data_mut()[i] = v;
    }

    pub fn names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    /// Adds `delta` into the gradient accumulator for `name`.
    pub fn accumulate_grad(&mut self, name: &str, delta: &Tensor) {
        let shape = self.tensor(name).shape();
        assert_eq!(shape, delta.shape(), "gradient shape mismatch for {name:?}");
        let g = self
            .grads
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(shape.0, shape.1));
        for (gv, dv) in g.data_mut().iter_mut().zip(delta.data()) {
            *gv += dv;
        }
    }

    pub fn zero_grads(&mut self) {
        self.grads.clear();
    }

    /// Clears optimizer moments and the step counter; the next update starts
    /// a fresh adaptive-moment schedule.
    pub fn reset_moments(&mut self) {
        self.m.clear();
        self.v.clear();
        self.step = 0;
    }

    /// One adaptive-moment update (beta1 0.9, beta2 0.999, eps 1e-8) with
    /// bias correction; missing gradients count as zero and gradients are
    /// cleared afterwards. With zero gradients and zero moments this is the
    /// identity on parameters.
    pub fn adam_step(&mut self, lr: f64) {
        assert!(lr > 0.0 && lr.is_finite(), "learning rate must be positive");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        let names: Vec<String> = self.params.keys().cloned().collect();
        for name in names {
            let shape = self.params[&name].shape();
            let zero = Tensor::zeros(shape.0, shape.1);
            let grad = self.grads.get(&name).unwrap_or(&zero).clone();
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(shape.0, shape.1));
            for (mv, gv) in m.data_mut().iter_mut().zip(grad.data()) {
                *mv = BETA1 * *mv + (1.0 - BETA1) * gv;
            }
            let m = m.clone();
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(shape.0, shape.1));
            for (vv, gv) in v.data_mut().iter_mut().zip(grad.data()) {
                *vv = BETA2 * *vv + (1.0 - BETA2) * gv * gv;
            }
            let v = v.clone();
            let p = self.params.get_mut(&name).expect("known name");
            for (i, pv) in p.data_mut().iter_mut().enumerate() {
                let mhat = m.data()[i] / bc1;
                let vhat = v.data()[i] / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + EPS);
            }
        }
        self.grads.clear();
    }
}

/// Scaled-uniform init: entries drawn uniformly from
/// `[-sqrt(6/(rows+cols)), sqrt(6/(rows+cols))]`.
pub fn glorot<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * limit).collect();
    Tensor::from_vec(rows, cols, data).expect("finite by construction")
}

/// Training hyper-parameters shared by every learner in the crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Upper bound on epochs; zero epochs leaves a model untouched.
    pub max_epochs: usize,
    pub seed: u64,
    /// Dev checks without improvement before early stop.
    pub patience: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Param(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Param("batch size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Param("patience must be at least 1".into()));
        }
        Ok(())
    }
}
