//! Finite-difference verification of tape gradients.
//!
//! `grad_check` rebuilds the graph through a caller-supplied closure for
//! every perturbed parameter element, comparing central differences against
//! the analytic gradients the tape produced.

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tape::{NodeId, Tape};
use crate::Result;

const STEP: f64 = 1e-4;

/// Outcome of a gradient check: worst relative error per parameter.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    per_param: BTreeMap<String, f64>,
    tolerance: f64,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.per_param.values().all(|&e| e <= self.tolerance)
    }

    pub fn max_err(&self) -> f64 {
        self.per_param.values().cloned().fold(0.0, f64::max)
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn per_param(&self) -> &BTreeMap<String, f64> {
        &self.per_param
    }
}

/// Checks the tape's own gradients for the scalar loss built by `build`.
///
/// The closure must be a pure function of the store's parameter values; it
/// is invoked twice per parameter element plus once for the analytic pass.
pub fn grad_check<F>(store: &mut ParamStore, tolerance: f64, mut build: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<NodeId>,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = build(&mut tape, store)?;
    tape.backward(loss, 1.0, store);
    let analytic: BTreeMap<String, Vec<f64>> = store
        .names()
        .into_iter()
        .map(|name| {
            let g = store
                .grad(&name)
                .map(|g| g.data().to_vec())
                .unwrap_or_else(|| vec![0.0; store.tensor(&name).len()]);
            (name, g)
        })
        .collect();
    store.zero_grads();
    grad_check_against(store, &analytic, tolerance, build)
}

/// Compares externally supplied `analytic` gradients against central finite
/// differences of the loss built by `build`.
pub fn grad_check_against<F>(
    store: &mut ParamStore,
    analytic: &BTreeMap<String, Vec<f64>>,
    tolerance: f64,
    mut build: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<NodeId>,
{
    let mut per_param = BTreeMap::new();
    for (name, grad) in analytic {
        let mut worst = 0.0f64;
        for (i, &a) in grad.iter().enumerate() {
            let orig = store.param_elem(name, i);
            store.set_param_elem(name, i, orig + STEP);
            let mut tp = Tape::new();
            let lp = build(&mut tp, store)?;
            let fp = tp.value(lp).scalar_value();
            store.set_param_elem(name, i, orig - STEP);
            let mut tm = Tape::new();
            let lm = build(&mut tm, store)?;
            let fm = tm.value(lm).scalar_value();
            store.set_param_elem(name, i, orig);
            let numeric = (fp - fm) / (2.0 * STEP);
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-8);
            worst = worst.max(rel);
        }
        per_param.insert(name.clone(), worst);
    }
    Ok(GradCheckReport { per_param, tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::params::glorot;
    use crate::nnet::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn quadratic_store() -> ParamStore {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        store.insert("w", glorot(&mut rng, 3, 3)).unwrap();
        store.insert("b", glorot(&mut rng, 1, 3)).unwrap();
        store
    }

    fn quadratic(tape: &mut Tape, store: &ParamStore) -> crate::Result<crate::nnet::NodeId> {
        let w = tape.param(store, "w");
        let b = tape.param(store, "b");
        let x = tape.constant(Tensor::from_vec(1, 3, vec![0.2, -0.5, 1.1]).unwrap());
        let h = tape.matmul(x, w);
        let h = tape.add(h, b);
        let t = tape.tanh(h);
        let sq = tape.mul(t, t);
        Ok(tape.sum(sq))
    }

    #[test]
    fn tape_gradients_pass() {
        let mut store = quadratic_store();
        let report = grad_check(&mut store, 1e-4, quadratic).unwrap();
        assert!(report.pass(), "max err {}", report.max_err());
        assert_eq!(report.per_param().len(), 2);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let mut store = quadratic_store();
        store.zero_grads();
        let mut tape = Tape::new();
        let loss = quadratic(&mut tape, &store).unwrap();
        tape.backward(loss, 1.0, &mut store);
        let mut analytic: BTreeMap<String, Vec<f64>> = store
            .names()
            .into_iter()
            .map(|n| (n.clone(), store.grad(&n).unwrap().data().to_vec()))
            .collect();
        analytic.get_mut("w").unwrap()[4] += 0.1;
        let report = grad_check_against(&mut store, &analytic, 1e-4, quadratic).unwrap();
        assert!(!report.pass());
        assert!(report.per_param()["w"] > 1e-4);
        assert!(report.per_param()["b"] <= 1e-4);
    }

    #[test]
    fn empty_store_passes_vacuously() {
        let mut store = ParamStore::new();
        let report = grad_check(&mut store, 1e-4, |tape, _| {
            Ok(tape.constant(Tensor::scalar(7.0)))
        })
        .unwrap();
        assert!(report.pass());
        assert_eq!(report.max_err(), 0.0);
    }
}
