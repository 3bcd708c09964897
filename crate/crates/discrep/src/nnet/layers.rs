//! Feed-forward stacks and a gated recurrent cell on top of the tape.
//!
//! `Stack::forward` is the only graph builder that validates shapes as
//! recoverable errors; everything beneath it treats mismatches as bugs.
//! `gru_cell` (tape) and `gru_cell_math` (plain slices) apply operations in
//! the same order so that a forward pass through either is bit-identical.

use rand::Rng;

use super::math::{self, matvec};
use super::params::{glorot, ParamStore};
use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use crate::{Error, Result};

/// Elementwise nonlinearity applied after a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Tanh,
    Relu,
    Sigmoid,
}

/// One layer of a [`Stack`].
#[derive(Debug, Clone)]
pub enum Layer {
    /// Passes the input through unchanged.
    Identity,
    /// Affine map with named weights plus an activation.
    Dense {
        name: String,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
    },
    /// Row-wise softmax over the current width.
    SoftmaxRows,
}

/// A sequential feed-forward network.
#[derive(Debug, Clone, Default)]
pub struct Stack {
    layers: Vec<Layer>,
}

impl Stack {
    pub fn new(layers: Vec<Layer>) -> Stack {
        Stack { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Registers glorot weights and zero biases for every dense layer.
    pub fn init_params(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        for layer in &self.layers {
            if let Layer::Dense { name, in_dim, out_dim, .. } = layer {
                store.insert(&format!("{name}.w"), glorot(&mut rng, *in_dim, *out_dim))?;
                store.insert(&format!("{name}.b"), Tensor::zeros(1, *out_dim))?;
            }
        }
        Ok(())
    }

    /// Builds the forward graph, returning the output node.
    pub fn forward(&self, tape: &mut Tape, input: NodeId, store: &ParamStore) -> Result<NodeId> {
        let mut cur = input;
        for layer in &self.layers {
            match layer {
                Layer::Identity => {}
                Layer::Dense { name, in_dim, out_dim: _, activation } => {
                    let width = tape.value(cur).cols();
                    if width != *in_dim {
                        return Err(Error::Structural(format!(
                            "dense layer {name} expects width {in_dim}, input has width {width}"
                        )));
                    }
                    let w = tape.param(store, &format!("{name}.w"));
                    let b = tape.param(store, &format!("{name}.b"));
                    let lin = tape.matmul(cur, w);
                    let lin = tape.add_bias(lin, b);
                    cur = match activation {
                        Activation::Linear => lin,
                        Activation::Tanh => tape.tanh(lin),
                        Activation::Relu => tape.relu(lin),
                        Activation::Sigmoid => tape.sigmoid(lin),
                    };
                }
                Layer::SoftmaxRows => {
                    cur = tape.softmax_rows(cur);
                }
            }
        }
        Ok(cur)
    }
}

/// Tape node ids for one GRU cell's parameters.
#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub wz: NodeId,
    pub uz: NodeId,
    pub bz: NodeId,
    pub wr: NodeId,
    pub ur: NodeId,
    pub br: NodeId,
    pub wh: NodeId,
    pub uh: NodeId,
    pub bh: NodeId,
}

const GRU_GATES: [&str; 3] = ["z", "r", "h"];

/// Registers GRU parameters under `{prefix}.w{z,r,h}` etc.
pub fn gru_init<R: Rng>(
    store: &mut ParamStore,
    prefix: &str,
    in_dim: usize,
    hidden: usize,
    rng: &mut R,
) -> Result<()> {
    for gate in GRU_GATES {
        store.insert(&format!("{prefix}.w{gate}"), glorot(rng, in_dim, hidden))?;
        store.insert(&format!("{prefix}.u{gate}"), glorot(rng, hidden, hidden))?;
        store.insert(&format!("{prefix}.b{gate}"), Tensor::zeros(1, hidden))?;
    }
    Ok(())
}

/// Creates one parameter leaf per GRU matrix for reuse across timesteps.
pub fn gru_param_nodes(tape: &mut Tape, store: &ParamStore, prefix: &str) -> GruParams {
    let mut node = |name: String| tape.param(store, &name);
    GruParams {
        wz: node(format!("{prefix}.wz")),
        uz: node(format!("{prefix}.uz")),
        bz: node(format!("{prefix}.bz")),
        wr: node(format!("{prefix}.wr")),
        ur: node(format!("{prefix}.ur")),
        br: node(format!("{prefix}.br")),
        wh: node(format!("{prefix}.wh")),
        uh: node(format!("{prefix}.uh")),
        bh: node(format!("{prefix}.bh")),
    }
}

/// One GRU step: maps input row `x` and state row `h` to the next state.
pub fn gru_cell(tape: &mut Tape, p: &GruParams, x: NodeId, h: NodeId) -> NodeId {
    let z = {
        let t1 = tape.matmul(x, p.wz);
        let t2 = tape.matmul(h, p.uz);
        let s = tape.add(t1, t2);
        let s = tape.add_bias(s, p.bz);
        tape.sigmoid(s)
    };
    let r = {
        let t1 = tape.matmul(x, p.wr);
        let t2 = tape.matmul(h, p.ur);
        let s = tape.add(t1, t2);
        let s = tape.add_bias(s, p.br);
        tape.sigmoid(s)
    };
    let hbar = {
        let rh = tape.mul(r, h);
        let t1 = tape.matmul(x, p.wh);
        let t2 = tape.matmul(rh, p.uh);
        let s = tape.add(t1, t2);
        let s = tape.add_bias(s, p.bh);
        tape.tanh(s)
    };
    let keep = tape.affine(z, -1.0, 1.0);
    let kept = tape.mul(keep, h);
    let new = tape.mul(z, hbar);
    tape.add(kept, new)
}

/// Borrowed GRU matrices for the pure-math forward path.
#[derive(Debug, Clone, Copy)]
pub struct GruRefs<'a> {
    pub wz: &'a Tensor,
    pub uz: &'a Tensor,
    pub bz: &'a Tensor,
    pub wr: &'a Tensor,
    pub ur: &'a Tensor,
    pub br: &'a Tensor,
    pub wh: &'a Tensor,
    pub uh: &'a Tensor,
    pub bh: &'a Tensor,
}

impl<'a> GruRefs<'a> {
    pub fn from_store(store: &'a ParamStore, prefix: &str) -> GruRefs<'a> {
        GruRefs {
            wz: store.tensor(&format!("{prefix}.wz")),
            uz: store.tensor(&format!("{prefix}.uz")),
            bz: store.tensor(&format!("{prefix}.bz")),
            wr: store.tensor(&format!("{prefix}.wr")),
            ur: store.tensor(&format!("{prefix}.ur")),
            br: store.tensor(&format!("{prefix}.br")),
            wh: store.tensor(&format!("{prefix}.wh")),
            uh: store.tensor(&format!("{prefix}.uh")),
            bh: store.tensor(&format!("{prefix}.bh")),
        }
    }
}

/// Tape-free GRU step; applies operations in the same order as [`gru_cell`]
/// so both paths produce bit-identical states.
pub fn gru_cell_math(p: &GruRefs<'_>, x: &[f64], h: &[f64]) -> Vec<f64> {
    let hidden = p.uz.cols();
    let gate = |w: &Tensor, u: &Tensor, b: &Tensor, sig: bool| -> Vec<f64> {
        let t1 = matvec(x, w);
        let t2 = matvec(h, u);
        (0..hidden)
            .map(|j| {
                let s = (t1[j] + t2[j]) + b.get(0, j);
                if sig {
                    math::sigmoid(s)
                } else {
                    s
                }
            })
            .collect()
    };
    let z = gate(p.wz, p.uz, p.bz, true);
    let r = gate(p.wr, p.ur, p.br, true);
    let rh: Vec<f64> = (0..hidden).map(|j| r[j] * h[j]).collect();
    let t1 = matvec(x, p.wh);
    let t2 = matvec(&rh, p.uh);
    let hbar: Vec<f64> = (0..hidden)
        .map(|j| ((t1[j] + t2[j]) + p.bh.get(0, j)).tanh())
        .collect();
    (0..hidden)
        .map(|j| (z[j] * -1.0 + 1.0) * h[j] + z[j] * hbar[j])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn dense(name: &str, i: usize, o: usize, a: Activation) -> Layer {
        Layer::Dense { name: name.to_string(), in_dim: i, out_dim: o, activation: a }
    }

    #[test]
    fn identity_stack_returns_input_node() {
        let stack = Stack::new(vec![Layer::Identity]);
        let store = ParamStore::new();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(1, 2, vec![0.25, -1.5]).unwrap());
        let out = stack.forward(&mut tape, x, &store).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn zero_initialized_dense_bias_gives_zero_output() {
        let stack = Stack::new(vec![dense("lin", 3, 2, Activation::Linear)]);
        let mut store = ParamStore::new();
        store.insert("lin.w", Tensor::zeros(3, 2)).unwrap();
        store.insert("lin.b", Tensor::zeros(1, 2)).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let out = stack.forward(&mut tape, x, &store).unwrap();
        assert_eq!(tape.value(out).data(), &[0.0, 0.0]);
    }

    #[test]
    fn width_mismatch_is_a_structural_error() {
        let stack = Stack::new(vec![dense("lin", 4, 2, Activation::Tanh)]);
        let mut store = ParamStore::new();
        stack.init_params(&mut store, 1).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(1, 3, vec![0.0; 3]).unwrap());
        let err = stack.forward(&mut tape, x, &store).unwrap_err();
        assert!(matches!(err, crate::Error::Structural(_)));
    }

    #[test]
    fn softmax_layer_rows_sum_to_one() {
        let stack = Stack::new(vec![
            dense("lin", 2, 4, Activation::Tanh),
            Layer::SoftmaxRows,
        ]);
        let mut store = ParamStore::new();
        stack.init_params(&mut store, 9).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(3, 2, vec![0.1, 0.2, -0.9, 1.4, 0.0, 0.0]).unwrap());
        let out = stack.forward(&mut tape, x, &store).unwrap();
        for r in 0..3 {
            let s: f64 = tape.value(out).row_slice(r).iter().sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn init_params_registers_weights_and_zero_biases() {
        let stack = Stack::new(vec![
            dense("a", 3, 5, Activation::Relu),
            dense("b", 5, 2, Activation::Linear),
        ]);
        let mut store = ParamStore::new();
        stack.init_params(&mut store, 3).unwrap();
        assert_eq!(store.names(), vec!["a.b", "a.w", "b.b", "b.w"]);
        assert!(store.tensor("a.b").data().iter().all(|&v| v == 0.0));
        assert!(store.tensor("a.w").data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn gru_tape_and_math_paths_are_bit_identical() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let mut store = ParamStore::new();
        gru_init(&mut store, "g", 3, 4, &mut rng).unwrap();
        let x_row = vec![0.3, -1.2, 0.05];
        let h_row = vec![0.9, -0.4, 0.0, 0.27];

        let mut tape = Tape::new();
        let p = gru_param_nodes(&mut tape, &store, "g");
        let x = tape.constant(Tensor::from_vec(1, 3, x_row.clone()).unwrap());
        let h = tape.constant(Tensor::from_vec(1, 4, h_row.clone()).unwrap());
        let out = gru_cell(&mut tape, &p, x, h);
        let tape_out = tape.value(out).data().to_vec();

        let refs = GruRefs::from_store(&store, "g");
        let math_out = gru_cell_math(&refs, &x_row, &h_row);
        assert_eq!(tape_out.len(), math_out.len());
        for (a, b) in tape_out.iter().zip(&math_out) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn gru_state_stays_in_unit_interval_bounds() {
        // tanh candidate and convex gate keep each coordinate in (-1, 1)
        // when the previous state is inside that range.
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        gru_init(&mut store, "g", 2, 3, &mut rng).unwrap();
        let refs = GruRefs::from_store(&store, "g");
        let mut h = vec![0.0; 3];
        for step in 0..50 {
            let x = vec![(step as f64 * 0.37).sin() * 3.0, (step as f64 * 0.11).cos() * 3.0];
            h = gru_cell_math(&refs, &x, &h);
            assert!(h.iter().all(|v| v.abs() < 1.0), "state left (-1,1) at step {step}");
        }
    }

    #[test]
    fn gru_cell_gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        gru_init(&mut store, "g", 2, 3, &mut rng).unwrap();
        let x_t = Tensor::from_vec(1, 2, vec![0.4, -0.7]).unwrap();

        let build = |tape: &mut Tape, store: &ParamStore| {
            let p = gru_param_nodes(tape, store, "g");
            let x = tape.constant(x_t.clone());
            let h0 = tape.constant(Tensor::zeros(1, 3));
            let h1 = gru_cell(tape, &p, x, h0);
            let x2 = tape.constant(x_t.clone());
            let h2 = gru_cell(tape, &p, x2, h1);
            let sq = tape.mul(h2, h2);
            tape.sum(sq)
        };

        store.zero_grads();
        let mut tape = Tape::new();
        let loss = build(&mut tape, &store);
        tape.backward(loss, 1.0, &mut store);

        let h = 1e-4;
        for name in store.names() {
            let n = store.tensor(&name).len();
            for i in 0..n {
                let analytic = store
                    .grad(&name)
                    .map(|g| g.data()[i])
                    .unwrap_or(0.0);
                let orig = store.param_elem(&name, i);
                store.set_param_elem(&name, i, orig + h);
                let mut tp = Tape::new();
                let lp = build(&mut tp, &store);
                let fp = tp.value(lp).scalar_value();
                store.set_param_elem(&name, i, orig - h);
                let mut tm = Tape::new();
                let lm = build(&mut tm, &store);
                let fm = tm.value(lm).scalar_value();
                store.set_param_elem(&name, i, orig);
                let num = (fp - fm) / (2.0 * h);
                let rel = (analytic - num).abs() / (analytic.abs() + num.abs() + 1e-8);
                assert!(rel <= 1e-4, "{name}[{i}] rel err {rel}");
            }
        }
    }
}
