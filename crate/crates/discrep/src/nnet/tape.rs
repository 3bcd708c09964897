//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! Values are computed eagerly as nodes are appended; `backward` walks the
//! tape in reverse and accumulates exact gradients into a [`ParamStore`].
//! Shape mismatches are programming errors and panic; callers that accept
//! untrusted graph shapes validate first (see [`super::layers::Stack`]).

use super::math;
use super::params::ParamStore;
use super::tensor::Tensor;

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    /// Constant or parameter input; the name marks a parameter leaf.
    Leaf(Option<String>),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// alpha * x + beta, elementwise; only alpha matters to the gradient.
    Affine(NodeId, f64),
    /// Matrix plus a 1xC bias row broadcast over rows.
    AddBias(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    SoftmaxRows(NodeId),
    LogSoftmaxRows(NodeId),
    /// Selects one column per row: out[t, 0] = in[t, idx[t]].
    Pick(NodeId, Vec<usize>),
    /// Gathers rows of an embedding matrix: out[t, :] = in[ids[t], :].
    EmbedRows(NodeId, Vec<usize>),
    /// Sliding windows over rows: out[i, :] = concat(in[i..i+w, :]).
    Windows(NodeId, usize),
    /// Column-wise max over rows (ties resolve to the first row).
    MaxCols(NodeId),
    /// Column-wise mean over rows.
    MeanCols(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    ConcatCols(NodeId, NodeId),
    ConcatRows(NodeId, NodeId),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only computation tape.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    /// A constant leaf; no gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf(None))
    }

    /// A parameter leaf; `backward` accumulates its gradient into the store
    /// under `name`. Repeated leaves for one name sum their contributions,
    /// which is what shared weights need.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> NodeId {
        let value = store.tensor(name).clone();
        self.push(value, Op::Leaf(Some(name.to_string())))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = math::matmul(&self.nodes[a].value, &self.nodes[b].value);
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_vec(va.rows(), va.cols(), data).expect("shape preserved");
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let value = Tensor::from_vec(va.rows(), va.cols(), data).expect("shape preserved");
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::from_vec(va.rows(), va.cols(), data).expect("shape preserved");
        self.push(value, Op::Mul(a, b))
    }

    pub fn affine(&mut self, a: NodeId, alpha: f64, beta: f64) -> NodeId {
        let va = &self.nodes[a].value;
        let data = va.data().iter().map(|x| x * alpha + beta).collect();
        let value = Tensor::from_vec(va.rows(), va.cols(), data).expect("shape preserved");
        self.push(value, Op::Affine(a, alpha))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[bias].value);
        assert_eq!(vb.rows(), 1, "bias must be a row vector");
        assert_eq!(va.cols(), vb.cols(), "add_bias width mismatch");
        let mut value = va.clone();
        for r in 0..value.rows() {
            for c in 0..value.cols() {
                let v = value.get(r, c) + vb.get(0, c);
                value.set(r, c, v);
            }
        }
        self.push(value, Op::AddBias(a, bias))
    }

    fn unary<F: Fn(f64) -> f64>(&mut self, a: NodeId, f: F, op: Op) -> NodeId {
        let va = &self.nodes[a].value;
        let data = va.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::from_vec(va.rows(), va.cols(), data).expect("shape preserved");
        self.push(value, op)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, math::sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(a, math::softplus, Op::Softplus(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut value = self.nodes[a].value.clone();
        let cols = value.cols();
        for r in 0..value.rows() {
            math::softmax_row_in_place(&mut value.data_mut()[r * cols..(r + 1) * cols]);
        }
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut value = self.nodes[a].value.clone();
        let cols = value.cols();
        for r in 0..value.rows() {
            math::log_softmax_row_in_place(&mut value.data_mut()[r * cols..(r + 1) * cols]);
        }
        self.push(value, Op::LogSoftmaxRows(a))
    }

    pub fn pick(&mut self, a: NodeId, indices: Vec<usize>) -> NodeId {
        let va = &self.nodes[a].value;
        assert_eq!(indices.len(), va.rows(), "pick needs one index per row");
        let data: Vec<f64> = indices.iter().enumerate().map(|(t, &c)| va.get(t, c)).collect();
        let value = Tensor::from_vec(indices.len(), 1, data).expect("one column");
        self.push(value, Op::Pick(a, indices))
    }

    pub fn embed_rows(&mut self, table: NodeId, ids: Vec<usize>) -> NodeId {
        let vt = &self.nodes[table].value;
        let cols = vt.cols();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in &ids {
            assert!(id < vt.rows(), "embedding id out of range");
            data.extend_from_slice(vt.row_slice(id));
        }
        let value = Tensor::from_vec(ids.len(), cols, data).expect("gathered rows");
        self.push(value, Op::EmbedRows(table, ids))
    }

    pub fn windows(&mut self, a: NodeId, width: usize) -> NodeId {
        let va = &self.nodes[a].value;
        assert!(width >= 1 && va.rows() >= width, "window width exceeds rows");
        let (t, e) = va.shape();
        let out_rows = t - width + 1;
        let mut data = Vec::with_capacity(out_rows * width * e);
        for i in 0..out_rows {
            for j in 0..width {
                data.extend_from_slice(va.row_slice(i + j));
            }
        }
        let value = Tensor::from_vec(out_rows, width * e, data).expect("windowed");
        self.push(value, Op::Windows(a, width))
    }

    pub fn max_cols(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a].value;
        let (t, c) = va.shape();
        assert!(t >= 1);
        let mut data = vec![f64::NEG_INFINITY; c];
        for r in 0..t {
            for (j, d) in data.iter_mut().enumerate() {
                let v = va.get(r, j);
                if v > *d {
                    *d = v;
                }
            }
        }
        let value = Tensor::from_vec(1, c, data).expect("one row");
        self.push(value, Op::MaxCols(a))
    }

    pub fn mean_cols(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a].value;
        let (t, c) = va.shape();
        assert!(t >= 1);
        let mut data = vec![0.0; c];
        for r in 0..t {
            for (j, d) in data.iter_mut().enumerate() {
                *d += va.get(r, j);
            }
        }
        for d in data.iter_mut() {
            *d /= t as f64;
        }
        let value = Tensor::from_vec(1, c, data).expect("one row");
        self.push(value, Op::MeanCols(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a].value;
        let s: f64 = va.data().iter().sum();
        let value = Tensor::scalar(s / va.len() as f64);
        self.push(value, Op::Mean(a))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(va.rows(), vb.rows(), "concat_cols row mismatch");
        let rows = va.rows();
        let mut data = Vec::with_capacity(rows * (va.cols() + vb.cols()));
        for r in 0..rows {
            data.extend_from_slice(va.row_slice(r));
            data.extend_from_slice(vb.row_slice(r));
        }
        let value = Tensor::from_vec(rows, va.cols() + vb.cols(), data).expect("concat");
        self.push(value, Op::ConcatCols(a, b))
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(va.cols(), vb.cols(), "concat_rows column mismatch");
        let mut data = Vec::with_capacity(va.len() + vb.len());
        data.extend_from_slice(va.data());
        data.extend_from_slice(vb.data());
        let value = Tensor::from_vec(va.rows() + vb.rows(), va.cols(), data).expect("concat");
        self.push(value, Op::ConcatRows(a, b))
    }

    /// Reverse pass from a scalar `loss` node, seeding its gradient with
    /// `seed` and accumulating parameter gradients into `store`.
    pub fn backward(&self, loss: NodeId, seed: f64, store: &mut ParamStore) {
        assert_eq!(self.nodes[loss].value.shape(), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss] = Some(Tensor::scalar(seed));
        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf(Some(name)) => store.accumulate_grad(name, &g),
                Op::Leaf(None) => {}
                Op::MatMul(a, b) => {
                    let da = math::matmul_nt(&g, &self.nodes[*b].value);
                    let db = math::matmul_tn(&self.nodes[*a].value, &g);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    let neg = scale(&g, -1.0);
                    acc(&mut grads, *a, g);
                    acc(&mut grads, *b, neg);
                }
                Op::Mul(a, b) => {
                    let da = hadamard(&g, &self.nodes[*b].value);
                    let db = hadamard(&g, &self.nodes[*a].value);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Affine(a, alpha) => acc(&mut grads, *a, scale(&g, *alpha)),
                Op::AddBias(a, bias) => {
                    let mut db = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            let v = db.get(0, c) + g.get(r, c);
                            db.set(0, c, v);
                        }
                    }
                    acc(&mut grads, *a, g);
                    acc(&mut grads, *bias, db);
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[id].value;
                    let da = map2(&g, y, |gv, yv| gv * yv * (1.0 - yv));
                    acc(&mut grads, *a, da);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[id].value;
                    let da = map2(&g, y, |gv, yv| gv * (1.0 - yv * yv));
                    acc(&mut grads, *a, da);
                }
                Op::Relu(a) => {
                    let x = &self.nodes[*a].value;
                    let da = map2(&g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                    acc(&mut grads, *a, da);
                }
                Op::Softplus(a) => {
                    let x = &self.nodes[*a].value;
                    let da = map2(&g, x, |gv, xv| gv * math::sigmoid(xv));
                    acc(&mut grads, *a, da);
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[id].value;
                    let mut da = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let mut dot = 0.0;
                        for c in 0..y.cols() {
                            dot += g.get(r, c) * y.get(r, c);
                        }
                        for c in 0..y.cols() {
                            da.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &self.nodes[id].value;
                    let mut da = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let mut gsum = 0.0;
                        for c in 0..y.cols() {
                            gsum += g.get(r, c);
                        }
                        for c in 0..y.cols() {
                            da.set(r, c, g.get(r, c) - y.get(r, c).exp() * gsum);
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::Pick(a, indices) => {
                    let va = &self.nodes[*a].value;
                    let mut da = Tensor::zeros(va.rows(), va.cols());
                    for (t, &c) in indices.iter().enumerate() {
                        da.set(t, c, g.get(t, 0));
                    }
                    acc(&mut grads, *a, da);
                }
                Op::EmbedRows(table, ids) => {
                    let vt = &self.nodes[*table].value;
                    let mut dt = Tensor::zeros(vt.rows(), vt.cols());
                    for (t, &id_row) in ids.iter().enumerate() {
                        for c in 0..vt.cols() {
                            let v = dt.get(id_row, c) + g.get(t, c);
                            dt.set(id_row, c, v);
                        }
                    }
                    acc(&mut grads, *table, dt);
                }
                Op::Windows(a, width) => {
                    let va = &self.nodes[*a].value;
                    let e = va.cols();
                    let mut da = Tensor::zeros(va.rows(), e);
                    for i in 0..g.rows() {
                        for j in 0..*width {
                            for c in 0..e {
                                let v = da.get(i + j, c) + g.get(i, j * e + c);
                                da.set(i + j, c, v);
                            }
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::MaxCols(a) => {
                    let va = &self.nodes[*a].value;
                    let mut da = Tensor::zeros(va.rows(), va.cols());
                    for c in 0..va.cols() {
                        let mut best_r = 0;
                        let mut best = va.get(0, c);
                        for r in 1..va.rows() {
                            if va.get(r, c) > best {
                                best = va.get(r, c);
                                best_r = r;
                            }
                        }
                        da.set(best_r, c, g.get(0, c));
                    }
                    acc(&mut grads, *a, da);
                }
                Op::MeanCols(a) => {
                    let va = &self.nodes[*a].value;
                    let t = va.rows() as f64;
                    let mut da = Tensor::zeros(va.rows(), va.cols());
                    for r in 0..va.rows() {
                        for c in 0..va.cols() {
                            da.set(r, c, g.get(0, c) / t);
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::Sum(a) => {
                    let va = &self.nodes[*a].value;
                    let gs = g.scalar_value();
                    let da = Tensor::from_vec(va.rows(), va.cols(), vec![gs; va.len()])
                        .expect("constant fill");
                    acc(&mut grads, *a, da);
                }
                Op::Mean(a) => {
                    let va = &self.nodes[*a].value;
                    let gs = g.scalar_value() / va.len() as f64;
                    let da = Tensor::from_vec(va.rows(), va.cols(), vec![gs; va.len()])
                        .expect("constant fill");
                    acc(&mut grads, *a, da);
                }
                Op::ConcatCols(a, b) => {
                    let (ca, cb) = (self.nodes[*a].value.cols(), self.nodes[*b].value.cols());
                    let rows = g.rows();
                    let mut da = Tensor::zeros(rows, ca);
                    let mut db = Tensor::zeros(rows, cb);
                    for r in 0..rows {
                        for c in 0..ca {
                            da.set(r, c, g.get(r, c));
                        }
                        for c in 0..cb {
                            db.set(r, c, g.get(r, ca + c));
                        }
                    }
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::ConcatRows(a, b) => {
                    let (ra, rb) = (self.nodes[*a].value.rows(), self.nodes[*b].value.rows());
                    let cols = g.cols();
                    let mut da = Tensor::zeros(ra, cols);
                    let mut db = Tensor::zeros(rb, cols);
                    for r in 0..ra {
                        for c in 0..cols {
                            da.set(r, c, g.get(r, c));
                        }
                    }
                    for r in 0..rb {
                        for c in 0..cols {
                            db.set(r, c, g.get(ra + r, c));
                        }
                    }
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
            }
        }
    }
}

fn acc(grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
    match &mut grads[id] {
        Some(g) => {
            for (gv, dv) in g.data_mut().iter_mut().zip(delta.data()) {
                *gv += dv;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

fn scale(t: &Tensor, alpha: f64) -> Tensor {
    let data = t.data().iter().map(|v| v * alpha).collect();
    Tensor::from_vec(t.rows(), t.cols(), data).expect("shape preserved")
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("shape preserved")
}

fn map2<F: Fn(f64, f64) -> f64>(a: &Tensor, b: &Tensor, f: F) -> Tensor {
    assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("shape preserved")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn square_gradient_at_three_is_six() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(3.0)).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&store, "w");
        let f = tape.mul(w, w);
        assert_eq!(tape.value(f).scalar_value(), 9.0);
        tape.backward(f, 1.0, &mut store);
        assert_abs_diff_eq!(store.grad("w").unwrap().scalar_value(), 6.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_graph_has_no_parameter_gradient() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(3.0)).unwrap();
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(5.0));
        let f = tape.mul(c, c);
        tape.backward(f, 1.0, &mut store);
        assert!(store.grad("w").is_none());
    }

    #[test]
    fn shared_parameter_leaves_sum_gradients() {
        // f = w*w built from two distinct leaves of the same parameter.
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(3.0)).unwrap();
        let mut tape = Tape::new();
        let w1 = tape.param(&store, "w");
        let w2 = tape.param(&store, "w");
        let f = tape.mul(w1, w2);
        tape.backward(f, 1.0, &mut store);
        assert_abs_diff_eq!(store.grad("w").unwrap().scalar_value(), 6.0, epsilon = 1e-12);
    }

    #[test]
    fn backward_seed_scales_gradients() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(2.0)).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&store, "w");
        let f = tape.mul(w, w);
        tape.backward(f, 0.5, &mut store);
        assert_abs_diff_eq!(store.grad("w").unwrap().scalar_value(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(2, 3, vec![1.0, -2.0, 0.5, 10.0, 10.0, 10.0]).unwrap());
        let y = tape.softmax_rows(x);
        for r in 0..2 {
            let sum: f64 = tape.value(y).row_slice(r).iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        }
    }

    /// Central finite differences over every element of every parameter.
    fn fd_check<F>(store: &mut ParamStore, build: F, tol: f64)
    where
        F: Fn(&mut Tape, &ParamStore) -> NodeId,
    {
        store.zero_grads();
        let mut tape = Tape::new();
        let loss = build(&mut tape, store);
        tape.backward(loss, 1.0, store);
        let names = store.names();
        let analytic: Vec<(String, Vec<f64>)> = names
            .iter()
            .map(|n| (n.clone(), store.grad(n).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; store.tensor(n).len()])))
            .collect();
        let h = 1e-4;
        for (name, grad) in analytic {
            for i in 0..grad.len() {
                let orig = store.param_elem(&name, i);
                store.set_param_elem(&name, i, orig + h);
                let mut tp = Tape::new();
                let lp = build(&mut tp, store);
                let fp = tp.value(lp).scalar_value();
                store.set_param_elem(&name, i, orig - h);
                let mut tm = Tape::new();
                let lm = build(&mut tm, store);
                let fm = tm.value(lm).scalar_value();
                store.set_param_elem(&name, i, orig);
                let num = (fp - fm) / (2.0 * h);
                let rel = (grad[i] - num).abs() / (grad[i].abs() + num.abs() + 1e-8);
                assert!(rel <= tol, "{name}[{i}]: analytic {} numeric {num} rel {rel}", grad[i]);
            }
        }
    }

    #[test]
    fn every_op_passes_finite_differences() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(17);
        let mut store = ParamStore::new();
        store.insert("emb", super::super::params::glorot(&mut rng, 5, 4)).unwrap();
        store.insert("w", super::super::params::glorot(&mut rng, 8, 3)).unwrap();
        store.insert("b", super::super::params::glorot(&mut rng, 1, 3)).unwrap();
        store.insert("u", super::super::params::glorot(&mut rng, 3, 3)).unwrap();

        // Exercises embed, windows, matmul, add_bias, relu, tanh, sigmoid,
        // softplus, softmax, log_softmax, pick, max/mean pooling, concat,
        // affine, add/sub/mul, sum and mean in one graph.
        let build = |tape: &mut Tape, store: &ParamStore| -> NodeId {
            let emb = tape.param(store, "emb");
            let w = tape.param(store, "w");
            let b = tape.param(store, "b");
            let u = tape.param(store, "u");
            let x = tape.embed_rows(emb, vec![0, 2, 4, 1]);
            let win = tape.windows(x, 2);
            let wide = tape.concat_cols(x, x);
            let joined = tape.concat_rows(win, wide);
            let lin = tape.matmul(joined, w);
            let lin = tape.add_bias(lin, b);
            let r = tape.relu(lin);
            let t = tape.tanh(lin);
            let s = tape.sigmoid(lin);
            let sp = tape.softplus(lin);
            let mix1 = tape.add(r, t);
            let mix2 = tape.sub(s, sp);
            let mix = tape.mul(mix1, mix2);
            let proj = tape.matmul(mix, u);
            let sm = tape.softmax_rows(proj);
            let lsm = tape.log_softmax_rows(proj);
            let picked = tape.pick(lsm, vec![0, 2, 1, 0, 2, 1, 0]);
            let mx = tape.max_cols(sm);
            let mn = tape.mean_cols(sm);
            let pooled = tape.concat_cols(mx, mn);
            let pool_sum = tape.sum(pooled);
            let pick_mean = tape.mean(picked);
            let scaled = tape.affine(pick_mean, 0.3, 0.1);
            let total = tape.add(pool_sum, scaled);
            tape.sum(total)
        };
        fd_check(&mut store, build, 1e-4);
    }

    #[test]
    fn two_layer_network_matches_finite_differences() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        store.insert("w1", super::super::params::glorot(&mut rng, 4, 6)).unwrap();
        store.insert("b1", Tensor::zeros(1, 6)).unwrap();
        store.insert("w2", super::super::params::glorot(&mut rng, 6, 1)).unwrap();
        store.insert("b2", Tensor::zeros(1, 1)).unwrap();
        let input = super::super::params::glorot(&mut rng, 3, 4);
        let build = move |tape: &mut Tape, store: &ParamStore| -> NodeId {
            let x = tape.constant(input.clone());
            let w1 = tape.param(store, "w1");
            let b1 = tape.param(store, "b1");
            let w2 = tape.param(store, "w2");
            let b2 = tape.param(store, "b2");
            let h = tape.matmul(x, w1);
            let h = tape.add_bias(h, b1);
            let h = tape.tanh(h);
            let o = tape.matmul(h, w2);
            let o = tape.add_bias(o, b2);
            let sq = tape.mul(o, o);
            tape.mean(sq)
        };
        fd_check(&mut store, build, 1e-4);
    }

    #[test]
    fn forward_is_referentially_transparent() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_vec(2, 2, vec![0.1, -0.4, 0.7, 0.2]).unwrap()).unwrap();
        let run = |store: &ParamStore| {
            let mut tape = Tape::new();
            let w = tape.param(store, "w");
            let s = tape.sigmoid(w);
            let m = tape.matmul(s, w);
            let out = tape.sum(m);
            tape.value(out).scalar_value()
        };
        assert_eq!(run(&store).to_bits(), run(&store).to_bits());
        let _ = &mut store;
    }
}
