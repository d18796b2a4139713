//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records operations as they are evaluated; [`Tape::backward`]
//! walks the record in reverse and accumulates parameter gradients. Parameters
//! live in a [`ParamStore`] and are borrowed, never copied, by the tape.

use ndarray::{s, Array1, Array2, Axis, Zip};

use crate::rng::StreamRng;

pub type ParamId = usize;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Array2<f64>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.tensors[id]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn element_count(&self) -> usize {
        self.tensors.iter().map(Array2::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }
}

/// Per-parameter gradient accumulators; `None` means exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn zeros(count: usize) -> Self {
        Gradients { grads: vec![None; count] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.grads[id].as_ref()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    fn accumulate(&mut self, id: ParamId, grad: &Array2<f64>) {
        match &mut self.grads[id] {
            Some(existing) => *existing += grad,
            slot @ None => *slot = Some(grad.clone()),
        }
    }

    /// Adds `other` into `self`.
    pub fn merge(&mut self, other: &Gradients) {
        for (id, grad) in other.grads.iter().enumerate() {
            if let Some(g) = grad {
                self.accumulate(id, g);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            *g *= factor;
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    /// Broadcasts a `1 × n` row over every row of the first operand.
    AddRow(Var, Var),
    Scale(Var, f64),
    Gather(Var, Vec<usize>),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Array2<f64>,
        inv_std: Array1<f64>,
    },
    Gelu(Var),
    Cols(Var, usize),
    ConcatCols(Vec<Var>),
    Dropout(Var, Array2<f64>),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Array2<f64>,
    },
}

enum Value {
    Owned(Array2<f64>),
    Param(ParamId),
}

struct Node {
    value: Value,
    op: Op,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape { params, nodes: Vec::with_capacity(256) }
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        match &self.nodes[v.0].value {
            Value::Owned(a) => a,
            Value::Param(id) => self.params.get(*id),
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { value: Value::Param(id), op: Op::Param(id) });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.value(a) + &self.value(row).row(0);
        self.push(out, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a) * factor;
        self.push(out, Op::Scale(a, factor))
    }

    /// Rows `ids` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Array2::zeros((ids.len(), t.ncols()));
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).assign(&t.row(id));
        }
        self.push(out, Op::Gather(table, ids.to_vec()))
    }

    /// Row-wise softmax. With `causal`, entry `(i, j)` for `j > i` is masked
    /// out.
    pub fn softmax(&mut self, a: Var, causal: bool) -> Var {
        let mut out = self.value(a).clone();
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let limit = if causal { (i + 1).min(row.len()) } else { row.len() };
            softmax_in_place(row.slice_mut(s![..limit]).into_slice().expect("row contiguous"));
            row.slice_mut(s![limit..]).fill(0.0);
        }
        self.push(out, Op::Softmax(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut normalized = xv.clone();
        let mut inv_std = Array1::zeros(xv.nrows());
        for (i, mut row) in normalized.axis_iter_mut(Axis(0)).enumerate() {
            let mean = row.sum() / n;
            row -= mean;
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row *= inv;
            inv_std[i] = inv;
        }
        let out = &normalized * &self.value(gamma).row(0) + self.value(beta).row(0);
        self.push(out, Op::LayerNorm { x, gamma, beta, normalized, inv_std })
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(gelu);
        self.push(out, Op::Gelu(a))
    }

    /// Columns `start..start + len`.
    pub fn cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(out, Op::Cols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Inverted dropout; identity when `rate` is zero.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: &mut StreamRng) -> Var {
        if rate <= 0.0 {
            return a;
        }
        let keep = 1.0 / (1.0 - rate);
        let shape = self.value(a).raw_dim();
        let mask = Array2::from_shape_simple_fn(shape, || if rng.unit() < rate { 0.0 } else { keep });
        let out = self.value(a) * &mask;
        self.push(out, Op::Dropout(a, mask))
    }

    /// Summed negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`. Rows whose target is `None` are excluded. Returns a `1 × 1`
    /// node.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let mut probs = self.value(logits).clone();
        assert_eq!(probs.nrows(), targets.len(), "one target per logits row");
        let mut loss = 0.0;
        for (mut row, target) in probs.axis_iter_mut(Axis(0)).zip(targets) {
            let slice = row.as_slice_mut().expect("row contiguous");
            let log_z = log_sum_exp(slice);
            if let Some(t) = target {
                loss -= slice[*t] - log_z;
            }
            slice.iter_mut().for_each(|v| *v = (*v - log_z).exp());
        }
        let out = Array2::from_elem((1, 1), loss);
        self.push(out, Op::CrossEntropy { logits, targets: targets.to_vec(), probs })
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    /// Gradients of `seed · output` with respect to every parameter.
    pub fn backward(&self, output: Var, seed: f64) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let shape = self.value(output).raw_dim();
        grads[output.0] = Some(Array2::from_elem(shape, seed));
        let mut params = Gradients::zeros(self.params.len());

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Constant => {}
                Op::Param(id) => params.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    add_grad(&mut grads, *a, ga);
                    add_grad(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    add_grad(&mut grads, *a, ga);
                    add_grad(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    add_grad(&mut grads, *b, g.clone());
                    add_grad(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    add_grad(&mut grads, *row, gr);
                    add_grad(&mut grads, *a, g);
                }
                Op::Scale(a, factor) => add_grad(&mut grads, *a, g * *factor),
                Op::Gather(table, ids) => {
                    let mut gt = Array2::zeros(self.value(*table).raw_dim());
                    for (r, &id) in ids.iter().enumerate() {
                        let mut dst = gt.row_mut(id);
                        dst += &g.row(r);
                    }
                    add_grad(&mut grads, *table, gt);
                }
                Op::Softmax(a) => {
                    let y = match &self.nodes[idx].value {
                        Value::Owned(y) => y,
                        Value::Param(_) => unreachable!(),
                    };
                    let mut ga = y * &g;
                    let dots = ga.sum_axis(Axis(1));
                    Zip::from(ga.rows_mut()).and(y.rows()).and(&dots).for_each(|mut out, yr, &d| {
                        out.zip_mut_with(&yr, |o, &yv| *o -= yv * d);
                    });
                    add_grad(&mut grads, *a, ga);
                }
                Op::LayerNorm { x, gamma, beta, normalized, inv_std } => {
                    let gamma_row = self.value(*gamma).row(0).to_owned();
                    add_grad(&mut grads, *gamma, (&g * normalized).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    add_grad(&mut grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let n = g.ncols() as f64;
                    let mut gx = &g * &gamma_row;
                    Zip::from(gx.rows_mut()).and(normalized.rows()).and(inv_std).for_each(|mut row, xh, &inv| {
                        let sum = row.sum();
                        let dot = row.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>();
                        row.zip_mut_with(&xh, |d, &xv| *d = inv * (*d - sum / n - xv * dot / n));
                    });
                    add_grad(&mut grads, *x, gx);
                }
                Op::Gelu(a) => {
                    let ga = Zip::from(&g).and(self.value(*a)).map_collect(|&gv, &xv| gv * gelu_grad(xv));
                    add_grad(&mut grads, *a, ga);
                }
                Op::Cols(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    add_grad(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        add_grad(&mut grads, p, g.slice(s![.., at..at + w]).to_owned());
                        at += w;
                    }
                }
                Op::Dropout(a, mask) => add_grad(&mut grads, *a, g * mask),
                Op::CrossEntropy { logits, targets, probs } => {
                    let upstream = g[[0, 0]];
                    let mut gl = probs.clone();
                    for (mut row, target) in gl.axis_iter_mut(Axis(0)).zip(targets) {
                        match target {
                            Some(t) => {
                                row[*t] -= 1.0;
                                row *= upstream;
                            }
                            None => row.fill(0.0),
                        }
                    }
                    add_grad(&mut grads, *logits, gl);
                }
            }
        }
        params
    }
}

fn add_grad(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(values: &mut [f64]) {
    let log_z = log_sum_exp(values);
    values.iter_mut().for_each(|v| *v = (*v - log_z).exp());
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central-difference check of `f` against the tape gradient for every
    /// entry of every parameter.
    fn check(store: &mut ParamStore, f: impl Fn(&mut Tape) -> Var) {
        let analytic = {
            let mut tape = Tape::new(store);
            let out = f(&mut tape);
            tape.backward(out, 1.0)
        };
        let h = 1e-6;
        for id in 0..store.len() {
            let shape = store.get(id).raw_dim();
            for idx in ndarray::indices(shape) {
                let orig = store.get(id)[idx];
                store.get_mut(id)[idx] = orig + h;
                let plus = {
                    let mut t = Tape::new(store);
                    let o = f(&mut t);
                    t.scalar(o)
                };
                store.get_mut(id)[idx] = orig - h;
                let minus = {
                    let mut t = Tape::new(store);
                    let o = f(&mut t);
                    t.scalar(o)
                };
                store.get_mut(id)[idx] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let a = analytic.get(id).map_or(0.0, |g| g[idx]);
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                assert!(err < 1e-5, "param {} {:?}: analytic {a} numeric {numeric}", store.name(id), idx);
            }
        }
    }

    fn store() -> ParamStore {
        let mut p = ParamStore::new();
        p.add("x", array![[0.3, -1.2, 0.5], [1.1, 0.2, -0.7]]);
        p.add("w", array![[0.4, -0.1], [0.9, 0.3], [-0.5, 0.8]]);
        p.add("row", array![[0.05, -0.2]]);
        p.add("gamma", array![[1.2, 0.7, -0.4]]);
        p.add("beta", array![[0.1, 0.0, -0.3]]);
        p
    }

    #[test]
    fn matmul_add_gelu_softmax() {
        let mut p = store();
        check(&mut p, |t| {
            let x = t.param(0);
            let w = t.param(1);
            let r = t.param(2);
            let h = t.matmul(x, w);
            let h = t.add_row(h, r);
            let h = t.gelu(h);
            let s = t.softmax(h, true);
            let z = t.matmul_t(s, h);
            let z = t.scale(z, 0.7);
            t.cross_entropy(z, &[Some(1), Some(0)])
        });
    }

    #[test]
    fn layer_norm_cols_concat_gather() {
        let mut p = store();
        check(&mut p, |t| {
            let x = t.param(0);
            let g = t.param(3);
            let b = t.param(4);
            let n = t.layer_norm(x, g, b);
            let a = t.cols(n, 0, 1);
            let c = t.cols(n, 1, 2);
            let joined = t.concat_cols(&[c, a]);
            let rows = t.gather(joined, &[1, 0, 1]);
            let w = t.param(1);
            let logits = t.matmul(rows, w);
            let both = t.add(logits, logits);
            t.cross_entropy(both, &[Some(0), None, Some(1)])
        });
    }

    #[test]
    fn softmax_rows_sum_to_one_and_mask() {
        let p = ParamStore::new();
        let mut t = Tape::new(&p);
        let a = t.constant(array![[1.0, 2.0, 3.0], [0.5, -1.0, 9.0], [0.0, 0.0, 0.0]]);
        let s = t.softmax(a, true);
        let v = t.value(s);
        for (i, row) in v.rows().into_iter().enumerate() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().skip(i + 1).all(|&x| x == 0.0));
        }
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = Gradients::zeros(2);
        g.accumulate(0, &array![[3.0, 4.0]]);
        assert_eq!(g.clip(1.0), 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
    }
}
