//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameters are read
//! from a borrowed [`ParamStore`]; [`Graph::backward`] returns their gradients
//! as a [`Gradients`] set that the caller accumulates into the store.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::error::{Error, Result};
use crate::sparsemax;
use crate::tensor::{matmul_at_into, matmul_bt_into, ParamId, ParamStore, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    /// Rows of a parameter table selected by id.
    Embed { table: ParamId, ids: Vec<usize> },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `m×n` plus a `1×n` row broadcast over every row.
    AddRow(Var, Var),
    Scale(Var, f64),
    /// `1 - x`.
    OneMinus(Var),
    Tanh(Var),
    Sigmoid(Var),
    Sqrt(Var),
    Transpose(Var),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows { input: Var, start: usize },
    SliceCols { input: Var, start: usize },
    /// Each row repeated `times` times consecutively.
    RepeatRows { input: Var, times: usize },
    /// The whole matrix stacked `times` times.
    Tile(Var),
    /// Blocks of `block` rows placed at the given block positions, zero elsewhere.
    ScatterRowBlocks { input: Var, block: usize, positions: Vec<usize> },
    Sum(Var),
    SumAll(Vec<Var>),
    LogSoftmaxRows(Var),
    /// Masked columns carry zero probability and so receive zero gradient.
    SparsemaxRows(Var),
    /// `out[k] = Σ_t w[k,t] · v[t, k·d..(k+1)·d]`.
    GroupedWeightedSum { weights: Var, values: Var },
    Dropout { input: Var, mask: Vec<f64> },
    PickElements { input: Var, index: Vec<(usize, usize)> },
    BceWithLogits { input: Var, targets: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug)]
enum Grad {
    Dense(Tensor),
    /// Only the rows an embedding lookup touched.
    Rows { shape: Vec<usize>, rows: BTreeMap<usize, Vec<f64>> },
}

impl Grad {
    fn to_dense(&self) -> Tensor {
        match self {
            Grad::Dense(t) => t.clone(),
            Grad::Rows { shape, rows } => {
                let mut t = Tensor::zeros(shape);
                let cols = shape[1];
                for (&r, v) in rows {
                    t.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(v);
                }
                t
            }
        }
    }

    fn add_dense(&mut self, g: &[f64]) {
        if let Grad::Rows { .. } = self {
            *self = Grad::Dense(self.to_dense());
        }
        if let Grad::Dense(t) = self {
            t.data_mut().iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
    }
}

/// Per-parameter gradients produced by a backward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<ParamId, Grad>,
}

impl Gradients {
    /// The gradient of `id` as a dense tensor.
    pub fn get(&self, id: ParamId) -> Option<Tensor> {
        self.grads.get(&id).map(Grad::to_dense)
    }

    /// Adds every gradient into the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (&id, g) in &self.grads {
            let p = store.get_mut(id);
            match g {
                Grad::Dense(t) => {
                    for (dst, src) in p.grad.data_mut().iter_mut().zip(t.data()) {
                        *dst += src;
                    }
                }
                Grad::Rows { shape, rows } => {
                    let cols = shape[1];
                    let data = p.grad.data_mut();
                    for (&r, v) in rows {
                        for (dst, src) in data[r * cols..(r + 1) * cols].iter_mut().zip(v) {
                            *dst += src;
                        }
                    }
                }
            }
        }
    }
}

/// Dynamic computation graph.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn shape_err(op: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension(format!("{op}: shapes {:?} and {:?} are incompatible", a.shape(), b.shape()))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_from(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs = inputs.iter().any(|&v| self.needs(v));
        self.push(value, op, needs)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// The parameter as a graph leaf; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let value = self.params.value(id).clone();
        let v = self.push(value, Op::Param(id), true);
        self.param_nodes.insert(id, v);
        v
    }

    /// Gathers rows `ids` of a parameter table without copying the whole table.
    pub fn embed(&mut self, table: ParamId, ids: &[usize]) -> Result<Var> {
        let t = self.params.value(table);
        let (rows, cols) = dims(t);
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(Error::Dimension(format!(
                    "row {id} out of range for table `{}` with {rows} rows",
                    self.params.get(table).name
                )));
            }
            data.extend_from_slice(t.row_slice(id));
        }
        let value = Tensor::new(vec![ids.len(), cols], data)?;
        Ok(self.push(value, Op::Embed { table, ids: ids.to_vec() }, true))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push_from(value, Op::MatMul(a, b), &[a, b]))
    }

    fn zip_same(&mut self, op_name: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op_name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push_from(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push_from(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push_from(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        let (m, n) = dims(ta);
        if tr.rows() != 1 || tr.cols() != n {
            return Err(shape_err("add_row", ta, tr));
        }
        let mut data = ta.data().to_vec();
        for i in 0..m {
            for (d, r) in data[i * n..(i + 1) * n].iter_mut().zip(tr.data()) {
                *d += r;
            }
        }
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push_from(value, Op::AddRow(a, row), &[a, row]))
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(a);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
            .expect("same shape");
        self.push_from(value, op, &[a])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.map(a, Op::OneMinus(a), |x| 1.0 - x)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.map(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push_from(value, Op::Transpose(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = self.value(a).clone().reshaped(vec![rows, cols])?;
        Ok(self.push_from(value, Op::Reshape(a), &[a]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat of zero tensors".into()))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(shape_err("concat_rows", self.value(*first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push_from(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat of zero tensors".into()))?;
        let rows = self.value(*first).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(shape_err("concat_cols", self.value(*first), t));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let value = Tensor::new(vec![rows, total], data)?;
        Ok(self.push_from(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = dims(t);
        if start + len > m {
            return Err(Error::Dimension(format!(
                "row slice {start}..{} out of range for {:?}",
                start + len,
                t.shape()
            )));
        }
        let value = Tensor::new(vec![len, n], t.data()[start * n..(start + len) * n].to_vec())?;
        Ok(self.push_from(value, Op::SliceRows { input: a, start }, &[a]))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = dims(t);
        if start + len > n {
            return Err(Error::Dimension(format!(
                "column slice {start}..{} out of range for {:?}",
                start + len,
                t.shape()
            )));
        }
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&t.row_slice(r)[start..start + len]);
        }
        let value = Tensor::new(vec![m, len], data)?;
        Ok(self.push_from(value, Op::SliceCols { input: a, start }, &[a]))
    }

    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = dims(t);
        let mut data = Vec::with_capacity(m * n * times);
        for r in 0..m {
            for _ in 0..times {
                data.extend_from_slice(t.row_slice(r));
            }
        }
        let value = Tensor::new(vec![m * times, n], data)?;
        Ok(self.push_from(value, Op::RepeatRows { input: a, times }, &[a]))
    }

    pub fn tile(&mut self, a: Var, times: usize) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = dims(t);
        let data = t.data().repeat(times);
        let value = Tensor::new(vec![m * times, n], data)?;
        Ok(self.push_from(value, Op::Tile(a), &[a]))
    }

    /// Places consecutive `block`-row chunks of `a` at `positions` of a
    /// `total`-block output, filling the remaining blocks with zeros.
    pub fn scatter_row_blocks(&mut self, a: Var, block: usize, positions: &[usize], total: usize) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = dims(t);
        if m != block * positions.len() || positions.iter().any(|&p| p >= total) {
            return Err(Error::Dimension(format!(
                "cannot scatter {:?} as {} blocks of {block} rows into {total} blocks",
                t.shape(),
                positions.len()
            )));
        }
        let mut data = vec![0.0; total * block * n];
        for (i, &p) in positions.iter().enumerate() {
            data[p * block * n..(p + 1) * block * n]
                .copy_from_slice(&t.data()[i * block * n..(i + 1) * block * n]);
        }
        let value = Tensor::new(vec![total * block, n], data)?;
        Ok(self.push_from(
            value,
            Op::ScatterRowBlocks {
                input: a,
                block,
                positions: positions.to_vec(),
            },
            &[a],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push_from(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Sum of scalar nodes.
    pub fn sum_all(&mut self, parts: &[Var]) -> Result<Var> {
        let mut s = 0.0;
        for &p in parts {
            let t = self.value(p);
            if t.len() != 1 {
                return Err(Error::Dimension(format!("sum_all expects scalars, got {:?}", t.shape())));
            }
            s += t.item();
        }
        Ok(self.push_from(Tensor::scalar(s), Op::SumAll(parts.to_vec()), parts))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = dims(t);
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            let row = t.row_slice(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|x| x - lse));
        }
        let value = Tensor::new(vec![m, n], data).expect("same shape");
        self.push_from(value, Op::LogSoftmaxRows(a), &[a])
    }

    /// Row-wise sparsemax restricted to columns where `mask` is true.
    pub fn sparsemax_rows(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = dims(t);
        if mask.len() != n {
            return Err(Error::Dimension(format!(
                "mask of length {} for scores {:?}",
                mask.len(),
                t.shape()
            )));
        }
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            data.extend(sparsemax::sparsemax_masked(t.row_slice(r), mask)?.into_scores());
        }
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push_from(
            value,
            Op::SparsemaxRows(a),
            &[a],
        ))
    }

    /// `weights` is `K×T`, `values` is `T×(K·d)`; row `k` of the result is
    /// the `weights[k]`-weighted sum of the `k`-th column block of `values`.
    pub fn grouped_weighted_sum(&mut self, weights: Var, values: Var) -> Result<Var> {
        let (tw, tv) = (self.value(weights), self.value(values));
        let (k, t) = dims(tw);
        let (t2, kd) = dims(tv);
        if t != t2 || k == 0 || kd % k != 0 {
            return Err(shape_err("grouped_weighted_sum", tw, tv));
        }
        let d = kd / k;
        let mut data = vec![0.0; k * d];
        for g in 0..k {
            let out = &mut data[g * d..(g + 1) * d];
            for s in 0..t {
                let w = tw.get(g, s);
                if w == 0.0 {
                    continue;
                }
                let block = &tv.row_slice(s)[g * d..(g + 1) * d];
                for (o, v) in out.iter_mut().zip(block) {
                    *o += w * v;
                }
            }
        }
        let value = Tensor::new(vec![k, d], data)?;
        Ok(self.push_from(value, Op::GroupedWeightedSum { weights, values }, &[weights, values]))
    }

    /// Inverted dropout: identity when `rate` is 0 or no rng is supplied.
    pub fn dropout<R: Rng>(&mut self, a: Var, rate: f64, rng: Option<&mut R>) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        let rng = match rng {
            Some(rng) if rate > 0.0 => rng,
            _ => return Ok(a),
        };
        let keep = 1.0 / (1.0 - rate);
        let t = self.value(a);
        let mask: Vec<f64> = (0..t.len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push_from(value, Op::Dropout { input: a, mask }, &[a]))
    }

    /// Column vector of the selected `(row, col)` entries.
    pub fn pick(&mut self, a: Var, index: &[(usize, usize)]) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = dims(t);
        if let Some(&(r, c)) = index.iter().find(|&&(r, c)| r >= m || c >= n) {
            return Err(Error::Dimension(format!("index ({r}, {c}) out of range for {:?}", t.shape())));
        }
        let data = index.iter().map(|&(r, c)| t.get(r, c)).collect();
        let value = Tensor::new(vec![index.len(), 1], data)?;
        Ok(self.push_from(
            value,
            Op::PickElements {
                input: a,
                index: index.to_vec(),
            },
            &[a],
        ))
    }

    /// Elementwise binary cross-entropy of `sigmoid(a)` against `targets`.
    pub fn bce_with_logits(&mut self, a: Var, targets: &[f64]) -> Result<Var> {
        let t = self.value(a);
        if t.len() != targets.len() {
            return Err(Error::Dimension(format!(
                "{} targets for logits {:?}",
                targets.len(),
                t.shape()
            )));
        }
        let data = t
            .data()
            .iter()
            .zip(targets)
            .map(|(&x, &y)| softplus(x) - y * x)
            .collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push_from(
            value,
            Op::BceWithLogits {
                input: a,
                targets: targets.to_vec(),
            },
            &[a],
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Dimension(format!("backward from non-scalar {:?}", lv.shape())));
        }
        if !lv.item().is_finite() {
            return Err(Error::Numeric(format!("loss is {}", lv.item())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let mut send = |v: Var, contrib: Vec<f64>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(contrib).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contrib),
                }
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let shape = node.value.shape().to_vec();
                    match out.grads.get_mut(id) {
                        Some(acc) => acc.add_dense(&g),
                        None => {
                            out.grads.insert(*id, Grad::Dense(Tensor::new(shape, g)?));
                        }
                    }
                }
                Op::Embed { table, ids } => {
                    let tv = self.params.value(*table);
                    let cols = tv.cols();
                    let acc = out.grads.entry(*table).or_insert_with(|| Grad::Rows {
                        shape: tv.shape().to_vec(),
                        rows: BTreeMap::new(),
                    });
                    for (i, &id) in ids.iter().enumerate() {
                        let src = &g[i * cols..(i + 1) * cols];
                        match acc {
                            Grad::Rows { rows, .. } => {
                                let row = rows.entry(id).or_insert_with(|| vec![0.0; cols]);
                                row.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                            }
                            Grad::Dense(t) => {
                                let dst = &mut t.data_mut()[id * cols..(id + 1) * cols];
                                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                            }
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, n) = dims(ta);
                    let p = tb.cols();
                    if self.needs(*a) {
                        let mut ga = vec![0.0; m * n];
                        matmul_bt_into(&g, tb.data(), &mut ga, m, p, n);
                        send(*a, ga);
                    }
                    if self.needs(*b) {
                        let mut gb = vec![0.0; n * p];
                        matmul_at_into(ta.data(), &g, &mut gb, m, n, p);
                        send(*b, gb);
                    }
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*b, g.iter().map(|x| -x).collect());
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    send(*a, g.iter().zip(tb.data()).map(|(x, y)| x * y).collect());
                    send(*b, g.iter().zip(ta.data()).map(|(x, y)| x * y).collect());
                }
                Op::AddRow(a, row) => {
                    let n = self.value(*row).cols();
                    let mut gr = vec![0.0; n];
                    for chunk in g.chunks(n) {
                        gr.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
                    }
                    send(*row, gr);
                    send(*a, g);
                }
                Op::Scale(a, c) => send(*a, g.iter().map(|x| x * c).collect()),
                Op::OneMinus(a) => send(*a, g.iter().map(|x| -x).collect()),
                Op::Tanh(a) => send(
                    *a,
                    g.iter().zip(node.value.data()).map(|(x, y)| x * (1.0 - y * y)).collect(),
                ),
                Op::Sigmoid(a) => send(
                    *a,
                    g.iter().zip(node.value.data()).map(|(x, y)| x * y * (1.0 - y)).collect(),
                ),
                Op::Sqrt(a) => send(
                    *a,
                    g.iter()
                        .zip(node.value.data())
                        .map(|(x, y)| if *y > 0.0 { x * 0.5 / y } else { 0.0 })
                        .collect(),
                ),
                Op::Transpose(a) => {
                    let (m, n) = dims(self.value(*a));
                    let mut ga = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] = g[j * m + i];
                        }
                    }
                    send(*a, ga);
                }
                Op::Reshape(a) => send(*a, g),
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        send(p, g[offset..offset + len].to_vec());
                        offset += len;
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = node.value.cols();
                    let rows = node.value.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        let mut gp = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            gp.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                        }
                        send(p, gp);
                        offset += c;
                    }
                }
                Op::SliceRows { input, start } => {
                    let ti = self.value(*input);
                    let n = ti.cols();
                    let mut gi = vec![0.0; ti.len()];
                    gi[start * n..start * n + g.len()].copy_from_slice(&g);
                    send(*input, gi);
                }
                Op::SliceCols { input, start } => {
                    let ti = self.value(*input);
                    let (m, n) = dims(ti);
                    let len = node.value.cols();
                    let mut gi = vec![0.0; m * n];
                    for r in 0..m {
                        gi[r * n + start..r * n + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                    }
                    send(*input, gi);
                }
                Op::RepeatRows { input, times } => {
                    let (m, n) = dims(self.value(*input));
                    let mut gi = vec![0.0; m * n];
                    for r in 0..m {
                        for k in 0..*times {
                            let src = &g[(r * times + k) * n..(r * times + k + 1) * n];
                            gi[r * n..(r + 1) * n].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                        }
                    }
                    send(*input, gi);
                }
                Op::Tile(input) => {
                    let len = self.value(*input).len();
                    let mut gi = vec![0.0; len];
                    for chunk in g.chunks(len) {
                        gi.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
                    }
                    send(*input, gi);
                }
                Op::ScatterRowBlocks { input, block, positions } => {
                    let n = node.value.cols();
                    let size = block * n;
                    let mut gi = Vec::with_capacity(positions.len() * size);
                    for &p in positions {
                        gi.extend_from_slice(&g[p * size..(p + 1) * size]);
                    }
                    send(*input, gi);
                }
                Op::Sum(a) => {
                    let len = self.value(*a).len();
                    send(*a, vec![g[0]; len]);
                }
                Op::SumAll(parts) => {
                    for &p in parts {
                        send(p, vec![g[0]]);
                    }
                }
                Op::LogSoftmaxRows(a) => {
                    let (m, n) = dims(&node.value);
                    let y = node.value.data();
                    let mut ga = vec![0.0; m * n];
                    for r in 0..m {
                        let gs: f64 = g[r * n..(r + 1) * n].iter().sum();
                        for c in 0..n {
                            ga[r * n + c] = g[r * n + c] - y[r * n + c].exp() * gs;
                        }
                    }
                    send(*a, ga);
                }
                Op::SparsemaxRows(input) => {
                    let (m, n) = dims(&node.value);
                    let mut ga = Vec::with_capacity(m * n);
                    for r in 0..m {
                        ga.extend(sparsemax::sparsemax_backward(
                            node.value.row_slice(r),
                            &g[r * n..(r + 1) * n],
                        ));
                    }
                    send(*input, ga);
                }
                Op::GroupedWeightedSum { weights, values } => {
                    let (tw, tv) = (self.value(*weights), self.value(*values));
                    let (k, t) = dims(tw);
                    let kd = tv.cols();
                    let d = kd / k;
                    if self.needs(*weights) {
                        let mut gw = vec![0.0; k * t];
                        for grp in 0..k {
                            let gout = &g[grp * d..(grp + 1) * d];
                            for s in 0..t {
                                let block = &tv.row_slice(s)[grp * d..(grp + 1) * d];
                                gw[grp * t + s] = gout.iter().zip(block).map(|(a, b)| a * b).sum();
                            }
                        }
                        send(*weights, gw);
                    }
                    if self.needs(*values) {
                        let mut gv = vec![0.0; t * kd];
                        for grp in 0..k {
                            let gout = &g[grp * d..(grp + 1) * d];
                            for s in 0..t {
                                let w = tw.get(grp, s);
                                if w == 0.0 {
                                    continue;
                                }
                                let dst = &mut gv[s * kd + grp * d..s * kd + (grp + 1) * d];
                                dst.iter_mut().zip(gout).for_each(|(a, b)| *a += w * b);
                            }
                        }
                        send(*values, gv);
                    }
                }
                Op::Dropout { input, mask } => {
                    send(*input, g.iter().zip(mask).map(|(x, m)| x * m).collect())
                }
                Op::PickElements { input, index } => {
                    let ti = self.value(*input);
                    let n = ti.cols();
                    let mut gi = vec![0.0; ti.len()];
                    for (&(r, c), gv) in index.iter().zip(&g) {
                        gi[r * n + c] += gv;
                    }
                    send(*input, gi);
                }
                Op::BceWithLogits { input, targets } => {
                    let ti = self.value(*input);
                    send(
                        *input,
                        g.iter()
                            .zip(ti.data())
                            .zip(targets)
                            .map(|((gv, &x), &y)| gv * (sigmoid(x) - y))
                            .collect(),
                    );
                }
            }
        }
        Ok(out)
    }
}

/// Outcome of a finite-difference gradient comparison.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares backprop gradients of `f` against central differences with step
/// `1e-5` for every element of `params`. The error for an element is
/// `|a - n| / max(|a|, |n|)`, or `|a - n|` when both are below `1e-8`.
///
/// `f` must be deterministic: it is re-run twice per checked element.
pub fn grad_check<F>(store: &mut ParamStore, params: &[ParamId], mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph) -> Result<Var>,
{
    const STEP: f64 = 1e-5;
    let analytic = {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        g.backward(loss)?
    };
    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        let v = g.scalar(loss);
        if !v.is_finite() {
            return Err(Error::Numeric(format!("loss is {v} during gradient check")));
        }
        Ok(v)
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    for &id in params {
        let n = store.value(id).len();
        let grad = analytic
            .get(id)
            .map(Tensor::into_data)
            .unwrap_or_else(|| vec![0.0; n]);
        for (i, &a) in grad.iter().enumerate() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + STEP;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig - STEP;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let scale = a.abs().max(numeric.abs());
            let err = if scale < 1e-8 {
                (a - numeric).abs()
            } else {
                (a - numeric).abs() / scale
            };
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = store.get(id).name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
