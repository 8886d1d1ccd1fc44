//! Reverse-mode gradient tape over 2-D tensors.
//!
//! Values are computed eagerly as operations are recorded. `backward`
//! consumes the tape, so a recording can be differentiated at most once.

use super::tensor::{matmul, matmul_at, matmul_bt, Tensor};
use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, sigmoid, softplus};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    LogSoftmax(Var),
    Gather(Var, Vec<usize>),
    SelectRows(Var, Vec<usize>),
    RowMean(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

/// Gradients of a scalar loss, one tensor per registered parameter, in
/// registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn new(grads: Vec<Tensor>) -> Self {
        Self { grads }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Tensor> {
        self.grads.get(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.grads.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.grads.iter_mut()
    }

    /// Mutable flat view of one gradient entry, for tests that corrupt
    /// gradients on purpose.
    pub fn values_mut(&mut self, index: usize) -> Option<&mut [f64]> {
        self.grads.get_mut(index).map(|t| t.data_mut())
    }
}

fn check_2d(t: &Tensor) -> Result<()> {
    if t.shape().len() != 2 {
        return Err(Error::dims(format!(
            "tape values must be matrices, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub(crate) fn params(&self) -> &[Var] {
        &self.params
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    /// Records an input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        check_2d(&value)?;
        Ok(self.push(value, Op::Leaf))
    }

    /// Records a trainable parameter. Its gradient is returned by
    /// [`Tape::backward`] at the position of this call among all
    /// `parameter` calls.
    pub fn parameter(&mut self, value: Tensor) -> Result<Var> {
        check_2d(&value)?;
        let idx = self.params.len();
        let v = self.push(value, Op::Param(idx));
        self.params.push(v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, m) = self.dims(a);
        let (m2, p) = self.dims(b);
        if m != m2 {
            return Err(Error::dims(format!("matmul {n}x{m} by {m2}x{p}")));
        }
        let out = matmul(self.value(a).data(), n, m, self.value(b).data(), p);
        Ok(self.push(Tensor::from_parts(n, p, out), Op::MatMul(a, b)))
    }

    /// Adds a 1×p row to every row of an n×p matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, p) = self.dims(a);
        if self.dims(row) != (1, p) {
            return Err(Error::dims(format!(
                "bias {:?} does not broadcast over {n}x{p}",
                self.dims(row)
            )));
        }
        let bias = self.value(row).data();
        let out: Vec<f64> = self
            .value(a)
            .data()
            .chunks(p)
            .flat_map(|r| r.iter().zip(bias).map(|(x, b)| x + b))
            .collect();
        Ok(self.push(Tensor::from_parts(n, p, out), Op::AddRow(a, row)))
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (n, p) = self.dims(a);
        if self.dims(b) != (n, p) {
            return Err(Error::dims(format!("elementwise {n}x{p} with {:?}", self.dims(b))));
        }
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(Tensor::from_parts(n, p, out), op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (n, p) = self.dims(a);
        let out = self.value(a).data().iter().map(|&x| f(x)).collect();
        self.push(Tensor::from_parts(n, p, out), op)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, softplus, Op::Softplus(a))
    }

    /// Row-wise `x - logsumexp(x)`.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let (n, p) = self.dims(a);
        let out = self
            .value(a)
            .data()
            .chunks(p)
            .flat_map(|r| {
                let lse = log_sum_exp(r);
                r.iter().map(move |x| x - lse)
            })
            .collect();
        self.push(Tensor::from_parts(n, p, out), Op::LogSoftmax(a))
    }

    /// Picks column `cols[i]` from row `i`, giving an n×1 column.
    pub fn gather(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let (n, p) = self.dims(a);
        if cols.len() != n {
            return Err(Error::dims(format!("{} indices for {n} rows", cols.len())));
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= p) {
            return Err(Error::invalid(format!("column {bad} out of range for width {p}")));
        }
        let data = self.value(a).data();
        let out = cols.iter().enumerate().map(|(i, &c)| data[i * p + c]).collect();
        Ok(self.push(Tensor::from_parts(n, 1, out), Op::Gather(a, cols.to_vec())))
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (n, p) = self.dims(a);
        if rows.is_empty() {
            return Err(Error::Empty("row selection".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::invalid(format!("row {bad} out of range for {n} rows")));
        }
        let src = self.value(a);
        let out = rows.iter().flat_map(|&r| src.row(r).iter().copied()).collect();
        Ok(self.push(Tensor::from_parts(rows.len(), p, out), Op::SelectRows(a, rows.to_vec())))
    }

    /// Mean across each row, giving an n×1 column.
    pub fn row_mean(&mut self, a: Var) -> Var {
        let (n, p) = self.dims(a);
        let out = self
            .value(a)
            .data()
            .chunks(p)
            .map(|r| r.iter().sum::<f64>() / p as f64)
            .collect();
        self.push(Tensor::from_parts(n, 1, out), Op::RowMean(a))
    }

    /// Mean of all entries as a 1×1 value.
    pub fn mean(&mut self, a: Var) -> Var {
        let data = self.value(a).data();
        let m = data.iter().sum::<f64>() / data.len() as f64;
        self.push(Tensor::from_parts(1, 1, vec![m]), Op::Mean(a))
    }

    /// Differentiates the 1×1 node `loss` with respect to every registered
    /// parameter. Unused parameters get zero gradients.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.dims(loss) != (1, 1) {
            return Err(Error::dims(format!(
                "backward needs a scalar loss, got {:?}",
                self.dims(loss)
            )));
        }
        let Tape { nodes, params } = self;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        adj[loss.0] = Some(vec![1.0]);
        let mut param_grads: Vec<Option<Vec<f64>>> = vec![None; params.len()];

        fn acc(adj: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
            match &mut adj[v.0] {
                Some(g) => g.iter_mut().zip(contrib).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(contrib),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &nodes[i];
            let (n, p) = (node.value.rows(), node.value.cols());
            let val = |v: Var| nodes[v.0].value.data();
            match &node.op {
                Op::Leaf => {}
                Op::Param(idx) => param_grads[*idx] = Some(g),
                Op::MatMul(a, b) => {
                    let m = nodes[a.0].value.cols();
                    let da = matmul_bt(&g, n, p, val(*b), m);
                    let db = matmul_at(val(*a), n, m, &g, p);
                    acc(&mut adj, *a, da);
                    acc(&mut adj, *b, db);
                }
                Op::AddRow(a, row) => {
                    let mut db = vec![0.0; p];
                    for r in g.chunks(p) {
                        db.iter_mut().zip(r).for_each(|(d, x)| *d += x);
                    }
                    acc(&mut adj, *a, g);
                    acc(&mut adj, *row, db);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *b, g.clone());
                    acc(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *b, g.iter().map(|x| -x).collect());
                    acc(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = g.iter().zip(val(*b)).map(|(g, y)| g * y).collect();
                    let db = g.iter().zip(val(*a)).map(|(g, x)| g * x).collect();
                    acc(&mut adj, *a, da);
                    acc(&mut adj, *b, db);
                }
                Op::Scale(a, c) => acc(&mut adj, *a, g.iter().map(|x| c * x).collect()),
                Op::Relu(a) => {
                    let d = g
                        .iter()
                        .zip(val(*a))
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect();
                    acc(&mut adj, *a, d);
                }
                Op::Tanh(a) => {
                    let d = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect();
                    acc(&mut adj, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect();
                    acc(&mut adj, *a, d);
                }
                Op::Softplus(a) => {
                    let d = g.iter().zip(val(*a)).map(|(g, &x)| g * sigmoid(x)).collect();
                    acc(&mut adj, *a, d);
                }
                Op::LogSoftmax(a) => {
                    let mut d = Vec::with_capacity(n * p);
                    for (gr, yr) in g.chunks(p).zip(node.value.data().chunks(p)) {
                        let gsum: f64 = gr.iter().sum();
                        d.extend(gr.iter().zip(yr).map(|(g, y)| g - y.exp() * gsum));
                    }
                    acc(&mut adj, *a, d);
                }
                Op::Gather(a, cols) => {
                    let width = nodes[a.0].value.cols();
                    let mut d = vec![0.0; nodes[a.0].value.len()];
                    for (row, (&c, gv)) in cols.iter().zip(&g).enumerate() {
                        d[row * width + c] += gv;
                    }
                    acc(&mut adj, *a, d);
                }
                Op::SelectRows(a, rows) => {
                    let mut d = vec![0.0; nodes[a.0].value.len()];
                    for (&r, gr) in rows.iter().zip(g.chunks(p)) {
                        d[r * p..(r + 1) * p].iter_mut().zip(gr).for_each(|(d, g)| *d += g);
                    }
                    acc(&mut adj, *a, d);
                }
                Op::RowMean(a) => {
                    let width = nodes[a.0].value.cols();
                    let d = g
                        .iter()
                        .flat_map(|gv| std::iter::repeat_n(gv / width as f64, width))
                        .collect();
                    acc(&mut adj, *a, d);
                }
                Op::Mean(a) => {
                    let len = nodes[a.0].value.len();
                    acc(&mut adj, *a, vec![g[0] / len as f64; len]);
                }
            }
        }

        let grads = params
            .iter()
            .zip(param_grads)
            .enumerate()
            .map(|(idx, (pv, g))| {
                let shape = &nodes[pv.0].value;
                let data = g.unwrap_or_else(|| vec![0.0; shape.len()]);
                if data.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of parameter {idx}")));
                }
                Ok(Tensor::from_parts(shape.rows(), shape.cols(), data))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Gradients { grads })
    }
}
