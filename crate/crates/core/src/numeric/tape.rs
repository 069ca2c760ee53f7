use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Tensor};
use super::NumericError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Train/eval switch for layers whose behaviour differs between the two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// A differentiable operation defined outside this module.
///
/// `forward` may cache whatever it needs for `backward` (argmax indices and
/// the like). `backward` returns one entry per input; entries for inputs that
/// do not need a gradient may be `None`.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor, NumericError>;

    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs_grad: &[bool],
    ) -> Vec<Option<Tensor>>;
}

/// Per-dimension batch normalization state: affine parameters plus running
/// statistics used in eval mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    /// Number of train-mode batches folded into the running statistics.
    pub batches_seen: u64,
}

impl BatchNormState {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Tensor::ones(&[1, dim]),
            beta: Tensor::zeros(&[1, dim]),
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
            batches_seen: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.running_mean.len()
    }

    // The first batch seeds the running statistics directly; later batches
    // blend in with `momentum`. Written as `r += m * (b - r)` so a repeated
    // identical batch leaves the statistics bitwise unchanged.
    fn absorb(&mut self, mean: &[f64], var: &[f64]) {
        if self.batches_seen == 0 {
            self.running_mean.copy_from_slice(mean);
            self.running_var.copy_from_slice(var);
        } else {
            for (r, b) in self.running_mean.iter_mut().zip(mean) {
                *r += self.momentum * (b - *r);
            }
            for (r, b) in self.running_var.iter_mut().zip(var) {
                *r += self.momentum * (b - *r);
            }
        }
        self.batches_seen += 1;
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    ConcatCols(Var, Var),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    Mse {
        pred: Var,
        target: Tensor,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
        mode: Mode,
    },
    Custom {
        op: Box<dyn CustomOp>,
        inputs: Vec<Var>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation as a DAG so gradients can be pulled back from a
/// scalar output. Nodes are appended in evaluation order, so reverse
/// insertion order is a valid reverse topological order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`. Trainable leaves that the
    /// root does not depend on get an all-zero gradient.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn wrt(&self, v: Var) -> &Tensor {
        self.get(v).expect("no gradient recorded for a constant")
    }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A fixed input; no gradient is computed for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (m, k) = self.value(a).expect_matrix("matmul lhs")?;
        let (k2, n) = self.value(b).expect_matrix("matmul rhs")?;
        if k != k2 {
            return Err(NumericError::Shape(format!(
                "matmul: [{m}×{k}] · [{k2}×{n}]"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(self.value(a), false, self.value(b), false, &mut out, false);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    /// Adds a `[1×d]` (or `[d]`) bias to every row of an `[n×d]` matrix.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, NumericError> {
        let (n, d) = self.value(x).expect_matrix("add_bias input")?;
        if self.value(b).len() != d {
            return Err(NumericError::Shape(format!(
                "add_bias: bias of {} values for {d} columns",
                self.value(b).len()
            )));
        }
        let bias = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_exact_mut(d) {
            for (o, bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![n, d], out), Op::AddBias(x, b), rg))
    }

    /// `x·W + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericError> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NumericError::Shape(format!(
                "add: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Add(a, b), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (n, ca) = self.value(a).expect_matrix("concat lhs")?;
        let (n2, cb) = self.value(b).expect_matrix("concat rhs")?;
        if n != n2 {
            return Err(NumericError::Shape(format!(
                "concat_cols: {n} rows vs {n2} rows"
            )));
        }
        let mut out = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            out.extend_from_slice(self.value(a).row(i));
            out.extend_from_slice(self.value(b).row(i));
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::from_parts(vec![n, ca + cb], out),
            Op::ConcatCols(a, b),
            rg,
        ))
    }

    /// Selects rows (repeats allowed) of a matrix.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var, NumericError> {
        let (n, d) = self.value(x).expect_matrix("gather_rows input")?;
        if rows.is_empty() {
            return Err(NumericError::Shape("gather_rows: no rows selected".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(NumericError::Shape(format!(
                "gather_rows: row {bad} out of {n}"
            )));
        }
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            out.extend_from_slice(self.value(x).row(r));
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts(vec![rows.len(), d], out),
            Op::GatherRows(x, rows.to_vec()),
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Sum (not mean) of squared differences against a fixed target.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var, NumericError> {
        if self.value(pred).shape() != target.shape() {
            return Err(NumericError::Shape(format!(
                "mse: prediction {:?} vs target {:?}",
                self.value(pred).shape(),
                target.shape()
            )));
        }
        let s: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(s),
            Op::Mse {
                pred,
                target: target.clone(),
            },
            rg,
        ))
    }

    /// Batch normalization over the rows of `x`. In train mode the batch
    /// statistics (biased variance) normalize the input and are folded into
    /// `state`'s running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState,
        mode: Mode,
    ) -> Result<Var, NumericError> {
        match mode {
            Mode::Train => self.batch_norm_train(x, gamma, beta, state),
            Mode::Eval => self.batch_norm_eval(x, gamma, beta, state),
        }
    }

    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState,
    ) -> Result<Var, NumericError> {
        let (n, d) = self.check_bn(x, gamma, beta, state)?;
        if n < 2 {
            return Err(NumericError::BatchSize(n));
        }
        let xv = self.value(x);
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(xv.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(xv.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
        let out = self.bn_apply(x, gamma, beta, &mean, &inv_std, Mode::Train);
        state.absorb(&mean, &var);
        Ok(out)
    }

    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &BatchNormState,
    ) -> Result<Var, NumericError> {
        self.check_bn(x, gamma, beta, state)?;
        let inv_std: Vec<f64> = state
            .running_var
            .iter()
            .map(|v| 1.0 / (v + state.eps).sqrt())
            .collect();
        let mean = state.running_mean.clone();
        Ok(self.bn_apply(x, gamma, beta, &mean, &inv_std, Mode::Eval))
    }

    fn check_bn(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &BatchNormState,
    ) -> Result<(usize, usize), NumericError> {
        let (n, d) = self.value(x).expect_matrix("batch_norm input")?;
        if self.value(gamma).len() != d || self.value(beta).len() != d || state.dim() != d {
            return Err(NumericError::Shape(format!(
                "batch_norm: {d} input columns but γ/β/state sized {}/{}/{}",
                self.value(gamma).len(),
                self.value(beta).len(),
                state.dim()
            )));
        }
        Ok((n, d))
    }

    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: &[f64],
        mode: Mode,
    ) -> Var {
        let xv = self.value(x);
        let (n, d) = (xv.rows(), xv.cols());
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Vec::with_capacity(n * d);
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            for (j, v) in xv.row(i).iter().enumerate() {
                let h = (v - mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            Tensor::from_parts(vec![n, d], out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: Tensor::from_parts(vec![n, d], xhat),
                inv_std: inv_std.to_vec(),
                mode,
            },
            rg,
        )
    }

    pub fn custom(
        &mut self,
        mut op: Box<dyn CustomOp>,
        inputs: &[Var],
    ) -> Result<Var, NumericError> {
        let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = op.forward(&values)?;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            out,
            Op::Custom {
                op,
                inputs: inputs.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse-mode pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients, NumericError> {
        if self.value(root).len() != 1 {
            return Err(NumericError::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::ones(self.value(root).shape()));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.pull_back(node, &g, &mut grads);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            let keep = matches!(node.op, Op::Leaf) && node.requires_grad;
            if keep && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            } else if !keep {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn pull_back(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut send = |v: Var, t: Tensor| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let mut da = vec![0.0; av.len()];
                    gemm(g, false, bv, true, &mut da, false);
                    send(*a, Tensor::from_parts(av.shape().to_vec(), da));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; bv.len()];
                    gemm(av, true, g, false, &mut db, false);
                    send(*b, Tensor::from_parts(bv.shape().to_vec(), db));
                }
            }
            Op::AddBias(x, b) => {
                if self.rg(*b) {
                    let d = g.cols();
                    let mut db = vec![0.0; d];
                    for row in g.data().chunks_exact(d) {
                        for (s, v) in db.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                    send(*b, Tensor::from_parts(self.value(*b).shape().to_vec(), db));
                }
                send(*x, g.clone());
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Relu(x) => {
                let dx = node
                    .value
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(y, gv)| if *y > 0.0 { *gv } else { 0.0 })
                    .collect();
                send(*x, Tensor::from_parts(g.shape().to_vec(), dx));
            }
            Op::Sigmoid(x) => {
                let dx = node
                    .value
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(y, gv)| gv * y * (1.0 - y))
                    .collect();
                send(*x, Tensor::from_parts(g.shape().to_vec(), dx));
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let n = g.rows();
                let mut da = Vec::with_capacity(n * ca);
                let mut db = Vec::with_capacity(n * cb);
                for i in 0..n {
                    let row = g.row(i);
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                send(*a, Tensor::from_parts(vec![n, ca], da));
                send(*b, Tensor::from_parts(vec![n, cb], db));
            }
            Op::GatherRows(x, rows) => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                for (k, &r) in rows.iter().enumerate() {
                    for (d, v) in dx.row_mut(r).iter_mut().zip(g.row(k)) {
                        *d += v;
                    }
                }
                send(*x, dx);
            }
            Op::Sum(x) => {
                send(*x, Tensor::full(self.value(*x).shape(), g.data()[0]));
            }
            Op::Mse { pred, target } => {
                let s = g.data()[0];
                let dp = self
                    .value(*pred)
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(p, t)| 2.0 * (p - t) * s)
                    .collect();
                send(*pred, Tensor::from_parts(target.shape().to_vec(), dp));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            } => {
                let (n, d) = (g.rows(), g.cols());
                let gam = self.value(*gamma).data();
                let mut sum_g = vec![0.0; d];
                let mut sum_gx = vec![0.0; d];
                for i in 0..n {
                    for j in 0..d {
                        let gv = g.get(i, j);
                        sum_g[j] += gv;
                        sum_gx[j] += gv * xhat.get(i, j);
                    }
                }
                if self.rg(*x) {
                    let mut dx = vec![0.0; n * d];
                    for i in 0..n {
                        for j in 0..d {
                            let gv = g.get(i, j);
                            dx[i * d + j] = match mode {
                                Mode::Eval => gam[j] * inv_std[j] * gv,
                                Mode::Train => {
                                    gam[j] * inv_std[j] / n as f64
                                        * (n as f64 * gv - sum_g[j] - xhat.get(i, j) * sum_gx[j])
                                }
                            };
                        }
                    }
                    send(*x, Tensor::from_parts(vec![n, d], dx));
                }
                let gshape = self.value(*gamma).shape().to_vec();
                let bshape = self.value(*beta).shape().to_vec();
                send(*gamma, Tensor::from_parts(gshape, sum_gx));
                send(*beta, Tensor::from_parts(bshape, sum_g));
            }
            Op::Custom { op, inputs } => {
                let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let needs: Vec<bool> = inputs.iter().map(|&v| self.rg(v)).collect();
                let back = op.backward(&values, &node.value, g, &needs);
                debug_assert_eq!(back.len(), inputs.len(), "{} backward arity", op.name());
                for (v, t) in inputs.iter().zip(back) {
                    if let Some(t) = t {
                        send(*v, t);
                    }
                }
            }
        }
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
