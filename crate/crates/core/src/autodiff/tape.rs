use crate::error::{Error, Result};
use crate::linalg::{gemm, Activation, Matrix};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddCol(NodeId, NodeId),
    MulCol(NodeId, NodeId),
    BroadcastCols(NodeId),
    OneMinus(NodeId),
    Scale(NodeId, f64),
    Activate(NodeId, Activation),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize),
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Matrix,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Loss {
        input: NodeId,
        grad: Matrix,
    },
    SumSquares(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Per-row statistics used by a batch-normalization node.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Dynamic computation graph over matrices. Nodes are appended in
/// evaluation order, so the node list is already topologically sorted and
/// the backward pass simply walks it in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`NodeId`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `id`, or zeros shaped like `like` when no path reached it.
    pub fn get_or_zeros(&self, id: NodeId, like: &Matrix) -> Matrix {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(like.rows(), like.cols()))
    }

    pub fn take(&mut self, id: NodeId) -> Option<Matrix> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

fn accumulate(slot: &mut Option<Matrix>, contribution: Matrix) {
    match slot {
        Some(g) => g.axpy(1.0, &contribution).expect("gradient shape"),
        None => *slot = Some(contribution),
    }
}

fn slot_or_zeros(slot: &mut Option<Matrix>, rows: usize, cols: usize) -> &mut Matrix {
    slot.get_or_insert_with(|| Matrix::zeros(rows, cols))
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    /// Trainable input: gradients flow to it.
    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Constant input: never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).hadamard(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Adds column vector `v` to every column of `a`.
    pub fn add_col(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        let value = self.value(a).add_col(self.value(v))?;
        let rg = self.rg(a) || self.rg(v);
        Ok(self.push(value, Op::AddCol(a, v), rg))
    }

    /// Scales every column of `a` elementwise by column vector `v`.
    pub fn mul_col(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        let value = self.value(a).mul_col(self.value(v))?;
        let rg = self.rg(a) || self.rg(v);
        Ok(self.push(value, Op::MulCol(a, v), rg))
    }

    /// Repeats column vector `v` into `cols` columns.
    pub fn broadcast_cols(&mut self, v: NodeId, cols: usize) -> Result<NodeId> {
        let (rows, c) = self.shape(v);
        if c != 1 || cols == 0 {
            return Err(Error::dim("broadcast_cols", (rows, c), (rows, cols)));
        }
        let value = Matrix::zeros(rows, cols).add_col(self.value(v))?;
        let rg = self.rg(v);
        Ok(self.push(value, Op::BroadcastCols(v), rg))
    }

    /// `1 - a` elementwise.
    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|v| 1.0 - v);
        let rg = self.rg(a);
        self.push(value, Op::OneMinus(a), rg)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let value = self.value(a).scale(s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn activate(&mut self, a: NodeId, kind: Activation) -> NodeId {
        let value = self.value(a).map(|v| kind.eval(v));
        let rg = self.rg(a);
        self.push(value, Op::Activate(a, kind), rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.activate(a, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.activate(a, Activation::Tanh)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mats: Vec<&Matrix> = parts.iter().map(|p| self.value(*p)).collect();
        let value = Matrix::hcat(&mats)?;
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (rows, cols) = self.shape(a);
        if start >= end || end > cols {
            return Err(Error::dim("slice_cols", (rows, cols), (start, end)));
        }
        let value = self.value(a).cols_range(start, end);
        let rg = self.rg(a);
        Ok(self.push(value, Op::SliceCols(a, start), rg))
    }

    /// Batch normalization over the columns of `x` (`n x batch`), scaled by
    /// `gamma` and shifted by `beta` (both `n x 1`).
    ///
    /// With `stats = None` the batch's own mean and biased variance are used
    /// and differentiated through; the computed statistics are returned so
    /// the caller can update running averages. With `Some(stats)` the given
    /// statistics are treated as constants.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        epsilon: f64,
        stats: Option<&BatchStats>,
    ) -> Result<(NodeId, BatchStats)> {
        let (n, batch) = self.shape(x);
        for p in [gamma, beta] {
            if self.shape(p) != (n, 1) {
                return Err(Error::dim("batch_norm", (n, batch), self.shape(p)));
            }
        }
        let batch_stats = stats.is_none();
        if batch_stats && batch < 2 {
            return Err(Error::Config(format!(
                "batch normalization in train mode needs batch >= 2, got {batch}"
            )));
        }
        let xv = self.value(x);
        let stats = match stats {
            Some(s) => {
                if s.mean.len() != n || s.var.len() != n {
                    return Err(Error::dim("batch_norm stats", (n, 1), (s.mean.len(), 1)));
                }
                s.clone()
            }
            None => {
                let mut mean = vec![0.0; n];
                let mut var = vec![0.0; n];
                for r in 0..n {
                    let row = xv.row(r);
                    let m = row.iter().sum::<f64>() / batch as f64;
                    mean[r] = m;
                    var[r] = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / batch as f64;
                }
                BatchStats { mean, var }
            }
        };
        let inv_std: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();
        let mut xhat = xv.clone();
        for r in 0..n {
            let (m, s) = (stats.mean[r], inv_std[r]);
            for v in &mut xhat.data_mut()[r * batch..(r + 1) * batch] {
                *v = (*v - m) * s;
            }
        }
        let value = xhat.mul_col(self.value(gamma))?.add_col(self.value(beta))?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let id = self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        );
        Ok((id, stats))
    }

    /// Records a scalar loss whose value and gradient with respect to
    /// `input` were computed externally.
    pub fn loss(&mut self, input: NodeId, value: f64, grad: Matrix) -> Result<NodeId> {
        if grad.shape() != self.shape(input) {
            return Err(Error::dim("loss", self.shape(input), grad.shape()));
        }
        let rg = self.rg(input);
        Ok(self.push(Matrix::filled(1, 1, value), Op::Loss { input, grad }, rg))
    }

    /// Sum of squared entries, as a `1 x 1` node.
    pub fn sum_squares(&mut self, a: NodeId) -> NodeId {
        let value = Matrix::filled(1, 1, self.value(a).sum_squares());
        let rg = self.rg(a);
        self.push(value, Op::SumSquares(a), rg)
    }

    /// Backward pass from a `1 x 1` output seeded with 1.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        self.check_output(output)?;
        let shape = self.shape(output);
        if shape != (1, 1) {
            return Err(Error::Usage(format!(
                "backward without a seed needs a scalar output, got {}x{}",
                shape.0, shape.1
            )));
        }
        self.backward_seeded(output, Matrix::ones(1, 1))
    }

    fn check_output(&self, output: NodeId) -> Result<()> {
        if output.0 >= self.nodes.len() {
            return Err(Error::Usage(
                "backward called on a node that was never recorded".into(),
            ));
        }
        Ok(())
    }

    /// Backward pass seeded with an arbitrary upstream gradient on `output`.
    pub fn backward_seeded(&self, output: NodeId, seed: Matrix) -> Result<Gradients> {
        self.check_output(output)?;
        if seed.shape() != self.shape(output) {
            return Err(Error::dim("backward seed", self.shape(output), seed.shape()));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let slot = slot_or_zeros(&mut grads[a.0], av.rows(), av.cols());
                    gemm(1.0, g, false, bv, true, 1.0, slot);
                }
                if self.rg(*b) {
                    let slot = slot_or_zeros(&mut grads[b.0], bv.rows(), bv.cols());
                    gemm(1.0, av, true, g, false, 1.0, slot);
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.rg(*b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.rg(*b) {
                    accumulate(&mut grads[b.0], g.scale(-1.0));
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    accumulate(&mut grads[a.0], g.hadamard(self.value(*b)).unwrap());
                }
                if self.rg(*b) {
                    accumulate(&mut grads[b.0], g.hadamard(self.value(*a)).unwrap());
                }
            }
            Op::AddCol(a, v) => {
                if self.rg(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.rg(*v) {
                    accumulate(&mut grads[v.0], g.row_sums());
                }
            }
            Op::MulCol(a, v) => {
                if self.rg(*a) {
                    accumulate(&mut grads[a.0], g.mul_col(self.value(*v)).unwrap());
                }
                if self.rg(*v) {
                    let prod = g.hadamard(self.value(*a)).unwrap();
                    accumulate(&mut grads[v.0], prod.row_sums());
                }
            }
            Op::BroadcastCols(v) => {
                if self.rg(*v) {
                    accumulate(&mut grads[v.0], g.row_sums());
                }
            }
            Op::OneMinus(a) => {
                if self.rg(*a) {
                    accumulate(&mut grads[a.0], g.scale(-1.0));
                }
            }
            Op::Scale(a, s) => {
                if self.rg(*a) {
                    accumulate(&mut grads[a.0], g.scale(*s));
                }
            }
            Op::Activate(a, kind) => {
                if self.rg(*a) {
                    let y = &node.value;
                    let mut d = g.clone();
                    for (dv, yv) in d.data_mut().iter_mut().zip(y.data()) {
                        *dv *= kind.derivative_from_output(*yv);
                    }
                    accumulate(&mut grads[a.0], d);
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.rg(*p) {
                        accumulate(&mut grads[p.0], g.cols_range(start, start + w));
                    }
                    start += w;
                }
            }
            Op::SliceCols(a, start) => {
                if self.rg(*a) {
                    let av = self.value(*a);
                    let slot = slot_or_zeros(&mut grads[a.0], av.rows(), av.cols());
                    let cols = av.cols();
                    for r in 0..g.rows() {
                        let dst = &mut slot.data_mut()[r * cols + start..r * cols + start + g.cols()];
                        for (d, s) in dst.iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let gv = self.value(*gamma);
                if self.rg(*beta) {
                    accumulate(&mut grads[beta.0], g.row_sums());
                }
                if self.rg(*gamma) {
                    accumulate(&mut grads[gamma.0], g.hadamard(xhat).unwrap().row_sums());
                }
                if self.rg(*x) {
                    let (n, batch) = g.shape();
                    let mut dx = Matrix::zeros(n, batch);
                    for r in 0..n {
                        let gamma_r = gv.get(r, 0);
                        let grow = g.row(r);
                        let xrow = xhat.row(r);
                        let out = &mut dx.data_mut()[r * batch..(r + 1) * batch];
                        if *batch_stats {
                            let b = batch as f64;
                            let sum_d: f64 = grow.iter().sum::<f64>() * gamma_r;
                            let sum_dx: f64 = grow
                                .iter()
                                .zip(xrow)
                                .map(|(gi, xi)| gi * xi)
                                .sum::<f64>()
                                * gamma_r;
                            for j in 0..batch {
                                let dxhat = grow[j] * gamma_r;
                                out[j] = inv_std[r] / b * (b * dxhat - sum_d - xrow[j] * sum_dx);
                            }
                        } else {
                            for j in 0..batch {
                                out[j] = grow[j] * gamma_r * inv_std[r];
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
            }
            Op::Loss { input, grad } => {
                if self.rg(*input) {
                    accumulate(&mut grads[input.0], grad.scale(g.get(0, 0)));
                }
            }
            Op::SumSquares(a) => {
                if self.rg(*a) {
                    accumulate(&mut grads[a.0], self.value(*a).scale(2.0 * g.get(0, 0)));
                }
            }
        }
    }
}
