use super::kernels;
use super::tensor::Tensor;
use super::AutodiffError;

/// Handle to a value recorded on a [`Tape`]. Only meaningful for the tape
/// that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Exp,
    Log,
    Tanh,
    Relu,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

/// How the right operand of a binary op is expanded to the left operand's
/// shape. The only supported broadcasts: scalar, and a row vector matching
/// the left operand's trailing dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    None,
    Scalar,
    Row,
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// a @ b
    Matmul { a: ValueId, b: ValueId },
    /// a @ b^T
    MatmulNt { a: ValueId, b: ValueId },
    Unary { kind: UnaryKind, x: ValueId },
    Clamp { x: ValueId, lo: f64, hi: f64 },
    Binary { kind: BinaryKind, a: ValueId, b: ValueId, broadcast: Broadcast },
    /// `argmax` holds, per output element, the flat input index the max
    /// gradient routes to (first occurrence on ties). Empty for sum/mean.
    Reduce { kind: ReduceKind, x: ValueId, axis: Option<usize>, argmax: Vec<usize> },
    LogSumExp { x: ValueId, axis: usize },
    /// Row-wise L2 normalization with norm floor 1e-12.
    NormalizeRows { x: ValueId },
    /// Stack two tensors along axis 0.
    ConcatRows { a: ValueId, b: ValueId },
    /// Same values, different shape.
    Reshape { x: ValueId },
}

struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    needs_grad: bool,
    op: Op,
}

/// Ordered record of differentiable operations for one forward pass.
///
/// Values are appended in topological order, so a single reverse sweep in
/// [`Tape::backward`] visits every node exactly once. A tape is built for a
/// single training step and dropped after the gradients are harvested.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

pub(crate) const NORM_FLOOR: f64 = 1e-12;

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

    /// Record a tensor as a leaf. Gradients are tracked iff the tensor has
    /// `requires_grad` set.
    pub fn leaf(&mut self, tensor: &Tensor) -> ValueId {
        self.push(
            tensor.shape().to_vec(),
            tensor.values().to_vec(),
            tensor.requires_grad(),
            Op::Leaf,
        )
    }

    /// Record raw values as a non-differentiable leaf.
    pub fn constant(&mut self, shape: &[usize], values: Vec<f64>) -> Result<ValueId, AutodiffError> {
        let t = Tensor::new(shape, values)?;
        Ok(self.push(t.shape().to_vec(), t.values().to_vec(), false, Op::Leaf))
    }

    pub fn constant_scalar(&mut self, value: f64) -> Result<ValueId, AutodiffError> {
        self.constant(&[], vec![value])
    }

    pub fn shape(&self, id: ValueId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn values(&self, id: ValueId) -> &[f64] {
        &self.nodes[id.0].values
    }

    /// The single value of a scalar node.
    pub fn scalar_value(&self, id: ValueId) -> Result<f64, AutodiffError> {
        let node = &self.nodes[id.0];
        if node.values.len() != 1 {
            return Err(AutodiffError::NotScalar(node.values.len()));
        }
        Ok(node.values[0])
    }

    /// Gradient of the last backward target w.r.t. this node, if tracked.
    pub fn grad(&self, id: ValueId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Copy the node's value out as an owned tensor (no gradient attached).
    pub fn to_tensor(&self, id: ValueId) -> Tensor {
        let node = &self.nodes[id.0];
        Tensor::new(&node.shape, node.values.clone()).expect("tape nodes hold valid tensors")
    }

    // ── forward ops ─────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, AutodiffError> {
        let (m, k) = self.as_matrix_dims(a)?;
        let (k2, n) = self.as_matrix_dims(b)?;
        if k != k2 {
            return Err(AutodiffError::ShapeMismatch(format!(
                "matmul inner dims differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let values = kernels::matmul(self.values(a), self.values(b), m, k, n);
        self.push_checked(vec![m, n], values, self.any_grad(&[a, b]), Op::Matmul { a, b })
    }

    /// a @ b^T with a: [m,k], b: [n,k].
    pub fn matmul_nt(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, AutodiffError> {
        let (m, k) = self.as_matrix_dims(a)?;
        let (n, k2) = self.as_matrix_dims(b)?;
        if k != k2 {
            return Err(AutodiffError::ShapeMismatch(format!(
                "matmul_nt trailing dims differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let values = kernels::matmul_nt(self.values(a), self.values(b), m, k, n);
        self.push_checked(vec![m, n], values, self.any_grad(&[a, b]), Op::MatmulNt { a, b })
    }

    pub fn unary(&mut self, kind: UnaryKind, x: ValueId) -> Result<ValueId, AutodiffError> {
        if kind == UnaryKind::Log && self.values(x).iter().any(|&v| v <= 0.0) {
            return Err(AutodiffError::DomainError("log of a non-positive value"));
        }
        let values: Vec<f64> = self
            .values(x)
            .iter()
            .map(|&v| match kind {
                UnaryKind::Exp => v.exp(),
                UnaryKind::Log => v.ln(),
                UnaryKind::Tanh => v.tanh(),
                UnaryKind::Relu => v.max(0.0),
                UnaryKind::Neg => -v,
            })
            .collect();
        let shape = self.shape(x).to_vec();
        self.push_checked(shape, values, self.any_grad(&[x]), Op::Unary { kind, x })
    }

    pub fn exp(&mut self, x: ValueId) -> Result<ValueId, AutodiffError> {
        self.unary(UnaryKind::Exp, x)
    }

    pub fn log(&mut self, x: ValueId) -> Result<ValueId, AutodiffError> {
        self.unary(UnaryKind::Log, x)
    }

    pub fn relu(&mut self, x: ValueId) -> Result<ValueId, AutodiffError> {
        self.unary(UnaryKind::Relu, x)
    }

    pub fn neg(&mut self, x: ValueId) -> Result<ValueId, AutodiffError> {
        self.unary(UnaryKind::Neg, x)
    }

    /// Elementwise clamp to `[lo, hi]`; gradient passes through inside the
    /// interval and is zero outside.
    pub fn clamp(&mut self, x: ValueId, lo: f64, hi: f64) -> Result<ValueId, AutodiffError> {
        let values: Vec<f64> = self.values(x).iter().map(|&v| v.clamp(lo, hi)).collect();
        let shape = self.shape(x).to_vec();
        self.push_checked(shape, values, self.any_grad(&[x]), Op::Clamp { x, lo, hi })
    }

    pub fn binary(&mut self, kind: BinaryKind, a: ValueId, b: ValueId) -> Result<ValueId, AutodiffError> {
        let broadcast = self.resolve_broadcast(a, b)?;
        if kind == BinaryKind::Div && self.values(b).iter().any(|&v| v == 0.0) {
            return Err(AutodiffError::DivisionByZero);
        }
        let av = self.values(a);
        let bv = self.values(b);
        let n_cols = self.shape(a).last().copied().unwrap_or(1);
        let values: Vec<f64> = av
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = match broadcast {
                    Broadcast::None => bv[i],
                    Broadcast::Scalar => bv[0],
                    Broadcast::Row => bv[i % n_cols],
                };
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                    BinaryKind::Div => x / y,
                }
            })
            .collect();
        let shape = self.shape(a).to_vec();
        self.push_checked(shape, values, self.any_grad(&[a, b]), Op::Binary { kind, a, b, broadcast })
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, AutodiffError> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, AutodiffError> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, AutodiffError> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, AutodiffError> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn add_scalar(&mut self, x: ValueId, c: f64) -> Result<ValueId, AutodiffError> {
        let c = self.constant_scalar(c)?;
        self.add(x, c)
    }

    pub fn sub_scalar(&mut self, x: ValueId, c: f64) -> Result<ValueId, AutodiffError> {
        let c = self.constant_scalar(c)?;
        self.sub(x, c)
    }

    pub fn mul_scalar(&mut self, x: ValueId, c: f64) -> Result<ValueId, AutodiffError> {
        let c = self.constant_scalar(c)?;
        self.mul(x, c)
    }

    pub fn reduce(&mut self, kind: ReduceKind, x: ValueId, axis: Option<usize>) -> Result<ValueId, AutodiffError> {
        let rank = self.shape(x).len();
        if let Some(ax) = axis {
            if ax >= rank {
                return Err(AutodiffError::InvalidAxis { axis: ax, rank });
            }
        }
        let (out_shape, groups) = self.reduce_groups(x, axis);
        let xv = self.values(x);
        let mut values = Vec::with_capacity(groups.len());
        let mut argmax = Vec::new();
        for group in &groups {
            match kind {
                ReduceKind::Sum => values.push(group.iter().map(|&i| xv[i]).sum()),
                ReduceKind::Mean => {
                    let s: f64 = group.iter().map(|&i| xv[i]).sum();
                    values.push(s / group.len() as f64);
                }
                ReduceKind::Max => {
                    let mut best = group[0];
                    for &i in &group[1..] {
                        if xv[i] > xv[best] {
                            best = i;
                        }
                    }
                    values.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        self.push_checked(out_shape, values, self.any_grad(&[x]), Op::Reduce { kind, x, axis, argmax })
    }

    pub fn sum_all(&mut self, x: ValueId) -> Result<ValueId, AutodiffError> {
        self.reduce(ReduceKind::Sum, x, None)
    }

    pub fn mean_all(&mut self, x: ValueId) -> Result<ValueId, AutodiffError> {
        self.reduce(ReduceKind::Mean, x, None)
    }

    pub fn sum_axis(&mut self, x: ValueId, axis: usize) -> Result<ValueId, AutodiffError> {
        self.reduce(ReduceKind::Sum, x, Some(axis))
    }

    pub fn mean_axis(&mut self, x: ValueId, axis: usize) -> Result<ValueId, AutodiffError> {
        self.reduce(ReduceKind::Mean, x, Some(axis))
    }

    /// Shift-stabilized log-sum-exp along `axis`:
    /// `lse(x) = m + log Σ exp(x − m)` with `m` the per-group max.
    pub fn log_sum_exp(&mut self, x: ValueId, axis: usize) -> Result<ValueId, AutodiffError> {
        let rank = self.shape(x).len();
        if axis >= rank {
            return Err(AutodiffError::InvalidAxis { axis, rank });
        }
        let (out_shape, groups) = self.reduce_groups(x, Some(axis));
        let xv = self.values(x);
        let mut values = Vec::with_capacity(groups.len());
        for group in &groups {
            let m = group.iter().map(|&i| xv[i]).fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = group.iter().map(|&i| (xv[i] - m).exp()).sum();
            values.push(m + s.ln());
        }
        self.push_checked(out_shape, values, self.any_grad(&[x]), Op::LogSumExp { x, axis })
    }

    /// L2-normalize each row of a rank-2 tensor; norms are floored at 1e-12
    /// so zero rows map to zero rows.
    pub fn normalize_rows(&mut self, x: ValueId) -> Result<ValueId, AutodiffError> {
        let (rows, cols) = self.as_matrix_dims(x)?;
        let xv = self.values(x);
        let mut values = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
            for (o, &v) in values[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *o = v / norm;
            }
        }
        self.push_checked(vec![rows, cols], values, self.any_grad(&[x]), Op::NormalizeRows { x })
    }

    /// Stack `a` over `b` along axis 0. Both must be rank-1, or rank-2 with
    /// equal trailing dimension.
    pub fn concat_rows(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, AutodiffError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out_shape = match (sa.as_slice(), sb.as_slice()) {
            ([la], [lb]) => vec![la + lb],
            ([ra, ca], [rb, cb]) if ca == cb => vec![ra + rb, *ca],
            _ => {
                return Err(AutodiffError::ShapeMismatch(format!(
                    "cannot concat {:?} with {:?}",
                    sa, sb
                )))
            }
        };
        let mut values = self.values(a).to_vec();
        values.extend_from_slice(self.values(b));
        self.push_checked(out_shape, values, self.any_grad(&[a, b]), Op::ConcatRows { a, b })
    }

    pub fn reshape(&mut self, x: ValueId, shape: &[usize]) -> Result<ValueId, AutodiffError> {
        let numel: usize = shape.iter().product();
        if numel != self.values(x).len() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "cannot reshape {} values to {:?}",
                self.values(x).len(),
                shape
            )));
        }
        let values = self.values(x).to_vec();
        self.push_checked(shape.to_vec(), values, self.any_grad(&[x]), Op::Reshape { x })
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Seeds the loss gradient with 1 and
    /// accumulates into every gradient-tracked node; results are then
    /// available through [`Tape::grad`].
    pub fn backward(&mut self, loss: ValueId) -> Result<(), AutodiffError> {
        if loss.0 >= self.nodes.len() {
            return Err(AutodiffError::DetachedLoss);
        }
        if self.nodes[loss.0].values.len() != 1 {
            return Err(AutodiffError::NotScalar(self.nodes[loss.0].values.len()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(out_grad) = grads[idx].take() else { continue };
            self.backward_node(idx, &out_grad, &mut grads);
            grads[idx] = Some(out_grad);
        }
        self.grads = grads;
        Ok(())
    }

    fn backward_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, k) = self.as_matrix_dims(*a).expect("validated at forward");
                let n = node.shape[1];
                if self.needs(*a) {
                    let da = self.grad_buf(grads, *a);
                    kernels::matmul_nt_acc(g, &self.nodes[b.0].values, da, m, n, k);
                }
                if self.needs(*b) {
                    let db = self.grad_buf(grads, *b);
                    kernels::matmul_tn_acc(&self.nodes[a.0].values, g, db, m, k, n);
                }
            }
            Op::MatmulNt { a, b } => {
                // c = a @ b^T with a: [m,k], b: [n,k], c: [m,n]
                let m = node.shape[0];
                let n = node.shape[1];
                let (_, k) = self.as_matrix_dims(*a).expect("validated at forward");
                if self.needs(*a) {
                    let da = self.grad_buf(grads, *a);
                    kernels::matmul_acc(g, &self.nodes[b.0].values, da, m, n, k);
                }
                if self.needs(*b) {
                    let db = self.grad_buf(grads, *b);
                    kernels::matmul_tn_acc(g, &self.nodes[a.0].values, db, m, n, k);
                }
            }
            Op::Unary { kind, x } => {
                if self.needs(*x) {
                    let xv = &self.nodes[x.0].values;
                    let yv = &node.values;
                    let dx = self.grad_buf(grads, *x);
                    for i in 0..g.len() {
                        dx[i] += match kind {
                            UnaryKind::Exp => g[i] * yv[i],
                            UnaryKind::Log => g[i] / xv[i],
                            UnaryKind::Tanh => g[i] * (1.0 - yv[i] * yv[i]),
                            UnaryKind::Relu => {
                                if xv[i] > 0.0 {
                                    g[i]
                                } else {
                                    0.0
                                }
                            }
                            UnaryKind::Neg => -g[i],
                        };
                    }
                }
            }
            Op::Clamp { x, lo, hi } => {
                if self.needs(*x) {
                    let xv = &self.nodes[x.0].values;
                    let dx = self.grad_buf(grads, *x);
                    for i in 0..g.len() {
                        if xv[i] >= *lo && xv[i] <= *hi {
                            dx[i] += g[i];
                        }
                    }
                }
            }
            Op::Binary { kind, a, b, broadcast } => {
                let av = &self.nodes[a.0].values;
                let bv = &self.nodes[b.0].values;
                let n_cols = self.nodes[a.0].shape.last().copied().unwrap_or(1);
                let expand = |i: usize| match broadcast {
                    Broadcast::None => i,
                    Broadcast::Scalar => 0,
                    Broadcast::Row => i % n_cols,
                };
                if self.needs(*a) {
                    let da = self.grad_buf(grads, *a);
                    for i in 0..g.len() {
                        da[i] += match kind {
                            BinaryKind::Add | BinaryKind::Sub => g[i],
                            BinaryKind::Mul => g[i] * bv[expand(i)],
                            BinaryKind::Div => g[i] / bv[expand(i)],
                        };
                    }
                }
                if self.needs(*b) {
                    let db = self.grad_buf(grads, *b);
                    for i in 0..g.len() {
                        let j = expand(i);
                        db[j] += match kind {
                            BinaryKind::Add => g[i],
                            BinaryKind::Sub => -g[i],
                            BinaryKind::Mul => g[i] * av[i],
                            BinaryKind::Div => -g[i] * av[i] / (bv[j] * bv[j]),
                        };
                    }
                }
            }
            Op::Reduce { kind, x, axis, argmax } => {
                if self.needs(*x) {
                    let (_, groups) = self.reduce_groups(*x, *axis);
                    let dx = self.grad_buf(grads, *x);
                    match kind {
                        ReduceKind::Sum => {
                            for (o, group) in groups.iter().enumerate() {
                                for &i in group {
                                    dx[i] += g[o];
                                }
                            }
                        }
                        ReduceKind::Mean => {
                            for (o, group) in groups.iter().enumerate() {
                                let scale = 1.0 / group.len() as f64;
                                for &i in group {
                                    dx[i] += g[o] * scale;
                                }
                            }
                        }
                        ReduceKind::Max => {
                            for (o, &flat) in argmax.iter().enumerate() {
                                dx[flat] += g[o];
                            }
                        }
                    }
                }
            }
            Op::LogSumExp { x, axis } => {
                if self.needs(*x) {
                    let (_, groups) = self.reduce_groups(*x, Some(*axis));
                    let xv = &self.nodes[x.0].values;
                    let yv = &node.values;
                    let dx = self.grad_buf(grads, *x);
                    for (o, group) in groups.iter().enumerate() {
                        for &i in group {
                            dx[i] += g[o] * (xv[i] - yv[o]).exp();
                        }
                    }
                }
            }
            Op::NormalizeRows { x } => {
                if self.needs(*x) {
                    let (rows, cols) = (node.shape[0], node.shape[1]);
                    let xv = &self.nodes[x.0].values;
                    let yv = &node.values;
                    let dx = self.grad_buf(grads, *x);
                    for r in 0..rows {
                        let xr = &xv[r * cols..(r + 1) * cols];
                        let yr = &yv[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let m = norm.max(NORM_FLOOR);
                        if norm > NORM_FLOOR {
                            let dot: f64 = yr.iter().zip(gr).map(|(y, gg)| y * gg).sum();
                            for i in 0..cols {
                                dx[r * cols + i] += (gr[i] - yr[i] * dot) / m;
                            }
                        } else {
                            // Floored branch: the denominator is the constant floor.
                            for i in 0..cols {
                                dx[r * cols + i] += gr[i] / m;
                            }
                        }
                    }
                }
            }
            Op::ConcatRows { a, b } => {
                let split = self.nodes[a.0].values.len();
                if self.needs(*a) {
                    let da = self.grad_buf(grads, *a);
                    for (d, &gv) in da.iter_mut().zip(&g[..split]) {
                        *d += gv;
                    }
                }
                if self.needs(*b) {
                    let db = self.grad_buf(grads, *b);
                    for (d, &gv) in db.iter_mut().zip(&g[split..]) {
                        *d += gv;
                    }
                }
            }
            Op::Reshape { x } => {
                if self.needs(*x) {
                    let dx = self.grad_buf(grads, *x);
                    for (d, &gv) in dx.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
            }
        }
    }

    // ── helpers ─────────────────────────────────────────────────────────

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, needs_grad: bool, op: Op) -> ValueId {
        let id = ValueId(self.nodes.len());
        self.nodes.push(Node { shape, values, needs_grad, op });
        id
    }

    /// Push an op output, rejecting non-finite results at the op boundary.
    fn push_checked(
        &mut self,
        shape: Vec<usize>,
        values: Vec<f64>,
        needs_grad: bool,
        op: Op,
    ) -> Result<ValueId, AutodiffError> {
        if !values.iter().all(|v| v.is_finite()) {
            return Err(AutodiffError::NonFiniteValue("op output"));
        }
        Ok(self.push(shape, values, needs_grad, op))
    }

    fn needs(&self, id: ValueId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn any_grad(&self, ids: &[ValueId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    /// Borrow (allocating on first touch) the gradient accumulator for `id`.
    fn grad_buf<'g>(&self, grads: &'g mut [Option<Vec<f64>>], id: ValueId) -> &'g mut Vec<f64> {
        grads[id.0].get_or_insert_with(|| vec![0.0; self.nodes[id.0].values.len()])
    }

    /// Decide how `b` expands to `a`'s shape: equal shapes, a single scalar,
    /// or a row vector matching `a`'s trailing dimension.
    fn resolve_broadcast(&self, a: ValueId, b: ValueId) -> Result<Broadcast, AutodiffError> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb {
            return Ok(Broadcast::None);
        }
        if self.values(b).len() == 1 {
            return Ok(Broadcast::Scalar);
        }
        if sa.len() == 2 && sb.len() == 1 && sb[0] == sa[1] {
            return Ok(Broadcast::Row);
        }
        Err(AutodiffError::ShapeMismatch(format!(
            "binary op shapes {:?} and {:?} are incompatible",
            sa, sb
        )))
    }

    /// Interpret rank-1 `[n]` as `[1, n]` and rank-2 as-is.
    fn as_matrix_dims(&self, id: ValueId) -> Result<(usize, usize), AutodiffError> {
        match *self.shape(id) {
            [n] => Ok((1, n)),
            [m, n] => Ok((m, n)),
            ref s => Err(AutodiffError::ShapeMismatch(format!(
                "expected a vector or matrix, got shape {:?}",
                s
            ))),
        }
    }

    /// Flat-index groups for a reduction: one group per output element.
    fn reduce_groups(&self, x: ValueId, axis: Option<usize>) -> (Vec<usize>, Vec<Vec<usize>>) {
        let shape = self.shape(x);
        let numel = self.values(x).len();
        match (axis, shape.len()) {
            (None, _) => (vec![], vec![(0..numel).collect()]),
            (Some(_), 0) => (vec![], vec![vec![0]]),
            (Some(_), 1) => (vec![], vec![(0..numel).collect()]),
            (Some(0), 2) => {
                let (rows, cols) = (shape[0], shape[1]);
                let groups = (0..cols)
                    .map(|c| (0..rows).map(|r| r * cols + c).collect())
                    .collect();
                (vec![cols], groups)
            }
            (Some(1), 2) => {
                let (rows, cols) = (shape[0], shape[1]);
                let groups = (0..rows)
                    .map(|r| (r * cols..(r + 1) * cols).collect())
                    .collect();
                (vec![rows], groups)
            }
            _ => unreachable!("axis validated against rank"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(shape: &[usize], values: &[f64]) -> Tensor {
        Tensor::new(shape, values.to_vec()).unwrap()
    }

    fn param(shape: &[usize], values: &[f64]) -> Tensor {
        Tensor::with_grad(shape, values.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let i2 = tape.leaf(&tensor(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = tape.leaf(&tensor(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let out = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.values(out), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_hand_dot_product() {
        let mut tape = Tape::new();
        let a = tape.leaf(&tensor(&[1, 2], &[1.0, 2.0]));
        let b = tape.leaf(&tensor(&[2, 1], &[3.0, 4.0]));
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.values(out), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.leaf(&tensor(&[2, 3], &[0.0; 6]));
        let b = tape.leaf(&tensor(&[2, 3], &[0.0; 6]));
        assert!(matches!(tape.matmul(a, b), Err(AutodiffError::ShapeMismatch(_))));
    }

    #[test]
    fn matmul_backward_rules() {
        // loss = sum(a @ b): da = ones @ b^T, db = a^T @ ones
        let mut tape = Tape::new();
        let a = tape.leaf(&param(&[1, 2], &[1.0, 2.0]));
        let b = tape.leaf(&param(&[2, 1], &[3.0, 4.0]));
        let c = tape.matmul(a, b).unwrap();
        let loss = tape.sum_all(c).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[3.0, 4.0]);
        assert_eq!(tape.grad(b).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn unary_relu_and_exp() {
        let mut tape = Tape::new();
        let x = tape.leaf(&tensor(&[3], &[-1.0, 0.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.values(y), &[0.0, 0.0, 2.0]);
        let z = tape.leaf(&tensor(&[1], &[0.0]));
        let e = tape.exp(z).unwrap();
        assert_eq!(tape.values(e), &[1.0]);
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut tape = Tape::new();
        let x = tape.leaf(&tensor(&[1], &[-1.0]));
        assert!(matches!(tape.log(x), Err(AutodiffError::DomainError(_))));
    }

    #[test]
    fn binary_add_and_row_broadcast() {
        let mut tape = Tape::new();
        let a = tape.leaf(&tensor(&[2], &[1.0, 2.0]));
        let b = tape.leaf(&tensor(&[2], &[3.0, 4.0]));
        let s = tape.add(a, b).unwrap();
        assert_eq!(tape.values(s), &[4.0, 6.0]);

        let m = tape.leaf(&tensor(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let row = tape.leaf(&tensor(&[2], &[10.0, 100.0]));
        let p = tape.mul(m, row).unwrap();
        assert_eq!(tape.values(p), &[10.0, 200.0, 30.0, 400.0]);
    }

    #[test]
    fn binary_div_by_zero() {
        let mut tape = Tape::new();
        let a = tape.leaf(&tensor(&[1], &[1.0]));
        let b = tape.leaf(&tensor(&[1], &[0.0]));
        assert!(matches!(tape.div(a, b), Err(AutodiffError::DivisionByZero)));
    }

    #[test]
    fn binary_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.leaf(&tensor(&[2], &[1.0, 2.0]));
        let b = tape.leaf(&tensor(&[3], &[1.0, 2.0, 3.0]));
        assert!(matches!(tape.add(a, b), Err(AutodiffError::ShapeMismatch(_))));
    }

    #[test]
    fn row_broadcast_gradient_sum_reduces() {
        // loss = sum(m * row): d(row)[j] = sum_i m[i,j]
        let mut tape = Tape::new();
        let m = tape.leaf(&tensor(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let row = tape.leaf(&param(&[2], &[1.0, 1.0]));
        let p = tape.mul(m, row).unwrap();
        let loss = tape.sum_all(p).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(row).unwrap(), &[4.0, 6.0]);
    }

    #[test]
    fn reduce_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(&tensor(&[3], &[1.0, 2.0, 3.0]));
        let s = tape.sum_all(x).unwrap();
        assert_eq!(tape.scalar_value(s).unwrap(), 6.0);

        let m = tape.leaf(&tensor(&[2, 2], &[1.0, 3.0, 5.0, 7.0]));
        let mean0 = tape.mean_axis(m, 0).unwrap();
        assert_eq!(tape.values(mean0), &[3.0, 5.0]);
    }

    #[test]
    fn reduce_invalid_axis() {
        let mut tape = Tape::new();
        let x = tape.leaf(&tensor(&[3], &[1.0, 2.0, 3.0]));
        assert!(matches!(
            tape.reduce(ReduceKind::Sum, x, Some(1)),
            Err(AutodiffError::InvalidAxis { .. })
        ));
    }

    #[test]
    fn max_gradient_routes_to_first_argmax() {
        let mut tape = Tape::new();
        let x = tape.leaf(&param(&[2], &[2.0, 2.0]));
        let m = tape.reduce(ReduceKind::Max, x, None).unwrap();
        tape.backward(m).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn log_sum_exp_uniform_and_shifted() {
        let mut tape = Tape::new();
        let x = tape.leaf(&tensor(&[2], &[0.0, 0.0]));
        let l = tape.log_sum_exp(x, 0).unwrap();
        assert!((tape.scalar_value(l).unwrap() - 2.0_f64.ln()).abs() < 1e-12);

        let big = tape.leaf(&tensor(&[2], &[1000.0, 1000.0]));
        let lb = tape.log_sum_exp(big, 0).unwrap();
        assert!((tape.scalar_value(lb).unwrap() - (1000.0 + 2.0_f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn log_sum_exp_direct_summation() {
        // lse([1,2,3]) computed by direct evaluation.
        let expected = (1.0_f64.exp() + 2.0_f64.exp() + 3.0_f64.exp()).ln();
        let mut tape = Tape::new();
        let x = tape.leaf(&tensor(&[3], &[1.0, 2.0, 3.0]));
        let l = tape.log_sum_exp(x, 0).unwrap();
        assert!((tape.scalar_value(l).unwrap() - expected).abs() < 1e-12);
        assert!((tape.scalar_value(l).unwrap() - 3.407606).abs() < 1e-6);
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(&param(&[3], &[5.0, 6.0, 7.0]));
        let loss = tape.sum_all(x).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_square_chain() {
        // loss = sum(x*x), x = [2] -> grad 2x = [4]
        let mut tape = Tape::new();
        let x = tape.leaf(&param(&[1], &[2.0]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(&param(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(AutodiffError::NotScalar(2))));
    }

    #[test]
    fn backward_rejects_detached_loss() {
        let mut tape = Tape::new();
        assert!(matches!(tape.backward(ValueId(3)), Err(AutodiffError::DetachedLoss)));
    }

    #[test]
    fn fanout_accumulates() {
        // loss = sum(x) + sum(x) -> grad 2 per element
        let mut tape = Tape::new();
        let x = tape.leaf(&param(&[2], &[1.0, 2.0]));
        let s1 = tape.sum_all(x).unwrap();
        let s2 = tape.sum_all(x).unwrap();
        let loss = tape.add(s1, s2).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(&tensor(&[2], &[1.0, 2.0]));
        let loss = tape.sum_all(x).unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn clamp_saturates_and_masks_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(&param(&[3], &[-20.0, 0.5, 50.0]));
        let y = tape.clamp(x, -10.0, 10.0).unwrap();
        assert_eq!(tape.values(y), &[-10.0, 0.5, 10.0]);
        let loss = tape.sum_all(y).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn normalize_rows_unit_norm() {
        let mut tape = Tape::new();
        let x = tape.leaf(&tensor(&[2, 2], &[3.0, 4.0, 0.0, 0.0]));
        let y = tape.normalize_rows(x).unwrap();
        let v = tape.values(y);
        assert!((v[0] - 0.6).abs() < 1e-15);
        assert!((v[1] - 0.8).abs() < 1e-15);
        // Zero rows stay zero under the norm floor.
        assert_eq!(&v[2..], &[0.0, 0.0]);
    }

    #[test]
    fn concat_rows_stacks() {
        let mut tape = Tape::new();
        let a = tape.leaf(&tensor(&[1, 2], &[1.0, 2.0]));
        let b = tape.leaf(&tensor(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = tape.concat_rows(a, b).unwrap();
        assert_eq!(tape.shape(c), &[3, 2]);
        assert_eq!(tape.values(c), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn op_boundary_rejects_overflow() {
        let mut tape = Tape::new();
        let x = tape.leaf(&tensor(&[1], &[800.0]));
        assert!(matches!(tape.exp(x), Err(AutodiffError::NonFiniteValue(_))));
    }
}
