use super::kernels;
use super::Tensor;
use crate::{Error, Result};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Exp,
    Log,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Tanh => "tanh",
            Unary::Sigmoid => "sigmoid",
            Unary::Exp => "exp",
            Unary::Log => "log",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    Softmax(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    SliceRow { src: Var, row: usize },
    Sum(Var),
    Mean(Var),
    Embedding { table: Var, id: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Binary(b, ..) => b.name(),
            Op::Unary(u, _) => u.name(),
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Concat(_) => "concat",
            Op::Stack(_) => "stack_rows",
            Op::SliceRow { .. } => "slice_row",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Embedding { .. } => "embedding",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Records primitive operations in execution order.
///
/// Nodes are appended as operations run, so every record's operands precede
/// it. A node is *tracked* when it is a parameter leaf or depends on one;
/// untracked nodes are plain values and receive no gradient.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, operands: &[Var]) -> Result<Var> {
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(
                op.name(),
                format!("forward produced {} at flat index {pos}", data[pos]),
            ));
        }
        let value = Tensor::new(shape, data)?;
        let tracked = operands.iter().any(|v| self.nodes[v.0].tracked);
        Ok(self.push_unchecked(value, op, tracked))
    }

    /// Matrix product with vector promotion: `[m,k]·[k,n] → [m,n]`,
    /// `[k]·[k,n] → [n]` and `[m,k]·[k] → [m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, n, out_shape) = match (sa, sb) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n, vec![*m, *n]),
            ([k], [k2, n]) if k == k2 => (1, *k, *n, vec![*n]),
            ([m, k], [k2]) if k == k2 => (*m, *k, 1, vec![*m]),
            _ => {
                return Err(Error::dim(format!(
                    "matmul: incompatible shapes {sa:?} and {sb:?}"
                )))
            }
        };
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(out_shape, data, Op::MatMul { a, b, m, k, n }, &[a, b])
    }

    pub fn elementwise(&mut self, a: Var, b: Var, op: Binary) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim(format!(
                "{}: shapes {:?} and {:?} differ",
                op.name(),
                va.shape(),
                vb.shape()
            )));
        }
        let f: fn(f64, f64) -> f64 = match op {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
        };
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = va.shape().to_vec();
        self.push(shape, data, Op::Binary(op, a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Binary::Mul)
    }

    pub fn map_unary(&mut self, a: Var, op: Unary) -> Result<Var> {
        let va = self.value(a);
        if op == Unary::Log {
            if let Some(pos) = va.data().iter().position(|&v| v <= 0.0) {
                return Err(Error::numeric(
                    "log",
                    format!("non-positive input {} at flat index {pos}", va.data()[pos]),
                ));
            }
        }
        let f: fn(f64) -> f64 = match op {
            Unary::Tanh => f64::tanh,
            Unary::Sigmoid => kernels::sigmoid,
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
        };
        let data = va.data().iter().map(|&x| f(x)).collect();
        let shape = va.shape().to_vec();
        self.push(shape, data, Op::Unary(op, a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map_unary(a, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map_unary(a, Unary::Sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map_unary(a, Unary::Exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.map_unary(a, Unary::Log)
    }

    /// Softmax along the last axis of a rank-1 or rank-2 tensor.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        check_rows("softmax", va)?;
        let data = kernels::softmax_rows(va.data(), va.cols());
        let shape = va.shape().to_vec();
        self.push(shape, data, Op::Softmax(a), &[a])
    }

    /// Log-softmax along the last axis, computed as `x - logsumexp(x)`.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        check_rows("log_softmax", va)?;
        let data = kernels::log_softmax_rows(va.data(), va.cols());
        let shape = va.shape().to_vec();
        self.push(shape, data, Op::LogSoftmax(a), &[a])
    }

    /// Joins rank-1 tensors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat: no inputs"));
        }
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 1 {
                return Err(Error::dim(format!(
                    "concat: expected rank-1 inputs, got {:?}",
                    v.shape()
                )));
            }
            data.extend_from_slice(v.data());
        }
        let shape = vec![data.len()];
        self.push(shape, data, Op::Concat(parts.to_vec()), parts)
    }

    /// Stacks equal-length rank-1 tensors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return Err(Error::dim("stack_rows: no inputs"));
        };
        let width = self.value(first).len();
        let mut data = Vec::with_capacity(width * rows.len());
        for &r in rows {
            let v = self.value(r);
            if v.shape() != [width] {
                return Err(Error::dim(format!(
                    "stack_rows: expected rows of shape [{width}], got {:?}",
                    v.shape()
                )));
            }
            data.extend_from_slice(v.data());
        }
        self.push(vec![rows.len(), width], data, Op::Stack(rows.to_vec()), rows)
    }

    /// Row `row` of a matrix, as a rank-1 tensor.
    pub fn slice_row(&mut self, src: Var, row: usize) -> Result<Var> {
        let v = self.value(src);
        let [rows, cols] = *v.shape() else {
            return Err(Error::dim(format!(
                "slice_row: expected a matrix, got {:?}",
                v.shape()
            )));
        };
        if row >= rows {
            return Err(Error::dim(format!(
                "slice_row: row {row} out of range for {rows} rows"
            )));
        }
        let data = v.row(row).to_vec();
        self.push(vec![cols], data, Op::SliceRow { src, row }, &[src])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).data().iter().sum();
        self.push(vec![1], vec![total], Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let mean = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(vec![1], vec![mean], Op::Mean(a), &[a])
    }

    /// Row `id` of an embedding table `[vocab, dim]`.
    pub fn embedding(&mut self, table: Var, id: usize) -> Result<Var> {
        let v = self.value(table);
        let [vocab, dim] = *v.shape() else {
            return Err(Error::dim(format!(
                "embedding: table must be a matrix, got {:?}",
                v.shape()
            )));
        };
        if id >= vocab {
            return Err(Error::usage(format!(
                "embedding: token id {id} out of range for vocabulary of {vocab}"
            )));
        }
        let data = v.row(id).to_vec();
        self.push(vec![dim], data, Op::Embedding { table, id }, &[table])
    }

    /// Reverse pass from a one-element `loss`.
    ///
    /// Every tracked leaf gets a gradient, zero when it does not reach the
    /// loss. Untracked nodes get none.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(Error::usage(format!(
                "backward: loss must be a scalar, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].tracked {
            grads[loss.0] = Some(vec![1.0]);
        }

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let y = node.value.data();
            let mut acc = Accumulator {
                tape: self,
                grads: &mut grads,
                op: node.op.name(),
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul { a, b, m, k, n } => {
                    if acc.wants(*a) {
                        let da = kernels::matmul_grad_lhs(&g, self.value(*b).data(), *m, *k, *n);
                        acc.add(*a, da)?;
                    }
                    if acc.wants(*b) {
                        let db = kernels::matmul_grad_rhs(self.value(*a).data(), &g, *m, *k, *n);
                        acc.add(*b, db)?;
                    }
                }
                Op::Binary(op, a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    match op {
                        Binary::Add => {
                            acc.add(*a, g.clone())?;
                            acc.add(*b, g)?;
                        }
                        Binary::Sub => {
                            acc.add(*a, g.clone())?;
                            acc.add(*b, g.iter().map(|x| -x).collect())?;
                        }
                        Binary::Mul => {
                            if acc.wants(*a) {
                                acc.add(*a, g.iter().zip(vb).map(|(x, y)| x * y).collect())?;
                            }
                            if acc.wants(*b) {
                                acc.add(*b, g.iter().zip(va).map(|(x, y)| x * y).collect())?;
                            }
                        }
                    }
                }
                Op::Unary(op, a) => {
                    let d: Vec<f64> = match op {
                        Unary::Tanh => g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
                        Unary::Sigmoid => g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
                        Unary::Exp => g.iter().zip(y).map(|(g, y)| g * y).collect(),
                        Unary::Log => {
                            let x = self.value(*a).data();
                            g.iter().zip(x).map(|(g, x)| g / x).collect()
                        }
                    };
                    acc.add(*a, d)?;
                }
                Op::Softmax(a) => {
                    let n = node.value.cols();
                    let mut d = Vec::with_capacity(g.len());
                    for (gr, yr) in g.chunks_exact(n).zip(y.chunks_exact(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                        d.extend(gr.iter().zip(yr).map(|(g, y)| y * (g - dot)));
                    }
                    acc.add(*a, d)?;
                }
                Op::LogSoftmax(a) => {
                    let n = node.value.cols();
                    let mut d = Vec::with_capacity(g.len());
                    for (gr, yr) in g.chunks_exact(n).zip(y.chunks_exact(n)) {
                        let total: f64 = gr.iter().sum();
                        d.extend(gr.iter().zip(yr).map(|(g, y)| g - y.exp() * total));
                    }
                    acc.add(*a, d)?;
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        acc.add(p, g[offset..offset + len].to_vec())?;
                        offset += len;
                    }
                }
                Op::Stack(rows) => {
                    let width = node.value.cols();
                    for (r, chunk) in rows.iter().zip(g.chunks_exact(width)) {
                        acc.add(*r, chunk.to_vec())?;
                    }
                }
                Op::SliceRow { src, row } => {
                    if acc.wants(*src) {
                        let sv = self.value(*src);
                        let mut d = vec![0.0; sv.len()];
                        let cols = sv.cols();
                        d[row * cols..(row + 1) * cols].copy_from_slice(&g);
                        acc.add(*src, d)?;
                    }
                }
                Op::Sum(a) => {
                    let len = self.value(*a).len();
                    acc.add(*a, vec![g[0]; len])?;
                }
                Op::Mean(a) => {
                    let len = self.value(*a).len();
                    acc.add(*a, vec![g[0] / len as f64; len])?;
                }
                Op::Embedding { table, id } => {
                    if acc.wants(*table) {
                        let tv = self.value(*table);
                        let mut d = vec![0.0; tv.len()];
                        let dim = tv.cols();
                        d[id * dim..(id + 1) * dim].copy_from_slice(&g);
                        acc.add(*table, d)?;
                    }
                }
            }
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, node.tracked) {
                (Op::Leaf, true) => Some(match g {
                    Some(data) => Tensor::new(node.value.shape().to_vec(), data)
                        .expect("gradient shape matches its leaf"),
                    None => node.value.zeros_like(),
                }),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }
}

struct Accumulator<'a> {
    tape: &'a Tape,
    grads: &'a mut Vec<Option<Vec<f64>>>,
    op: &'static str,
}

impl Accumulator<'_> {
    fn wants(&self, v: Var) -> bool {
        self.tape.nodes[v.0].tracked
    }

    fn add(&mut self, v: Var, contribution: Vec<f64>) -> Result<()> {
        if !self.wants(v) {
            return Ok(());
        }
        if let Some(pos) = contribution.iter().position(|x| !x.is_finite()) {
            return Err(Error::numeric(
                format!("backward:{}", self.op),
                format!("gradient {} at flat index {pos}", contribution[pos]),
            ));
        }
        match &mut self.grads[v.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contribution) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
        Ok(())
    }
}

fn check_rows(op: &str, v: &Tensor) -> Result<()> {
    if v.rank() > 2 {
        return Err(Error::dim(format!(
            "{op}: expected rank 1 or 2, got {:?}",
            v.shape()
        )));
    }
    Ok(())
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a tracked leaf; `None` for constants and interior nodes.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of a tracked leaf.
    ///
    /// # Panics
    /// If `v` is not a tracked leaf of the tape that produced these gradients.
    pub fn wrt(&self, v: Var) -> &Tensor {
        self.get(v)
            .unwrap_or_else(|| panic!("no gradient recorded for node {}", v.0))
    }
}
