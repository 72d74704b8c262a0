//! Wengert-list reverse-mode engine.
//!
//! A [`Tape`] owns every node produced during a forward pass; a [`Tensor`]
//! is a cheap handle (tape + node id + cached shape) into that list. Node
//! ids grow in execution order and an operation's inputs always precede it,
//! so walking ids in reverse is a valid reverse-topological sweep.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::Real;

/// Number of elements a shape describes. The empty shape is a scalar.
pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

// ── Recorded operations ─────────────────────────────────────────────────

/// One recorded operation. Fields cache whatever the backward rule needs
/// beyond the node values themselves.
pub(crate) enum Op {
    Leaf,
    Add {
        a: usize,
        b: usize,
    },
    AddBias {
        x: usize,
        bias: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        c: Real,
    },
    Matmul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        x: usize,
        rows: usize,
        cols: usize,
    },
    Relu {
        x: usize,
    },
    SoftmaxRows {
        x: usize,
        rows: usize,
        cols: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        rows: usize,
        cols: usize,
        x_hat: Vec<Real>,
        inv_std: Vec<Real>,
    },
    MeanRows {
        x: usize,
        rows: usize,
        cols: usize,
    },
    Sum {
        x: usize,
    },
    SliceRows {
        x: usize,
        start: usize,
        rows_out: usize,
        cols: usize,
    },
    SliceCols {
        x: usize,
        start: usize,
        cols_out: usize,
        rows: usize,
        cols_in: usize,
    },
    /// Rank-1 concatenation; parts are (node id, length).
    Concat {
        parts: Vec<(usize, usize)>,
    },
    /// Column-wise concatenation of same-height matrices; parts are
    /// (node id, width).
    ConcatCols {
        parts: Vec<(usize, usize)>,
        rows: usize,
    },
    GatherRows {
        table: usize,
        ids: Vec<usize>,
        cols: usize,
    },
    CrossEntropy {
        logits: usize,
        rows: usize,
        cols: usize,
        targets: Vec<usize>,
        smoothing: Real,
        pad: usize,
        probs: Vec<Real>,
        counted: usize,
    },
    Reshape {
        x: usize,
    },
}

pub(crate) struct Node {
    pub data: Vec<Real>,
    pub grad: Option<Vec<Real>>,
    pub requires_grad: bool,
    pub op: Op,
}

#[derive(Default)]
pub(crate) struct TapeInner {
    pub nodes: Vec<Node>,
}

// ── Tape ────────────────────────────────────────────────────────────────

/// Shared, single-threaded operation record. Clones are handles to the
/// same underlying list.
#[derive(Clone, Default)]
pub struct Tape {
    pub(crate) inner: Rc<RefCell<TapeInner>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record a non-differentiable input (masks, positional tables, ...).
    pub fn constant(&self, data: Vec<Real>, shape: &[usize]) -> Result<Tensor> {
        self.insert(data, shape, false)
    }

    /// Record a differentiable input (parameters, probed activations).
    pub fn leaf(&self, data: Vec<Real>, shape: &[usize]) -> Result<Tensor> {
        self.insert(data, shape, true)
    }

    /// Scalar convenience wrapper around [`Tape::constant`].
    pub fn scalar_constant(&self, value: Real) -> Tensor {
        self.insert(vec![value], &[], false)
            .expect("scalar shape always matches")
    }

    fn insert(&self, data: Vec<Real>, shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        let expected = numel(shape);
        if data.len() != expected {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected,
                got: data.len(),
            });
        }
        let id = self.push(Node {
            data,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Ok(Tensor {
            tape: self.clone(),
            id,
            shape: shape.to_vec(),
        })
    }

    pub(crate) fn push(&self, node: Node) -> usize {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(node);
        inner.nodes.len() - 1
    }

    /// Drop every accumulated gradient on the tape.
    pub fn clear_grads(&self) {
        for node in self.inner.borrow_mut().nodes.iter_mut() {
            node.grad = None;
        }
    }
}

// ── Tensor handle ───────────────────────────────────────────────────────

/// Handle to one tape node. Cloning shares the node.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) tape: Tape,
    pub(crate) id: usize,
    pub(crate) shape: Vec<usize>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape)
            .finish()
    }
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Stable identity of the underlying tape node. Two handles with
    /// the same id alias the same values and gradient slot.
    pub fn node_id(&self) -> usize {
        self.id
    }

    pub fn numel(&self) -> usize {
        numel(&self.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    /// Copy of the node's values.
    pub fn value(&self) -> Vec<Real> {
        self.tape.inner.borrow().nodes[self.id].data.clone()
    }

    /// Borrow the node's values without copying.
    pub fn with_data<T>(&self, f: impl FnOnce(&[Real]) -> T) -> T {
        f(&self.tape.inner.borrow().nodes[self.id].data)
    }

    /// The single element of a one-element tensor.
    pub fn scalar(&self) -> Result<Real> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalar {
                shape: self.shape.clone(),
            });
        }
        Ok(self.tape.inner.borrow().nodes[self.id].data[0])
    }

    /// Copy of the accumulated gradient, if backward has reached this node.
    pub fn grad(&self) -> Option<Vec<Real>> {
        self.tape.inner.borrow().nodes[self.id].grad.clone()
    }

    pub(crate) fn same_tape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if Rc::ptr_eq(&self.tape.inner, &other.tape.inner) {
            Ok(())
        } else {
            Err(TensorError::TapeMismatch { op })
        }
    }

    /// Reverse sweep from a scalar loss. Populates `grad` on every
    /// gradient-requiring node that the loss reaches; repeated calls
    /// accumulate into existing gradients.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: self.shape.clone(),
            });
        }
        let mut collected: Vec<(usize, Vec<Real>)> = Vec::new();
        {
            let inner = self.tape.inner.borrow();
            let nodes = &inner.nodes;
            let mut acc: Vec<Option<Vec<Real>>> = vec![None; self.id + 1];
            acc[self.id] = Some(vec![1.0]);
            for id in (0..=self.id).rev() {
                let Some(g) = acc[id].take() else { continue };
                if !nodes[id].requires_grad {
                    continue;
                }
                // Even rules that contribute nothing (an all-pad loss, a
                // dead relu) leave a zero gradient on gradient-requiring
                // inputs: reachability alone populates `grad`.
                for input in op_inputs(&nodes[id].op) {
                    if nodes[input].requires_grad {
                        slot(&mut acc, nodes, input);
                    }
                }
                distribute(nodes, id, &g, &mut acc);
                collected.push((id, g));
            }
        }
        let mut inner = self.tape.inner.borrow_mut();
        for (id, g) in collected {
            let node = &mut inner.nodes[id];
            match node.grad.as_mut() {
                Some(existing) => {
                    for (e, v) in existing.iter_mut().zip(&g) {
                        *e += v;
                    }
                }
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }
}

// ── Backward rules ──────────────────────────────────────────────────────

fn op_inputs(op: &Op) -> Vec<usize> {
    match op {
        Op::Leaf => vec![],
        Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
        Op::AddBias { x, bias } => vec![*x, *bias],
        Op::Scale { x, .. }
        | Op::Relu { x }
        | Op::SoftmaxRows { x, .. }
        | Op::MeanRows { x, .. }
        | Op::Sum { x }
        | Op::SliceRows { x, .. }
        | Op::SliceCols { x, .. }
        | Op::Transpose { x, .. }
        | Op::Reshape { x } => vec![*x],
        Op::Matmul { a, b, .. } => vec![*a, *b],
        Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
        Op::Concat { parts } | Op::ConcatCols { parts, .. } => {
            parts.iter().map(|(id, _)| *id).collect()
        }
        Op::GatherRows { table, .. } => vec![*table],
        Op::CrossEntropy { logits, .. } => vec![*logits],
    }
}

fn wants(nodes: &[Node], id: usize) -> bool {
    nodes[id].requires_grad
}

fn slot<'a>(
    acc: &'a mut [Option<Vec<Real>>],
    nodes: &[Node],
    id: usize,
) -> &'a mut Vec<Real> {
    acc[id].get_or_insert_with(|| vec![0.0; nodes[id].data.len()])
}

fn add_to(acc: &mut [Option<Vec<Real>>], nodes: &[Node], id: usize, g: &[Real]) {
    if !wants(nodes, id) {
        return;
    }
    let slot = slot(acc, nodes, id);
    for (s, v) in slot.iter_mut().zip(g) {
        *s += v;
    }
}

/// Push the output gradient `g` of node `id` onto its inputs.
fn distribute(nodes: &[Node], id: usize, g: &[Real], acc: &mut [Option<Vec<Real>>]) {
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add { a, b } => {
            add_to(acc, nodes, *a, g);
            add_to(acc, nodes, *b, g);
        }
        Op::AddBias { x, bias } => {
            add_to(acc, nodes, *x, g);
            if wants(nodes, *bias) {
                let n = nodes[*bias].data.len();
                let slot = slot(acc, nodes, *bias);
                for (i, gv) in g.iter().enumerate() {
                    slot[i % n] += gv;
                }
            }
        }
        Op::Mul { a, b } => {
            if wants(nodes, *a) {
                let bd = &nodes[*b].data;
                let slot = slot(acc, nodes, *a);
                for i in 0..g.len() {
                    slot[i] += g[i] * bd[i];
                }
            }
            if wants(nodes, *b) {
                let ad = &nodes[*a].data;
                let slot = slot(acc, nodes, *b);
                for i in 0..g.len() {
                    slot[i] += g[i] * ad[i];
                }
            }
        }
        Op::Scale { x, c } => {
            if wants(nodes, *x) {
                let slot = slot(acc, nodes, *x);
                for i in 0..g.len() {
                    slot[i] += g[i] * c;
                }
            }
        }
        Op::Matmul { a, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            if wants(nodes, *a) {
                // dA[i,p] += sum_j G[i,j] * B[p,j]
                let bd = &nodes[*b].data;
                let slot = slot(acc, nodes, *a);
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        let grow = &g[i * n..(i + 1) * n];
                        let brow = &bd[p * n..(p + 1) * n];
                        for j in 0..n {
                            s += grow[j] * brow[j];
                        }
                        slot[i * k + p] += s;
                    }
                }
            }
            if wants(nodes, *b) {
                // dB[p,j] += sum_i A[i,p] * G[i,j]
                let ad = &nodes[*a].data;
                let slot = slot(acc, nodes, *b);
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let a_ip = ad[i * k + p];
                        if a_ip == 0.0 {
                            continue;
                        }
                        let brow = &mut slot[p * n..(p + 1) * n];
                        for j in 0..n {
                            brow[j] += a_ip * grow[j];
                        }
                    }
                }
            }
        }
        Op::Transpose { x, rows, cols } => {
            // Output is [cols, rows]; map back.
            if wants(nodes, *x) {
                let slot = slot(acc, nodes, *x);
                for r in 0..*rows {
                    for c in 0..*cols {
                        slot[r * cols + c] += g[c * rows + r];
                    }
                }
            }
        }
        Op::Relu { x } => {
            if wants(nodes, *x) {
                let xd = &nodes[*x].data;
                let slot = slot(acc, nodes, *x);
                for i in 0..g.len() {
                    if xd[i] > 0.0 {
                        slot[i] += g[i];
                    }
                }
            }
        }
        Op::SoftmaxRows { x, rows, cols } => {
            if wants(nodes, *x) {
                let y = &nodes[id].data;
                let slot = slot(acc, nodes, *x);
                for r in 0..*rows {
                    let base = r * cols;
                    let mut dot = 0.0;
                    for j in 0..*cols {
                        dot += g[base + j] * y[base + j];
                    }
                    for j in 0..*cols {
                        slot[base + j] += y[base + j] * (g[base + j] - dot);
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            rows,
            cols,
            x_hat,
            inv_std,
        } => {
            let gain_d = &nodes[*gain].data;
            if wants(nodes, *gain) {
                let slot = slot(acc, nodes, *gain);
                for r in 0..*rows {
                    for j in 0..*cols {
                        slot[j] += g[r * cols + j] * x_hat[r * cols + j];
                    }
                }
            }
            if wants(nodes, *bias) {
                let slot = slot(acc, nodes, *bias);
                for r in 0..*rows {
                    for j in 0..*cols {
                        slot[j] += g[r * cols + j];
                    }
                }
            }
            if wants(nodes, *x) {
                let slot = slot(acc, nodes, *x);
                let nf = *cols as Real;
                for r in 0..*rows {
                    let base = r * cols;
                    let mut mean_h = 0.0;
                    let mut mean_hx = 0.0;
                    for j in 0..*cols {
                        let h = g[base + j] * gain_d[j];
                        mean_h += h;
                        mean_hx += h * x_hat[base + j];
                    }
                    mean_h /= nf;
                    mean_hx /= nf;
                    for j in 0..*cols {
                        let h = g[base + j] * gain_d[j];
                        slot[base + j] += inv_std[r] * (h - mean_h - x_hat[base + j] * mean_hx);
                    }
                }
            }
        }
        Op::MeanRows { x, rows, cols } => {
            if wants(nodes, *x) {
                let slot = slot(acc, nodes, *x);
                let inv = 1.0 / *rows as Real;
                for r in 0..*rows {
                    for j in 0..*cols {
                        slot[r * cols + j] += g[j] * inv;
                    }
                }
            }
        }
        Op::Sum { x } => {
            if wants(nodes, *x) {
                let slot = slot(acc, nodes, *x);
                for s in slot.iter_mut() {
                    *s += g[0];
                }
            }
        }
        Op::SliceRows {
            x,
            start,
            rows_out,
            cols,
        } => {
            if wants(nodes, *x) {
                let slot = slot(acc, nodes, *x);
                for r in 0..*rows_out {
                    for j in 0..*cols {
                        slot[(start + r) * cols + j] += g[r * cols + j];
                    }
                }
            }
        }
        Op::SliceCols {
            x,
            start,
            cols_out,
            rows,
            cols_in,
        } => {
            if wants(nodes, *x) {
                let slot = slot(acc, nodes, *x);
                for r in 0..*rows {
                    for j in 0..*cols_out {
                        slot[r * cols_in + start + j] += g[r * cols_out + j];
                    }
                }
            }
        }
        Op::Concat { parts } => {
            let mut off = 0;
            for (pid, len) in parts {
                add_to(acc, nodes, *pid, &g[off..off + len]);
                off += len;
            }
        }
        Op::ConcatCols { parts, rows } => {
            let total: usize = parts.iter().map(|(_, w)| w).sum();
            let mut off = 0;
            for (pid, w) in parts {
                if wants(nodes, *pid) {
                    let slot = slot(acc, nodes, *pid);
                    for r in 0..*rows {
                        for j in 0..*w {
                            slot[r * w + j] += g[r * total + off + j];
                        }
                    }
                }
                off += w;
            }
        }
        Op::GatherRows { table, ids, cols } => {
            if wants(nodes, *table) {
                let slot = slot(acc, nodes, *table);
                for (r, &row) in ids.iter().enumerate() {
                    for j in 0..*cols {
                        slot[row * cols + j] += g[r * cols + j];
                    }
                }
            }
        }
        Op::CrossEntropy {
            logits,
            rows,
            cols,
            targets,
            smoothing,
            pad,
            probs,
            counted,
        } => {
            if wants(nodes, *logits) && *counted > 0 {
                let slot = slot(acc, nodes, *logits);
                let scale = g[0] / *counted as Real;
                let uniform = smoothing / *cols as Real;
                for r in 0..*rows {
                    let t = targets[r];
                    if t == *pad {
                        continue;
                    }
                    let base = r * cols;
                    for j in 0..*cols {
                        let mut q = uniform;
                        if j == t {
                            q += 1.0 - smoothing;
                        }
                        slot[base + j] += scale * (probs[base + j] - q);
                    }
                }
            }
        }
        Op::Reshape { x } => {
            add_to(acc, nodes, *x, g);
        }
    }
}
