use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::Tensor;
use crate::error::AutodiffError;

static TAPE_COUNTER: AtomicU64 = AtomicU64::new(1);

/// Handle of a recorded operation. Only meaningful for the tape that issued it.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct NodeId {
    pub(crate) tape: u64,
    pub(crate) idx: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Activation {
    Tanh,
    Relu,
    Elu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
        }
    }

    /// Derivative expressed through the activation's own output value.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if y > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
        }
    }
}

enum Op {
    Leaf { requires_grad: bool },
    Matmul,
    Add { broadcast_rhs_row: bool },
    Sub,
    Mul { rhs_is_column: bool },
    ScalarMul { c: f64 },
    Transpose,
    ConcatLastDim { widths: Vec<usize> },
    RowSoftmax,
    Activation { kind: Activation },
    Sum,
    Mean,
    Power { p: f64 },
    MaskedFill { keep: Tensor },
    Reshape,
    SliceCols { from: usize, to: usize, in_cols: usize },
    PermuteRows { perm: Vec<usize> },
}

struct Node {
    op: Op,
    inputs: Vec<usize>,
    /// Values needed by the backward pass (inputs or outputs, op-dependent).
    saved: Vec<Tensor>,
    out_shape: Vec<usize>,
    out_len: usize,
}

/// Records tensor operations for reverse-mode differentiation.
///
/// A tape in inference mode performs the same forward computations without
/// recording anything. Tapes are single-threaded; run one per thread.
pub struct Tape {
    id: u64,
    recording: bool,
    nodes: RefCell<Vec<Node>>,
}

/// Gradients of a scalar loss with respect to the tape's variables.
pub struct Gradients {
    tape: u64,
    grads: HashMap<usize, Tensor>,
}

impl Gradients {
    /// Gradient for a tensor registered with [`Tape::var`]. Zero tensor if the
    /// variable did not influence the loss.
    pub fn get(&self, var: &Tensor) -> Tensor {
        match var.node {
            Some(id) if id.tape == self.tape => self
                .grads
                .get(&id.idx)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(var.shape())),
            _ => Tensor::zeros(var.shape()),
        }
    }
}

const PAR_THRESHOLD: usize = 1 << 15;

/// Elementwise map, parallelized for large buffers. Chunk boundaries do not
/// affect results, so the output is identical to the sequential path.
fn map_elems(a: &[f64], f: impl Fn(f64) -> f64 + Sync) -> Vec<f64> {
    if a.len() < PAR_THRESHOLD {
        return a.iter().map(|&x| f(x)).collect();
    }
    use rayon::prelude::*;
    a.par_iter().map(|&x| f(x)).collect()
}

fn zip_elems(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64 + Sync) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    if a.len() < PAR_THRESHOLD {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    use rayon::prelude::*;
    a.par_iter().zip(b.par_iter()).map(|(&x, &y)| f(x, y)).collect()
}

/// f64 GEMM with explicit strides; `beta` selects overwrite vs accumulate.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tape {
    pub fn recording() -> Self {
        Self {
            id: TAPE_COUNTER.fetch_add(1, Ordering::Relaxed),
            recording: true,
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Forward-only tape: same ops, nothing recorded.
    pub fn inference() -> Self {
        Self { id: 0, recording: false, nodes: RefCell::new(Vec::new()) }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a differentiable variable (leaf) on the tape.
    pub fn var(&self, value: &Tensor) -> Tensor {
        if !self.recording {
            return value.detach();
        }
        let idx = self.push(Node {
            op: Op::Leaf { requires_grad: true },
            inputs: vec![],
            saved: vec![value.detach()],
            out_shape: value.shape().to_vec(),
            out_len: value.numel(),
        });
        Tensor::from_parts(
            value.shape().to_vec(),
            value.data().to_vec(),
            Some(NodeId { tape: self.id, idx }),
        )
    }

    fn push(&self, node: Node) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// Node index of `t` on this tape, registering it as a constant leaf when
    /// it is not connected yet. Only called when recording.
    fn ensure_node(&self, t: &Tensor) -> usize {
        match t.node {
            Some(id) if id.tape == self.id => id.idx,
            _ => self.push(Node {
                op: Op::Leaf { requires_grad: false },
                inputs: vec![],
                saved: vec![t.detach()],
                out_shape: t.shape().to_vec(),
                out_len: t.numel(),
            }),
        }
    }

    fn connected(&self, inputs: &[&Tensor]) -> bool {
        self.recording && inputs.iter().any(|t| matches!(t.node, Some(id) if id.tape == self.id))
    }

    fn record(
        &self,
        op: Op,
        inputs: &[&Tensor],
        saved: Vec<Tensor>,
        out_shape: Vec<usize>,
        out_data: Vec<f64>,
    ) -> Result<Tensor, AutodiffError> {
        #[cfg(debug_assertions)]
        {
            if out_data.iter().any(|v| !v.is_finite()) {
                return Err(AutodiffError::NonFiniteValue { op: op_name(&op) });
            }
        }
        if !self.connected(inputs) {
            return Ok(Tensor::from_parts(out_shape, out_data, None));
        }
        let input_ids: Vec<usize> = inputs.iter().map(|t| self.ensure_node(t)).collect();
        let out_len = out_data.len();
        let idx = self.push(Node { op, inputs: input_ids, saved, out_shape: out_shape.clone(), out_len });
        Ok(Tensor::from_parts(out_shape, out_data, Some(NodeId { tape: self.id, idx })))
    }

    // ---- operations ----

    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        if !a.is_matrix() || !b.is_matrix() || a.cols() != b.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} x {:?}", a.shape(), b.shape()),
            });
        }
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, a.data(), k as isize, 1, b.data(), n as isize, 1, 0.0, &mut out);
        self.record(Op::Matmul, &[a, b], vec![a.detach(), b.detach()], vec![m, n], out)
    }

    /// Elementwise addition. Also accepts a `[1, n]` (or `[n]`) right-hand side
    /// broadcast over the rows of an `[m, n]` left-hand side.
    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        if a.shape() == b.shape() {
            let out = zip_elems(a.data(), b.data(), |x, y| x + y);
            return self.record(
                Op::Add { broadcast_rhs_row: false },
                &[a, b],
                vec![],
                a.shape().to_vec(),
                out,
            );
        }
        let row_like = b.shape().len() == 1 || (b.is_matrix() && b.rows() == 1);
        if a.is_matrix() && row_like && b.numel() == a.cols() {
            let n = a.cols();
            let out = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, x)| x + b.data()[i % n])
                .collect();
            return self.record(
                Op::Add { broadcast_rhs_row: true },
                &[a, b],
                vec![],
                a.shape().to_vec(),
                out,
            );
        }
        Err(AutodiffError::ShapeMismatch {
            op: "add",
            detail: format!("{:?} + {:?}", a.shape(), b.shape()),
        })
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        if a.shape() != b.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "sub",
                detail: format!("{:?} - {:?}", a.shape(), b.shape()),
            });
        }
        let out = zip_elems(a.data(), b.data(), |x, y| x - y);
        self.record(Op::Sub, &[a, b], vec![], a.shape().to_vec(), out)
    }

    /// Hadamard product. Also accepts an `[m, 1]` right-hand side broadcast
    /// over the columns of an `[m, n]` left-hand side (per-row scaling).
    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        if a.shape() == b.shape() {
            let out = zip_elems(a.data(), b.data(), |x, y| x * y);
            return self.record(
                Op::Mul { rhs_is_column: false },
                &[a, b],
                vec![a.detach(), b.detach()],
                a.shape().to_vec(),
                out,
            );
        }
        if a.is_matrix() && b.is_matrix() && b.cols() == 1 && b.rows() == a.rows() {
            let n = a.cols();
            let out = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, x)| x * b.data()[i / n])
                .collect();
            return self.record(
                Op::Mul { rhs_is_column: true },
                &[a, b],
                vec![a.detach(), b.detach()],
                a.shape().to_vec(),
                out,
            );
        }
        Err(AutodiffError::ShapeMismatch {
            op: "mul",
            detail: format!("{:?} * {:?}", a.shape(), b.shape()),
        })
    }

    pub fn scalar_mul(&self, a: &Tensor, c: f64) -> Result<Tensor, AutodiffError> {
        let out = map_elems(a.data(), |x| x * c);
        self.record(Op::ScalarMul { c }, &[a], vec![], a.shape().to_vec(), out)
    }

    pub fn transpose(&self, a: &Tensor) -> Result<Tensor, AutodiffError> {
        if !a.is_matrix() {
            return Err(AutodiffError::ShapeMismatch {
                op: "transpose",
                detail: format!("{:?}", a.shape()),
            });
        }
        let (m, n) = (a.rows(), a.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = a.data()[i * n + j];
            }
        }
        self.record(Op::Transpose, &[a], vec![], vec![n, m], out)
    }

    /// Concatenates matrices with equal row counts along the last dimension.
    pub fn concat_last_dim(&self, parts: &[&Tensor]) -> Result<Tensor, AutodiffError> {
        if parts.is_empty() || parts.iter().any(|p| !p.is_matrix()) {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat_last_dim",
                detail: "needs at least one matrix".into(),
            });
        }
        let m = parts[0].rows();
        if parts.iter().any(|p| p.rows() != m) {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat_last_dim",
                detail: "row counts differ".into(),
            });
        }
        let widths: Vec<usize> = parts.iter().map(|p| p.cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; m * total];
        for i in 0..m {
            let mut off = 0;
            for (p, w) in parts.iter().zip(&widths) {
                out[i * total + off..i * total + off + w]
                    .copy_from_slice(&p.data()[i * w..(i + 1) * w]);
                off += w;
            }
        }
        self.record(Op::ConcatLastDim { widths }, parts, vec![], vec![m, total], out)
    }

    /// Numerically stable softmax over each row of a matrix.
    pub fn row_softmax(&self, a: &Tensor) -> Result<Tensor, AutodiffError> {
        if !a.is_matrix() {
            return Err(AutodiffError::ShapeMismatch {
                op: "row_softmax",
                detail: format!("{:?}", a.shape()),
            });
        }
        let (m, n) = (a.rows(), a.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &a.data()[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..n {
                let e = (row[j] - mx).exp();
                out[i * n + j] = e;
                z += e;
            }
            for j in 0..n {
                out[i * n + j] /= z;
            }
        }
        let saved = Tensor::from_parts(vec![m, n], out.clone(), None);
        self.record(Op::RowSoftmax, &[a], vec![saved], vec![m, n], out)
    }

    pub fn activation(&self, a: &Tensor, kind: Activation) -> Result<Tensor, AutodiffError> {
        let out: Vec<f64> = map_elems(a.data(), |x| kind.apply(x));
        let saved = Tensor::from_parts(a.shape().to_vec(), out.clone(), None);
        self.record(Op::Activation { kind }, &[a], vec![saved], a.shape().to_vec(), out)
    }

    pub fn sum(&self, a: &Tensor) -> Result<Tensor, AutodiffError> {
        let s: f64 = a.data().iter().sum();
        self.record(Op::Sum, &[a], vec![], vec![1], vec![s])
    }

    pub fn mean(&self, a: &Tensor) -> Result<Tensor, AutodiffError> {
        let s: f64 = a.data().iter().sum();
        self.record(Op::Mean, &[a], vec![], vec![1], vec![s / a.numel() as f64])
    }

    /// Elementwise power with constant exponent.
    pub fn power(&self, a: &Tensor, p: f64) -> Result<Tensor, AutodiffError> {
        let out = a.data().iter().map(|x| x.powf(p)).collect();
        self.record(Op::Power { p }, &[a], vec![a.detach()], a.shape().to_vec(), out)
    }

    /// Replaces entries where `mask` is nonzero with `fill`; gradients flow
    /// only through the kept entries.
    pub fn masked_fill(&self, a: &Tensor, mask: &Tensor, fill: f64) -> Result<Tensor, AutodiffError> {
        if a.shape() != mask.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "masked_fill",
                detail: format!("{:?} vs mask {:?}", a.shape(), mask.shape()),
            });
        }
        let out = a
            .data()
            .iter()
            .zip(mask.data())
            .map(|(x, m)| if *m != 0.0 { fill } else { *x })
            .collect();
        self.record(
            Op::MaskedFill { keep: mask.detach() },
            &[a],
            vec![],
            a.shape().to_vec(),
            out,
        )
    }

    pub fn reshape(&self, a: &Tensor, shape: &[usize]) -> Result<Tensor, AutodiffError> {
        if shape.iter().product::<usize>() != a.numel() {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", a.shape(), shape),
            });
        }
        self.record(Op::Reshape, &[a], vec![], shape.to_vec(), a.data().to_vec())
    }

    /// Column slice `[from, to)` of a matrix.
    pub fn slice_cols(&self, a: &Tensor, from: usize, to: usize) -> Result<Tensor, AutodiffError> {
        if !a.is_matrix() || from >= to || to > a.cols() {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice_cols",
                detail: format!("cols {}..{} of {:?}", from, to, a.shape()),
            });
        }
        let (m, n, w) = (a.rows(), a.cols(), to - from);
        let mut out = vec![0.0; m * w];
        for i in 0..m {
            out[i * w..(i + 1) * w].copy_from_slice(&a.data()[i * n + from..i * n + to]);
        }
        self.record(Op::SliceCols { from, to, in_cols: n }, &[a], vec![], vec![m, w], out)
    }

    /// Row permutation: row i of the output is row `perm[i]` of the input.
    pub fn permute_rows(&self, a: &Tensor, perm: &[usize]) -> Result<Tensor, AutodiffError> {
        if !a.is_matrix() || perm.len() != a.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "permute_rows",
                detail: format!("{} perm entries for {:?}", perm.len(), a.shape()),
            });
        }
        let (m, n) = (a.rows(), a.cols());
        let mut out = vec![0.0; m * n];
        for (i, &pi) in perm.iter().enumerate() {
            out[i * n..(i + 1) * n].copy_from_slice(&a.data()[pi * n..(pi + 1) * n]);
        }
        self.record(Op::PermuteRows { perm: perm.to_vec() }, &[a], vec![], vec![m, n], out)
    }

    // ---- backward ----

    /// Reverse pass from a scalar loss. Visits each recorded node once, in
    /// reverse topological (= recording) order, and returns gradients for all
    /// `var` leaves. Non-leaf gradient buffers are dropped as soon as the walk
    /// passes them.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients, AutodiffError> {
        if loss.numel() != 1 {
            return Err(AutodiffError::NotScalar { shape: loss.shape().to_vec() });
        }
        let loss_idx = match loss.node {
            Some(id) if id.tape == self.id && self.recording => id.idx,
            _ => return Err(AutodiffError::DetachedTensor),
        };
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss_idx] = Some(vec![1.0]);

        let mut out = HashMap::new();
        for idx in (0..=loss_idx).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &nodes[idx];
            match &node.op {
                Op::Leaf { requires_grad } => {
                    if *requires_grad {
                        out.insert(idx, Tensor::from_parts(node.out_shape.clone(), g, None));
                    }
                    continue;
                }
                _ => {}
            }
            let mut sink = |i: usize, contrib: Vec<f64>| {
                match &mut grads[node.inputs[i]] {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(&contrib) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            };
            match &node.op {
                Op::Leaf { .. } => unreachable!(),
                Op::Matmul => {
                    let (a, b) = (&node.saved[0], &node.saved[1]);
                    let (m, k, n) = (a.rows(), a.cols(), b.cols());
                    // dA = G * B^T
                    let mut da = vec![0.0; m * k];
                    unsafe {
                        matrixmultiply::dgemm(
                            m, n, k, 1.0, g.as_ptr(), n as isize, 1,
                            b.data().as_ptr(), 1, n as isize, 0.0,
                            da.as_mut_ptr(), k as isize, 1,
                        );
                    }
                    // dB = A^T * G
                    let mut db = vec![0.0; k * n];
                    unsafe {
                        matrixmultiply::dgemm(
                            k, m, n, 1.0, a.data().as_ptr(), 1, k as isize,
                            g.as_ptr(), n as isize, 1, 0.0,
                            db.as_mut_ptr(), n as isize, 1,
                        );
                    }
                    sink(0, da);
                    sink(1, db);
                }
                Op::Add { broadcast_rhs_row } => {
                    if *broadcast_rhs_row {
                        let n = node.out_shape[1];
                        let mut db = vec![0.0; n];
                        for (i, v) in g.iter().enumerate() {
                            db[i % n] += v;
                        }
                        sink(0, g.clone());
                        sink(1, db);
                    } else {
                        sink(0, g.clone());
                        sink(1, g);
                    }
                }
                Op::Sub => {
                    sink(0, g.clone());
                    sink(1, g.iter().map(|v| -v).collect());
                }
                Op::Mul { rhs_is_column } => {
                    let (a, b) = (&node.saved[0], &node.saved[1]);
                    if *rhs_is_column {
                        let n = a.cols();
                        let da: Vec<f64> = g
                            .iter()
                            .enumerate()
                            .map(|(i, v)| v * b.data()[i / n])
                            .collect();
                        let mut db = vec![0.0; b.numel()];
                        for (i, v) in g.iter().enumerate() {
                            db[i / n] += v * a.data()[i];
                        }
                        sink(0, da);
                        sink(1, db);
                    } else {
                        sink(0, zip_elems(&g, b.data(), |v, y| v * y));
                        sink(1, zip_elems(&g, a.data(), |v, x| v * x));
                    }
                }
                Op::ScalarMul { c } => {
                    let c = *c;
                    sink(0, map_elems(&g, |v| v * c));
                }
                Op::Transpose => {
                    let (n, m) = (node.out_shape[0], node.out_shape[1]);
                    let mut da = vec![0.0; m * n];
                    for i in 0..n {
                        for j in 0..m {
                            da[j * n + i] = g[i * m + j];
                        }
                    }
                    sink(0, da);
                }
                Op::ConcatLastDim { widths } => {
                    let m = node.out_shape[0];
                    let total = node.out_shape[1];
                    let mut off = 0;
                    for (pi, w) in widths.iter().enumerate() {
                        let mut dp = vec![0.0; m * w];
                        for i in 0..m {
                            dp[i * w..(i + 1) * w]
                                .copy_from_slice(&g[i * total + off..i * total + off + w]);
                        }
                        sink(pi, dp);
                        off += w;
                    }
                }
                Op::RowSoftmax => {
                    let y = &node.saved[0];
                    let (m, n) = (y.rows(), y.cols());
                    let mut da = vec![0.0; m * n];
                    for i in 0..m {
                        let yr = &y.data()[i * n..(i + 1) * n];
                        let gr = &g[i * n..(i + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            da[i * n + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    sink(0, da);
                }
                Op::Activation { kind } => {
                    let y = &node.saved[0];
                    sink(0, zip_elems(&g, y.data(), |v, yi| v * kind.derivative_from_output(yi)));
                }
                Op::Sum => {
                    let len = nodes[node.inputs[0]].out_len;
                    sink(0, vec![g[0]; len]);
                }
                Op::Mean => {
                    let len = nodes[node.inputs[0]].out_len;
                    sink(0, vec![g[0] / len as f64; len]);
                }
                Op::Power { p } => {
                    let x = &node.saved[0];
                    sink(
                        0,
                        g.iter()
                            .zip(x.data())
                            .map(|(v, &xi)| v * p * xi.powf(p - 1.0))
                            .collect(),
                    );
                }
                Op::MaskedFill { keep } => {
                    sink(
                        0,
                        g.iter()
                            .zip(keep.data())
                            .map(|(v, m)| if *m != 0.0 { 0.0 } else { *v })
                            .collect(),
                    );
                }
                Op::Reshape => {
                    sink(0, g);
                }
                Op::SliceCols { from, to, in_cols } => {
                    let m = node.out_shape[0];
                    let w = to - from;
                    let mut da = vec![0.0; m * in_cols];
                    for i in 0..m {
                        da[i * in_cols + from..i * in_cols + to]
                            .copy_from_slice(&g[i * w..(i + 1) * w]);
                    }
                    sink(0, da);
                }
                Op::PermuteRows { perm } => {
                    let n = node.out_shape[1];
                    let mut da = vec![0.0; g.len()];
                    for (i, &pi) in perm.iter().enumerate() {
                        for j in 0..n {
                            da[pi * n + j] += g[i * n + j];
                        }
                    }
                    sink(0, da);
                }
            }
        }
        Ok(Gradients { tape: self.id, grads: out })
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf { .. } => "leaf",
        Op::Matmul => "matmul",
        Op::Add { .. } => "add",
        Op::Sub => "sub",
        Op::Mul { .. } => "mul",
        Op::ScalarMul { .. } => "scalar_mul",
        Op::Transpose => "transpose",
        Op::ConcatLastDim { .. } => "concat_last_dim",
        Op::RowSoftmax => "row_softmax",
        Op::Activation { .. } => "activation",
        Op::Sum => "sum",
        Op::Mean => "mean",
        Op::Power { .. } => "power",
        Op::MaskedFill { .. } => "masked_fill",
        Op::Reshape => "reshape",
        Op::SliceCols { .. } => "slice_cols",
        Op::PermuteRows { .. } => "permute_rows",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let tape = Tape::inference();
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let out = tape.matmul(&a, &Tensor::eye(2)).unwrap();
        assert_eq!(out.data(), a.data());
    }

    #[test]
    fn add_inverse_is_zero() {
        let tape = Tape::inference();
        let x = t(&[3], &[1.0, -2.0, 5.0]);
        let nx = tape.scalar_mul(&x, -1.0).unwrap();
        let out = tape.add(&x, &nx).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn row_softmax_symmetry() {
        let tape = Tape::inference();
        let out = tape.row_softmax(&t(&[1, 2], &[0.0, 0.0])).unwrap();
        assert!((out.data()[0] - 0.5).abs() < 1e-15);
        assert!((out.data()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn backward_sum_of_squares() {
        // loss = sum(x*x), x=[1,2,3] -> grad = [2,4,6]
        let tape = Tape::recording();
        let x = tape.var(&t(&[3], &[1.0, 2.0, 3.0]));
        let sq = tape.mul(&x, &x).unwrap();
        let loss = tape.sum(&sq).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(&x).data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_constant_loss_gives_zero_grads() {
        let tape = Tape::recording();
        let x = tape.var(&t(&[2], &[1.0, 2.0]));
        let c = tape.scalar_mul(&x, 0.0).unwrap();
        let loss = tape.sum(&c).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(&x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::recording();
        let x = tape.var(&t(&[2], &[1.0, 2.0]));
        let y = tape.mul(&x, &x).unwrap();
        assert!(matches!(tape.backward(&y), Err(AutodiffError::NotScalar { .. })));
    }

    #[test]
    fn backward_rejects_detached_tensor() {
        let tape = Tape::recording();
        let x = t(&[1], &[3.0]);
        assert!(matches!(tape.backward(&x), Err(AutodiffError::DetachedTensor)));
    }

    #[test]
    fn backward_deterministic() {
        let run = || {
            let tape = Tape::recording();
            let x = tape.var(&t(&[2, 2], &[0.3, -0.7, 1.1, 0.2]));
            let w = tape.var(&t(&[2, 2], &[0.5, 0.1, -0.4, 0.9]));
            let h = tape.matmul(&x, &w).unwrap();
            let h = tape.activation(&h, Activation::Tanh).unwrap();
            let loss = tape.mean(&h).unwrap();
            let g = tape.backward(&loss).unwrap();
            (g.get(&x).data().to_vec(), g.get(&w).data().to_vec())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn inference_mode_records_nothing() {
        let tape = Tape::inference();
        let x = tape.var(&t(&[2], &[1.0, 2.0]));
        let _ = tape.mul(&x, &x).unwrap();
        assert!(tape.is_empty());
    }
}
