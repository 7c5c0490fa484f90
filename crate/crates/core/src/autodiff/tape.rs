use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::linalg::{matmul_raw, DenseMatrix, FloatExt};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// A trainable tensor with its gradient accumulator and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: DenseMatrix,
    pub grad: DenseMatrix,
    pub first_moment: DenseMatrix,
    pub second_moment: DenseMatrix,
    pub step: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: DenseMatrix) -> Self {
        let (r, c) = value.shape();
        Self {
            name: name.into(),
            value,
            grad: DenseMatrix::zeros(r, c),
            first_moment: DenseMatrix::zeros(r, c),
            second_moment: DenseMatrix::zeros(r, c),
            step: 0,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.as_mut_slice().fill(0.0);
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: DenseMatrix) -> ParamId {
        self.push(Parameter::new(name, value))
    }

    pub fn push(&mut self, p: Parameter) -> ParamId {
        self.params.push(p);
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &DenseMatrix {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &DenseMatrix {
        &self.params[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }
}

#[derive(Clone, Debug)]
enum Op {
    Param(ParamId),
    Const,
    MatMul(NodeId, NodeId),
    /// Adds a `1 x n` row to every row of an `m x n` input.
    AddRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Elementwise product.
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    /// `Σ x²` as a `1 x 1` node.
    SumSquares(NodeId),
    /// Row `b` of the output is the concatenation of codebook columns
    /// `indices[b * k .. (b + 1) * k]`.
    Gather {
        codebook: NodeId,
        indices: Vec<usize>,
        per_row: usize,
    },
    /// Euclidean norm of consecutive `block`-wide column groups of each row.
    BlockNorms(NodeId, usize),
    /// Mean over rows of softmax cross-entropy against integer labels.
    SoftmaxCrossEntropy(NodeId, Vec<usize>),
    StopGrad,
    /// Forward value of the substitute, gradient straight to `input`.
    StraightThrough { input: NodeId },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: DenseMatrix,
    needs_grad: bool,
}

/// Stop-gradient values, straight-through offsets and integer decisions
/// captured by a recording tape, in the order they were produced.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrozenValues {
    values: Vec<DenseMatrix>,
    indices: Vec<Vec<usize>>,
}

#[derive(Clone, Debug)]
enum Mode {
    Live,
    Record(FrozenValues),
    Replay {
        frozen: FrozenValues,
        next_value: usize,
        next_indices: usize,
    },
}

#[derive(Clone, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    mode: Mode,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            mode: Mode::Live,
        }
    }

    /// A tape that remembers every stopped value it produces.
    pub fn recording() -> Self {
        Self {
            nodes: Vec::new(),
            mode: Mode::Record(FrozenValues::default()),
        }
    }

    /// A tape whose stopped values come from an earlier recording.
    pub fn replaying(frozen: FrozenValues) -> Self {
        Self {
            nodes: Vec::new(),
            mode: Mode::Replay {
                frozen,
                next_value: 0,
                next_indices: 0,
            },
        }
    }

    /// The recorded values, if this tape was recording.
    pub fn frozen(&self) -> Option<&FrozenValues> {
        match &self.mode {
            Mode::Record(f) => Some(f),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &DenseMatrix {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.as_slice()[0]
    }

    fn push(&mut self, op: Op, value: DenseMatrix, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(Op::Param(id), store.value(id).clone(), true)
    }

    pub fn constant(&mut self, value: DenseMatrix) -> NodeId {
        self.push(Op::Const, value, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.cols(), vb.rows(), "matmul shape mismatch");
        let v = matmul_raw(va, vb);
        let g = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), v, g)
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (va, vr) = (self.value(a), self.value(row));
        assert!(vr.rows() == 1 && vr.cols() == va.cols(), "add_row shape mismatch");
        let mut v = va.clone();
        for i in 0..v.rows() {
            for (x, b) in v.row_mut(i).iter_mut().zip(vr.as_slice()) {
                *x += b;
            }
        }
        let g = self.needs(a) || self.needs(row);
        self.push(Op::AddRow(a, row), v, g)
    }

    fn zip_with(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> DenseMatrix {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "elementwise shape mismatch");
        zip_map(va, vb, f)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_with(a, b, |x, y| x + y);
        let g = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), v, g)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_with(a, b, |x, y| x - y);
        let g = self.needs(a) || self.needs(b);
        self.push(Op::Sub(a, b), v, g)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_with(a, b, |x, y| x * y);
        let g = self.needs(a) || self.needs(b);
        self.push(Op::Mul(a, b), v, g)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let va = self.value(a);
        let v = DenseMatrix::from_raw(
            va.rows(),
            va.cols(),
            va.as_slice().iter().map(|x| c * x).collect(),
        );
        let g = self.needs(a);
        self.push(Op::Scale(a, c), v, g)
    }

    /// `max(x, 0)`; the derivative at exactly 0 is taken as 0.
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let v = DenseMatrix::from_raw(
            va.rows(),
            va.cols(),
            va.as_slice().iter().map(|&x| if x <= 0.0 { 0.0 } else { x }).collect(),
        );
        let g = self.needs(a);
        self.push(Op::Relu(a), v, g)
    }

    pub fn sum_squares(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).as_slice().iter().map(|x| x * x).sum();
        let g = self.needs(a);
        self.push(Op::SumSquares(a), DenseMatrix::from_raw(1, 1, vec![s]), g)
    }

    /// Gather codebook columns: output row `b` concatenates columns
    /// `indices[b * per_row + i]` for `i in 0..per_row`.
    pub fn gather_columns(&mut self, codebook: NodeId, indices: Vec<usize>, per_row: usize) -> NodeId {
        let cb = self.value(codebook);
        let d = cb.rows();
        assert!(per_row > 0 && indices.len().is_multiple_of(per_row), "gather shape mismatch");
        let rows = indices.len() / per_row;
        let mut v = DenseMatrix::zeros(rows, per_row * d);
        for (k, &j) in indices.iter().enumerate() {
            let (b, i) = (k / per_row, k % per_row);
            for a in 0..d {
                v[(b, i * d + a)] = cb[(a, j)];
            }
        }
        let g = self.needs(codebook);
        self.push(
            Op::Gather {
                codebook,
                indices,
                per_row,
            },
            v,
            g,
        )
    }

    pub fn block_norms(&mut self, a: NodeId, block: usize) -> NodeId {
        let va = self.value(a);
        assert!(block > 0 && va.cols().is_multiple_of(block), "block_norms shape mismatch");
        let k = va.cols() / block;
        let mut v = DenseMatrix::zeros(va.rows(), k);
        for b in 0..va.rows() {
            for (i, chunk) in va.row(b).chunks(block).enumerate() {
                v[(b, i)] = chunk.iter().map(|x| x * x).sum::<f64>().sqrt_libm();
            }
        }
        let g = self.needs(a);
        self.push(Op::BlockNorms(a, block), v, g)
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: Vec<usize>) -> NodeId {
        let vl = self.value(logits);
        assert_eq!(vl.rows(), labels.len(), "one label per row");
        let mut total = 0.0;
        for (b, &l) in labels.iter().enumerate() {
            let (lse, _) = log_softmax_row(vl.row(b));
            total += lse - vl[(b, l)];
        }
        let v = DenseMatrix::from_raw(1, 1, vec![total / labels.len() as f64]);
        let g = self.needs(logits);
        self.push(Op::SoftmaxCrossEntropy(logits, labels), v, g)
    }

    /// Identity forward, zero backward.
    pub fn stop_grad(&mut self, a: NodeId) -> NodeId {
        let live = self.value(a).clone();
        let v = match &mut self.mode {
            Mode::Live => live,
            Mode::Record(f) => {
                f.values.push(live.clone());
                live
            }
            Mode::Replay {
                frozen, next_value, ..
            } => {
                let v = frozen.values[*next_value].clone();
                *next_value += 1;
                v
            }
        };
        self.push(Op::StopGrad, v, false)
    }

    /// Forward value of `substitute`, gradient passed unchanged to `input`.
    ///
    /// When replaying, the forward value is `input + (substitute − input)`
    /// with the offset taken from the recording, the local linearization
    /// the backward pass differentiates.
    pub fn straight_through(&mut self, substitute: NodeId, input: NodeId) -> NodeId {
        assert_eq!(
            self.value(substitute).shape(),
            self.value(input).shape(),
            "straight-through shape mismatch"
        );
        let v = match &mut self.mode {
            Mode::Live => self.nodes[substitute.0].value.clone(),
            Mode::Record(f) => {
                let (vs, vi) = (&self.nodes[substitute.0].value, &self.nodes[input.0].value);
                f.values.push(zip_map(vs, vi, |s, i| s - i));
                vs.clone()
            }
            Mode::Replay {
                frozen, next_value, ..
            } => {
                let off = &frozen.values[*next_value];
                *next_value += 1;
                zip_map(&self.nodes[input.0].value, off, |i, o| i + o)
            }
        };
        let g = self.needs(input);
        self.push(Op::StraightThrough { input }, v, g)
    }

    /// Integer decisions (e.g. quantization matchings) that must be held
    /// fixed when the tape is replayed.
    pub fn freeze_indices(&mut self, live: Vec<usize>) -> Vec<usize> {
        match &mut self.mode {
            Mode::Live => live,
            Mode::Record(f) => {
                f.indices.push(live.clone());
                live
            }
            Mode::Replay {
                frozen,
                next_indices,
                ..
            } => {
                let v = frozen.indices[*next_indices].clone();
                *next_indices += 1;
                v
            }
        }
    }

    /// Activation pattern (`input > 0`) of every ReLU on the tape, plus
    /// whether any input sat exactly on the kink.
    pub fn relu_pattern(&self) -> (Vec<bool>, bool) {
        let mut pattern = Vec::new();
        let mut at_kink = false;
        for n in &self.nodes {
            if let Op::Relu(a) = n.op {
                for &x in self.value(a).as_slice() {
                    pattern.push(x > 0.0);
                    at_kink |= x == 0.0;
                }
            }
        }
        (pattern, at_kink)
    }
}

fn zip_map(a: &DenseMatrix, b: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> DenseMatrix {
    DenseMatrix::from_raw(
        a.rows(),
        a.cols(),
        a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| f(*x, *y)).collect(),
    )
}

/// Returns `(logsumexp, softmax)` of a row.
fn log_softmax_row(row: &[f64]) -> (f64, Vec<f64>) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let exps: Vec<f64> = row.iter().map(|&x| libm::exp(x - max)).collect();
    let sum: f64 = exps.iter().sum();
    let probs = exps.iter().map(|e| e / sum).collect();
    (max + libm::log(sum), probs)
}

fn accumulate(slot: &mut Option<DenseMatrix>, g: DenseMatrix) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

/// Reverse pass from a `1 x 1` loss node. Parameter gradients are added to
/// the store's accumulators (callers zero them between steps).
pub fn backward(tape: &Tape, loss: NodeId, store: &mut ParamStore) -> Result<()> {
    if tape.value(loss).shape() != (1, 1) {
        return Err(invalid("backward needs a scalar loss node"));
    }
    let mut grads: Vec<Option<DenseMatrix>> = vec![None; loss.0 + 1];
    grads[loss.0] = Some(DenseMatrix::from_raw(1, 1, vec![1.0]));
    for idx in (0..=loss.0).rev() {
        let node = &tape.nodes[idx];
        if !node.needs_grad {
            continue;
        }
        let Some(g) = grads[idx].take() else { continue };
        let needs = |id: NodeId| tape.nodes[id.0].needs_grad;
        match &node.op {
            Op::Param(p) => {
                let acc = &mut store.get_mut(*p).grad;
                for (a, b) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *a += b;
                }
            }
            Op::Const | Op::StopGrad => {}
            Op::MatMul(a, b) => {
                if needs(*a) {
                    let bt = tape.value(*b).transpose();
                    accumulate(&mut grads[a.0], matmul_raw(&g, &bt));
                }
                if needs(*b) {
                    let at = tape.value(*a).transpose();
                    accumulate(&mut grads[b.0], matmul_raw(&at, &g));
                }
            }
            Op::AddRow(a, row) => {
                if needs(*row) {
                    let mut gr = DenseMatrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (x, y) in gr.as_mut_slice().iter_mut().zip(g.row(i)) {
                            *x += y;
                        }
                    }
                    accumulate(&mut grads[row.0], gr);
                }
                if needs(*a) {
                    accumulate(&mut grads[a.0], g);
                }
            }
            Op::Add(a, b) => {
                if needs(*b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
                if needs(*a) {
                    accumulate(&mut grads[a.0], g);
                }
            }
            Op::Sub(a, b) => {
                if needs(*b) {
                    let neg = map(&g, |x| -x);
                    accumulate(&mut grads[b.0], neg);
                }
                if needs(*a) {
                    accumulate(&mut grads[a.0], g);
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    accumulate(&mut grads[a.0], hadamard(&g, tape.value(*b)));
                }
                if needs(*b) {
                    accumulate(&mut grads[b.0], hadamard(&g, tape.value(*a)));
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                accumulate(&mut grads[a.0], map(&g, |x| c * x));
            }
            Op::Relu(a) => {
                let input = tape.value(*a);
                let data = g
                    .as_slice()
                    .iter()
                    .zip(input.as_slice())
                    .map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 })
                    .collect();
                accumulate(&mut grads[a.0], DenseMatrix::from_raw(g.rows(), g.cols(), data));
            }
            Op::SumSquares(a) => {
                let s = g.as_slice()[0];
                accumulate(&mut grads[a.0], map(tape.value(*a), |x| 2.0 * s * x));
            }
            Op::Gather {
                codebook,
                indices,
                per_row,
            } => {
                let cb = tape.value(*codebook);
                let d = cb.rows();
                let mut gc = DenseMatrix::zeros(cb.rows(), cb.cols());
                for (k, &j) in indices.iter().enumerate() {
                    let (b, i) = (k / per_row, k % per_row);
                    for a in 0..d {
                        gc[(a, j)] += g[(b, i * d + a)];
                    }
                }
                accumulate(&mut grads[codebook.0], gc);
            }
            Op::BlockNorms(a, block) => {
                let input = tape.value(*a);
                let out = &node.value;
                let mut ga = DenseMatrix::zeros(input.rows(), input.cols());
                for b in 0..input.rows() {
                    for i in 0..out.cols() {
                        let n = out[(b, i)];
                        if n == 0.0 {
                            continue;
                        }
                        for c in i * block..(i + 1) * block {
                            ga[(b, c)] = g[(b, i)] * input[(b, c)] / n;
                        }
                    }
                }
                accumulate(&mut grads[a.0], ga);
            }
            Op::SoftmaxCrossEntropy(logits, labels) => {
                let vl = tape.value(*logits);
                let s = g.as_slice()[0] / labels.len() as f64;
                let mut gl = DenseMatrix::zeros(vl.rows(), vl.cols());
                for (b, &l) in labels.iter().enumerate() {
                    let (_, probs) = log_softmax_row(vl.row(b));
                    for (k, p) in probs.iter().enumerate() {
                        gl[(b, k)] = s * (p - if k == l { 1.0 } else { 0.0 });
                    }
                }
                accumulate(&mut grads[logits.0], gl);
            }
            Op::StraightThrough { input } => {
                accumulate(&mut grads[input.0], g);
            }
        }
    }
    Ok(())
}

fn map(m: &DenseMatrix, f: impl Fn(f64) -> f64) -> DenseMatrix {
    DenseMatrix::from_raw(m.rows(), m.cols(), m.as_slice().iter().map(|&x| f(x)).collect())
}

fn hadamard(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    zip_map(a, b, |x, y| x * y)
}
