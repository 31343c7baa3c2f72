use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{AutodiffError, Result};
use crate::real::Real;
use crate::shape::{self, numel};

/// A primitive operation as recorded on the graph.
#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(T),
    AddScalar(T),
    MatMul { ta: bool, tb: bool },
    Transpose,
    Reshape,
    SumTo,
    BroadcastTo,
    Concat { axis: usize },
    Narrow { axis: usize, start: usize },
    Pad { axis: usize, start: usize },
    IndexSelect { indices: Rc<[usize]> },
    IndexAdd { indices: Rc<[usize]> },
    Exp,
    Log,
    Sqrt,
    Sigmoid,
    Tanh,
    Relu,
    Softmax { axis: usize },
}

impl<T> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::MatMul { .. } => "matmul",
            Op::Transpose => "transpose",
            Op::Reshape => "reshape",
            Op::SumTo => "sum_to",
            Op::BroadcastTo => "broadcast_to",
            Op::Concat { .. } => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Pad { .. } => "pad",
            Op::IndexSelect { .. } => "index_select",
            Op::IndexAdd { .. } => "index_add",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Sqrt => "sqrt",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Relu => "relu",
            Op::Softmax { .. } => "softmax",
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) op: Op<T>,
    pub(crate) inputs: Vec<usize>,
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Rc<Vec<T>>,
    pub(crate) requires_grad: bool,
}

struct Inner<T> {
    nodes: Vec<Node<T>>,
    strict: bool,
}

/// Append-only record of the operations of one computation.
///
/// A graph is single-threaded (`!Send`); build one per sample or per
/// evaluation context. Node ids are positions in the record, so every
/// operation's inputs have smaller ids than the operation itself.
pub struct Graph<T: Real = f64> {
    inner: Rc<RefCell<Inner<T>>>,
}

impl<T: Real> Clone for Graph<T> {
    fn clone(&self) -> Self {
        Self {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> fmt::Debug for Graph<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Graph")
            .field("nodes", &inner.nodes.len())
            .field("strict", &inner.strict)
            .finish()
    }
}

/// Outcome of re-executing every recorded operation from its saved inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayReport {
    pub replayed: usize,
    pub mismatched: Vec<usize>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self::with_strict(false)
    }

    /// In strict mode every operation rejects non-finite inputs.
    pub fn with_strict(strict: bool) -> Self {
        Self {
            inner: Rc::new(RefCell::new(Inner {
                nodes: Vec::new(),
                strict,
            })),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same(&self, other: &Graph<T>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    pub fn leaf(&self, data: Vec<T>, shape: &[usize], requires_grad: bool) -> Result<Tensor<T>> {
        if data.len() != numel(shape) {
            return Err(AutodiffError::InvalidArgument {
                op: "leaf",
                msg: format!("{} elements do not fill shape {:?}", data.len(), shape),
            });
        }
        let mut inner = self.inner.borrow_mut();
        if inner.strict && data.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite { op: "leaf" });
        }
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            shape: shape.to_vec(),
            value: Rc::new(data),
            requires_grad,
        });
        Ok(Tensor {
            graph: self.clone(),
            id,
            shape: shape.to_vec(),
        })
    }

    /// A leaf that gradients are taken with respect to.
    pub fn param(&self, data: Vec<T>, shape: &[usize]) -> Result<Tensor<T>> {
        self.leaf(data, shape, true)
    }

    pub fn constant(&self, data: Vec<T>, shape: &[usize]) -> Result<Tensor<T>> {
        self.leaf(data, shape, false)
    }

    pub fn scalar(&self, v: f64) -> Tensor<T> {
        self.full(&[], v)
    }

    pub fn full(&self, shape: &[usize], v: f64) -> Tensor<T> {
        self.leaf(vec![T::from_f64(v); numel(shape)], shape, false)
            .expect("filled buffer matches its shape")
    }

    pub fn zeros(&self, shape: &[usize]) -> Tensor<T> {
        self.full(shape, 0.0)
    }

    pub fn ones(&self, shape: &[usize]) -> Tensor<T> {
        self.full(shape, 1.0)
    }

    pub(crate) fn node_info(&self, id: usize) -> (Op<T>, Vec<usize>, Vec<usize>) {
        let inner = self.inner.borrow();
        let n = &inner.nodes[id];
        (n.op.clone(), n.inputs.clone(), n.shape.clone())
    }

    pub(crate) fn inputs_of(&self, id: usize) -> Vec<usize> {
        self.inner.borrow().nodes[id].inputs.clone()
    }

    pub(crate) fn value(&self, id: usize) -> Rc<Vec<T>> {
        Rc::clone(&self.inner.borrow().nodes[id].value)
    }

    pub(crate) fn handle(&self, id: usize) -> Tensor<T> {
        let shape = self.inner.borrow().nodes[id].shape.clone();
        Tensor {
            graph: self.clone(),
            id,
            shape,
        }
    }

    /// Run `op` on recorded inputs and append the result.
    pub(crate) fn record(
        &self,
        op: Op<T>,
        inputs: &[&Tensor<T>],
        out_shape: Vec<usize>,
    ) -> Result<Tensor<T>> {
        for t in inputs {
            if !t.graph.same(self) {
                return Err(AutodiffError::ForeignTensor { op: op.name() });
            }
        }
        let mut inner = self.inner.borrow_mut();
        let value = {
            let ins: Vec<(&[usize], &[T])> = inputs
                .iter()
                .map(|t| {
                    let n = &inner.nodes[t.id];
                    (n.shape.as_slice(), n.value.as_slice())
                })
                .collect();
            if inner.strict && ins.iter().any(|(_, v)| v.iter().any(|x| !x.is_finite())) {
                return Err(AutodiffError::NonFinite { op: op.name() });
            }
            compute(&op, &ins, &out_shape)
        };
        debug_assert_eq!(value.len(), numel(&out_shape), "{}", op.name());
        let requires_grad = inputs.iter().any(|t| inner.nodes[t.id].requires_grad);
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            op,
            inputs: inputs.iter().map(|t| t.id).collect(),
            shape: out_shape.clone(),
            value: Rc::new(value),
            requires_grad,
        });
        Ok(Tensor {
            graph: self.clone(),
            id,
            shape: out_shape,
        })
    }

    /// Recompute every non-leaf node from its recorded inputs and compare
    /// bit patterns with the stored values.
    pub fn replay(&self) -> ReplayReport {
        let inner = self.inner.borrow();
        let mut report = ReplayReport {
            replayed: 0,
            mismatched: Vec::new(),
        };
        for (id, node) in inner.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let ins: Vec<(&[usize], &[T])> = node
                .inputs
                .iter()
                .map(|&i| {
                    let n = &inner.nodes[i];
                    (n.shape.as_slice(), n.value.as_slice())
                })
                .collect();
            let fresh = compute(&node.op, &ins, &node.shape);
            report.replayed += 1;
            let same = fresh.len() == node.value.len()
                && fresh
                    .iter()
                    .zip(node.value.iter())
                    .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits());
            if !same {
                report.mismatched.push(id);
            }
        }
        report
    }
}

/// Handle to a node of a [`Graph`].
pub struct Tensor<T: Real = f64> {
    pub(crate) graph: Graph<T>,
    pub(crate) id: usize,
    pub(crate) shape: Vec<usize>,
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self {
            graph: self.graph.clone(),
            id: self.id,
            shape: self.shape.clone(),
        }
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape)
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.inner.borrow().nodes[self.id].requires_grad
    }

    pub fn value(&self) -> Rc<Vec<T>> {
        self.graph.value(self.id)
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.value().as_ref().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.value().iter().map(|v| v.as_f64()).collect()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on tensor of shape {:?}", self.shape);
        v[0]
    }

    /// A constant copy of this value with no history.
    pub fn detach(&self) -> Tensor<T> {
        self.graph
            .constant(self.to_vec(), &self.shape)
            .expect("copied buffer matches its shape")
    }
}

fn map<T: Real>(x: &[T], f: impl Fn(T) -> T) -> Vec<T> {
    x.iter().map(|&v| f(v)).collect()
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Forward kernel of every primitive. Shapes were validated when the
/// operation was recorded.
pub(crate) fn compute<T: Real>(op: &Op<T>, ins: &[(&[usize], &[T])], out: &[usize]) -> Vec<T> {
    match op {
        Op::Leaf => unreachable!("leaves are not computed"),
        Op::Add => shape::binary(ins[0].1, ins[0].0, ins[1].1, ins[1].0, out, |a, b| a + b),
        Op::Sub => shape::binary(ins[0].1, ins[0].0, ins[1].1, ins[1].0, out, |a, b| a - b),
        Op::Mul => shape::binary(ins[0].1, ins[0].0, ins[1].1, ins[1].0, out, |a, b| a * b),
        Op::Div => shape::binary(ins[0].1, ins[0].0, ins[1].1, ins[1].0, out, |a, b| a / b),
        Op::Neg => map(ins[0].1, |v| -v),
        Op::Scale(c) => map(ins[0].1, |v| v * *c),
        Op::AddScalar(c) => map(ins[0].1, |v| v + *c),
        Op::Exp => map(ins[0].1, |v| v.exp()),
        Op::Log => map(ins[0].1, |v| v.ln()),
        Op::Sqrt => map(ins[0].1, |v| v.sqrt()),
        Op::Sigmoid => map(ins[0].1, sigmoid),
        Op::Tanh => map(ins[0].1, |v| v.tanh()),
        Op::Relu => map(ins[0].1, |v| if v > T::zero() { v } else { T::zero() }),
        Op::MatMul { ta, tb } => {
            let (sa, a) = ins[0];
            let (sb, b) = ins[1];
            let r = sa.len();
            let batch = if r == 3 { sa[0] } else { 1 };
            let (sa, sb) = (&sa[r - 2..], &sb[r - 2..]);
            let (m, k) = if *ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
            let n = out[r - 1];
            // Row/column strides of op(A) and op(B) over row-major storage.
            let (rsa, csa) = if *ta {
                (1, sa[1] as isize)
            } else {
                (sa[1] as isize, 1)
            };
            let (rsb, csb) = if *tb {
                (1, sb[1] as isize)
            } else {
                (sb[1] as isize, 1)
            };
            let mut c = vec![T::zero(); batch * m * n];
            if m > 0 && n > 0 && k > 0 {
                for i in 0..batch {
                    T::gemm(
                        m,
                        k,
                        n,
                        &a[i * m * k..],
                        rsa,
                        csa,
                        &b[i * k * n..],
                        rsb,
                        csb,
                        &mut c[i * m * n..(i + 1) * m * n],
                    );
                }
            }
            c
        }
        Op::Transpose => {
            let (s, x) = ins[0];
            let (r, c) = (s[0], s[1]);
            let mut o = Vec::with_capacity(r * c);
            for j in 0..c {
                for i in 0..r {
                    o.push(x[i * c + j]);
                }
            }
            o
        }
        Op::Reshape => ins[0].1.to_vec(),
        Op::SumTo => shape::sum_to(ins[0].1, ins[0].0, out),
        Op::BroadcastTo => shape::broadcast_to(ins[0].1, ins[0].0, out),
        Op::Concat { axis } => {
            let (outer, _, inner) = shape::around_axis(out, *axis);
            let mut o = Vec::with_capacity(numel(out));
            for b in 0..outer {
                for (s, x) in ins {
                    let chunk = s[*axis] * inner;
                    o.extend_from_slice(&x[b * chunk..(b + 1) * chunk]);
                }
            }
            o
        }
        Op::Narrow { axis, start } => {
            let (s, x) = ins[0];
            let (outer, len_in, inner) = shape::around_axis(s, *axis);
            let len = out[*axis];
            let mut o = Vec::with_capacity(numel(out));
            for b in 0..outer {
                let base = (b * len_in + start) * inner;
                o.extend_from_slice(&x[base..base + len * inner]);
            }
            o
        }
        Op::Pad { axis, start } => {
            let (s, x) = ins[0];
            let (outer, len_out, inner) = shape::around_axis(out, *axis);
            let len = s[*axis];
            let mut o = vec![T::zero(); numel(out)];
            for b in 0..outer {
                let dst = (b * len_out + start) * inner;
                let src = b * len * inner;
                o[dst..dst + len * inner].copy_from_slice(&x[src..src + len * inner]);
            }
            o
        }
        Op::IndexSelect { indices } => {
            let (s, x) = ins[0];
            let inner = numel(&s[1..]);
            let mut o = Vec::with_capacity(indices.len() * inner);
            for &r in indices.iter() {
                o.extend_from_slice(&x[r * inner..(r + 1) * inner]);
            }
            o
        }
        Op::IndexAdd { indices } => {
            let (_, x) = ins[0];
            let inner = numel(&out[1..]);
            let mut o = vec![T::zero(); numel(out)];
            for (k, &r) in indices.iter().enumerate() {
                let dst = &mut o[r * inner..(r + 1) * inner];
                for (d, &v) in dst.iter_mut().zip(&x[k * inner..(k + 1) * inner]) {
                    *d = *d + v;
                }
            }
            o
        }
        Op::Softmax { axis } => {
            let (s, x) = ins[0];
            let (outer, len, inner) = shape::around_axis(s, *axis);
            let mut o = vec![T::zero(); x.len()];
            for b in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (b * len + j) * inner + i;
                    let mut mx = T::neg_infinity();
                    for j in 0..len {
                        mx = mx.max(x[at(j)]);
                    }
                    let mut total = T::zero();
                    for j in 0..len {
                        let e = (x[at(j)] - mx).exp();
                        o[at(j)] = e;
                        total = total + e;
                    }
                    for j in 0..len {
                        o[at(j)] = o[at(j)] / total;
                    }
                }
            }
            o
        }
    }
}
