//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is a single-use tape: build the forward pass through [`Var`]
//! handles, call [`Graph::backward`] on a scalar loss, and read parameter
//! gradients out of the returned [`Gradients`]. Nodes that do not depend on any
//! trainable parameter never receive a gradient, so values produced by
//! [`Var::detach`] (stop gradient) or frozen stores contribute exactly zero.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use crate::params::{ParamId, ParamStore, StoreKind};
use crate::scalar::Scalar;
use crate::spectral::{self, StftCache};
use crate::tensor::{self, Conv1dSpec, Conv2dSpec, Tensor};

type NodeId = usize;

#[derive(Clone)]
enum Op<T> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddColumn(NodeId, NodeId),
    MulColumn(NodeId, NodeId),
    Scale(NodeId, T),
    AddScalar(NodeId),
    MatMul(NodeId, NodeId),
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        spec: Conv1dSpec,
    },
    ConvTranspose1d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        padding: usize,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        spec: Conv2dSpec,
    },
    Exp(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    LeakyRelu(NodeId, T),
    Abs(NodeId),
    Square(NodeId),
    Log(NodeId),
    Clamp(NodeId, T, T),
    Sum(NodeId),
    MeanCols(NodeId),
    SliceRows(NodeId, usize),
    SliceCols(NodeId, usize),
    ConcatRows(Vec<NodeId>),
    FlipRows(NodeId),
    GatherCols(NodeId, Rc<Vec<usize>>),
    Reshape(NodeId),
    StftMagnitude(NodeId, Rc<StftCache<T>>),
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Single-use computation tape.
pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<BTreeMap<ParamId, NodeId>>,
    frozen: BTreeSet<StoreKind>,
    stops: StopGradients<T>,
}

/// What [`Var::detach`] does besides cutting the gradient. Recording and
/// replaying let a finite-difference check hold every stop-gradient input at
/// its unperturbed value, which is exactly the function autodiff differentiates.
enum StopGradients<T> {
    Pass,
    Record(RefCell<Vec<Tensor<T>>>),
    Replay(Vec<Tensor<T>>, std::cell::Cell<usize>),
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Scalar> {
    graph: &'g Graph<T>,
    id: NodeId,
}

/// Parameter gradients produced by [`Graph::backward`].
///
/// Parameters that the loss does not reach are absent, which is the same as an
/// exactly-zero gradient.
#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    grads: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Tensor<T>)> {
        self.grads.iter()
    }

    /// Squared L2 norm of the gradients of every parameter whose id satisfies `pred`.
    pub fn sq_norm_where(&self, pred: impl Fn(ParamId) -> bool) -> T {
        self.grads
            .iter()
            .filter(|(id, _)| pred(**id))
            .map(|(_, g)| g.data().iter().map(|v| *v * *v).sum::<T>())
            .sum()
    }

    pub fn accumulate(&mut self, other: Gradients<T>, scale: T) {
        for (id, g) in other.grads {
            let scaled = g.map(|v| v * scale);
            match self.grads.get_mut(&id) {
                Some(acc) => acc.add_assign(&scaled),
                None => {
                    self.grads.insert(id, scaled);
                }
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.values().all(Tensor::all_finite)
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(BTreeMap::new()),
            frozen: BTreeSet::new(),
            stops: StopGradients::Pass,
        }
    }

    /// Remember the value of every stop gradient, in order; see [`Self::stopped_values`].
    pub fn recording_stops(mut self) -> Self {
        self.stops = StopGradients::Record(RefCell::new(Vec::new()));
        self
    }

    /// Stop gradients return `values` (from a recording graph) in order
    /// instead of their inputs. The graph must be built the same way.
    pub fn replaying_stops(mut self, values: Vec<Tensor<T>>) -> Self {
        self.stops = StopGradients::Replay(values, std::cell::Cell::new(0));
        self
    }

    pub fn stopped_values(&self) -> Vec<Tensor<T>> {
        match &self.stops {
            StopGradients::Record(log) => log.borrow().clone(),
            _ => Vec::new(),
        }
    }

    /// A graph on which parameters of `kind` are read as constants.
    pub fn freezing(kind: StoreKind) -> Self {
        let mut g = Self::new();
        g.frozen.insert(kind);
        g
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.borrow().len()
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: NodeId) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn unary(&self, x: NodeId, value: Tensor<T>, op: Op<T>) -> Var<'_, T> {
        let rg = self.requires(x);
        self.push(value, op, rg)
    }

    /// A value that never receives gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    /// A parameter leaf. Repeated requests for the same id share one node.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        if id.store() == StoreKind::Frozen || self.frozen.contains(&id.store()) {
            return self.constant(store.get(id).clone());
        }
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var { graph: self, id: node };
        }
        let var = self.push(store.get(id).clone(), Op::Leaf, true);
        self.params.borrow_mut().insert(id, var.id);
        var
    }

    /// Backpropagate from a single-element `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.id].value.len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.id + 1];
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(Tensor::full(nodes[loss.id].value.shape(), T::one()));
        }
        for id in (0..=loss.id).rev() {
            let Some(grad) = grads[id].take() else { continue };
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(grad);
                continue;
            }
            backprop_node(&nodes, node, &grad, &mut grads);
        }
        let mut out = Gradients::default();
        for (pid, node) in self.params.borrow().iter() {
            if let Some(Some(g)) = grads.get(*node) {
                out.grads.insert(*pid, g.clone());
            }
        }
        out
    }
}

fn accumulate<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Tensor<T>>],
    id: NodeId,
    g: Tensor<T>,
) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn row_sums<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let (rows, _) = g.dims2();
    Tensor::new(vec![rows, 1], (0..rows).map(|r| g.row(r).iter().copied().sum()).collect())
}

fn backprop_node<T: Scalar>(
    nodes: &[Node<T>],
    node: &Node<T>,
    grad: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let val = |id: NodeId| -> &Tensor<T> { &nodes[id].value };
    let needs = |id: NodeId| nodes[id].requires_grad;
    let out = &*node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, grad.clone());
            accumulate(nodes, grads, *b, grad.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, grad.clone());
            if needs(*b) {
                accumulate(nodes, grads, *b, grad.map(|v| -v));
            }
        }
        Op::Mul(a, b) => {
            if needs(*a) {
                accumulate(nodes, grads, *a, grad.zip_map(val(*b), |g, y| g * y));
            }
            if needs(*b) {
                accumulate(nodes, grads, *b, grad.zip_map(val(*a), |g, x| g * x));
            }
        }
        Op::AddColumn(x, c) => {
            accumulate(nodes, grads, *x, grad.clone());
            if needs(*c) {
                let shape = val(*c).shape().to_vec();
                accumulate(nodes, grads, *c, row_sums(grad).reshape(&shape));
            }
        }
        Op::MulColumn(x, c) => {
            let cv = val(*c);
            let (rows, cols) = grad.dims2();
            if needs(*x) {
                let g = Tensor::from_fn(&[rows, cols], |i| grad.data()[i] * cv.data()[i / cols]);
                accumulate(nodes, grads, *x, g);
            }
            if needs(*c) {
                let xv = val(*x);
                let sums: Vec<T> = (0..rows)
                    .map(|r| {
                        grad.row(r)
                            .iter()
                            .zip(xv.row(r))
                            .map(|(&g, &x)| g * x)
                            .sum()
                    })
                    .collect();
                accumulate(nodes, grads, *c, Tensor::new(cv.shape().to_vec(), sums));
            }
        }
        Op::Scale(x, s) => {
            let s = *s;
            accumulate(nodes, grads, *x, grad.map(|v| v * s));
        }
        Op::AddScalar(x) => accumulate(nodes, grads, *x, grad.clone()),
        Op::MatMul(a, b) => {
            if needs(*a) {
                accumulate(nodes, grads, *a, tensor::matmul(grad, false, val(*b), true));
            }
            if needs(*b) {
                accumulate(nodes, grads, *b, tensor::matmul(val(*a), true, grad, false));
            }
        }
        Op::Conv1d { x, w, b, spec } => {
            let (dx, dw, db) =
                tensor::conv1d_backward(grad, val(*x), val(*w), spec, needs(*x), needs(*w));
            if let Some(dx) = dx {
                accumulate(nodes, grads, *x, dx);
            }
            if let Some(dw) = dw {
                accumulate(nodes, grads, *w, dw);
            }
            if let Some(b) = b {
                accumulate(nodes, grads, *b, db);
            }
        }
        Op::ConvTranspose1d {
            x,
            w,
            b,
            stride,
            padding,
        } => {
            let (dx, dw, db) = tensor::conv_transpose1d_backward(
                grad,
                val(*x),
                val(*w),
                *stride,
                *padding,
                needs(*x),
                needs(*w),
            );
            if let Some(dx) = dx {
                accumulate(nodes, grads, *x, dx);
            }
            if let Some(dw) = dw {
                accumulate(nodes, grads, *w, dw);
            }
            if let Some(b) = b {
                accumulate(nodes, grads, *b, db);
            }
        }
        Op::Conv2d { x, w, b, spec } => {
            let (dx, dw, db) =
                tensor::conv2d_backward(grad, val(*x), val(*w), spec, needs(*x), needs(*w));
            if let Some(dx) = dx {
                accumulate(nodes, grads, *x, dx);
            }
            if let Some(dw) = dw {
                accumulate(nodes, grads, *w, dw);
            }
            if let Some(b) = b {
                accumulate(nodes, grads, *b, db);
            }
        }
        Op::Exp(x) => accumulate(nodes, grads, *x, grad.zip_map(out, |g, y| g * y)),
        Op::Tanh(x) => accumulate(
            nodes,
            grads,
            *x,
            grad.zip_map(out, |g, y| g * (T::one() - y * y)),
        ),
        Op::Sigmoid(x) => accumulate(
            nodes,
            grads,
            *x,
            grad.zip_map(out, |g, y| g * y * (T::one() - y)),
        ),
        Op::Relu(x) => accumulate(
            nodes,
            grads,
            *x,
            grad.zip_map(val(*x), |g, x| if x > T::zero() { g } else { T::zero() }),
        ),
        Op::LeakyRelu(x, slope) => {
            let s = *slope;
            accumulate(
                nodes,
                grads,
                *x,
                grad.zip_map(val(*x), |g, x| if x > T::zero() { g } else { g * s }),
            )
        }
        Op::Abs(x) => accumulate(
            nodes,
            grads,
            *x,
            grad.zip_map(val(*x), |g, x| {
                if x > T::zero() {
                    g
                } else if x < T::zero() {
                    -g
                } else {
                    T::zero()
                }
            }),
        ),
        Op::Square(x) => accumulate(
            nodes,
            grads,
            *x,
            grad.zip_map(val(*x), |g, x| g * x * T::lit(2.0)),
        ),
        Op::Log(x) => accumulate(nodes, grads, *x, grad.zip_map(val(*x), |g, x| g / x)),
        Op::Clamp(x, lo, hi) => {
            let (lo, hi) = (*lo, *hi);
            accumulate(
                nodes,
                grads,
                *x,
                grad.zip_map(val(*x), |g, x| if x >= lo && x <= hi { g } else { T::zero() }),
            )
        }
        Op::Sum(x) => {
            let g = grad.data()[0];
            accumulate(nodes, grads, *x, Tensor::full(val(*x).shape(), g));
        }
        Op::MeanCols(x) => {
            let (rows, cols) = val(*x).dims2();
            let inv = T::one() / T::lit(cols as f64);
            let g = Tensor::from_fn(&[rows, cols], |i| grad.data()[i / cols] * inv);
            accumulate(nodes, grads, *x, g);
        }
        Op::SliceRows(x, start) => {
            let (rows, cols) = val(*x).dims2();
            let mut g = Tensor::zeros(&[rows, cols]);
            let n = grad.len();
            g.data_mut()[start * cols..start * cols + n].copy_from_slice(grad.data());
            accumulate(nodes, grads, *x, g);
        }
        Op::SliceCols(x, start) => {
            let (rows, cols) = val(*x).dims2();
            let (_, w) = grad.dims2();
            let mut g = Tensor::zeros(&[rows, cols]);
            for r in 0..rows {
                g.data_mut()[r * cols + start..r * cols + start + w].copy_from_slice(grad.row(r));
            }
            accumulate(nodes, grads, *x, g);
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let (rows, _) = val(p).dims2();
                if needs(p) {
                    accumulate(nodes, grads, p, grad.slice_rows(offset, offset + rows));
                }
                offset += rows;
            }
        }
        Op::FlipRows(x) => {
            let (rows, cols) = grad.dims2();
            let g = Tensor::from_fn(&[rows, cols], |i| {
                let (r, c) = (i / cols, i % cols);
                grad.data()[(rows - 1 - r) * cols + c]
            });
            accumulate(nodes, grads, *x, g);
        }
        Op::GatherCols(x, idx) => {
            let (rows, cols) = val(*x).dims2();
            let n = idx.len();
            let mut g = Tensor::zeros(&[rows, cols]);
            for r in 0..rows {
                for (t, &src) in idx.iter().enumerate() {
                    g.data_mut()[r * cols + src] += grad.data()[r * n + t];
                }
            }
            accumulate(nodes, grads, *x, g);
        }
        Op::Reshape(x) => {
            let shape = val(*x).shape().to_vec();
            accumulate(nodes, grads, *x, grad.clone().reshape(&shape));
        }
        Op::StftMagnitude(x, cache) => {
            let shape = val(*x).shape().to_vec();
            let g = spectral::stft_magnitude_backward(cache, grad).reshape(&shape);
            accumulate(nodes, grads, *x, g);
        }
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires(self.id)
    }

    /// First element of the value; convenient for scalar losses.
    pub fn item(&self) -> T {
        self.value().data()[0]
    }

    fn binary(self, other: Var<'g, T>, value: Tensor<T>, op: Op<T>) -> Var<'g, T> {
        let rg = self.requires_grad() || other.requires_grad();
        self.graph.push(value, op, rg)
    }

    /// Same value, cut from every producer (stop gradient).
    pub fn detach(self) -> Var<'g, T> {
        let v = match &self.graph.stops {
            StopGradients::Pass => (*self.value()).clone(),
            StopGradients::Record(log) => {
                let v = (*self.value()).clone();
                log.borrow_mut().push(v.clone());
                v
            }
            StopGradients::Replay(values, cursor) => {
                let i = cursor.get();
                cursor.set(i + 1);
                let v = values.get(i).expect("replayed graph has more stop gradients than recorded").clone();
                assert_eq!(v.shape(), self.value().shape(), "replayed stop gradient {i} changed shape");
                v
            }
        };
        self.graph.constant(v)
    }

    pub fn add(self, other: Var<'g, T>) -> Var<'g, T> {
        let v = self.value().zip_map(&other.value(), |a, b| a + b);
        self.binary(other, v, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'g, T>) -> Var<'g, T> {
        let v = self.value().zip_map(&other.value(), |a, b| a - b);
        self.binary(other, v, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'g, T>) -> Var<'g, T> {
        let v = self.value().zip_map(&other.value(), |a, b| a * b);
        self.binary(other, v, Op::Mul(self.id, other.id))
    }

    /// `[C, T] + [C, 1]`, broadcasting the column over time.
    pub fn add_column(self, column: Var<'g, T>) -> Var<'g, T> {
        let x = self.value();
        let c = column.value();
        let (rows, cols) = x.dims2();
        assert_eq!(c.len(), rows, "column length {} != rows {rows}", c.len());
        let v = Tensor::from_fn(&[rows, cols], |i| x.data()[i] + c.data()[i / cols]);
        self.binary(column, v, Op::AddColumn(self.id, column.id))
    }

    /// `[C, T] * [C, 1]`, broadcasting the column over time.
    pub fn mul_column(self, column: Var<'g, T>) -> Var<'g, T> {
        let x = self.value();
        let c = column.value();
        let (rows, cols) = x.dims2();
        assert_eq!(c.len(), rows);
        let v = Tensor::from_fn(&[rows, cols], |i| x.data()[i] * c.data()[i / cols]);
        self.binary(column, v, Op::MulColumn(self.id, column.id))
    }

    pub fn scale(self, s: T) -> Var<'g, T> {
        let v = self.value().map(|a| a * s);
        self.graph.unary(self.id, v, Op::Scale(self.id, s))
    }

    pub fn neg(self) -> Var<'g, T> {
        self.scale(-T::one())
    }

    pub fn add_scalar(self, s: T) -> Var<'g, T> {
        let v = self.value().map(|a| a + s);
        self.graph.unary(self.id, v, Op::AddScalar(self.id))
    }

    pub fn matmul(self, other: Var<'g, T>) -> Var<'g, T> {
        let v = tensor::matmul(&self.value(), false, &other.value(), false);
        self.binary(other, v, Op::MatMul(self.id, other.id))
    }

    pub fn conv1d(self, w: Var<'g, T>, b: Option<Var<'g, T>>, spec: Conv1dSpec) -> Var<'g, T> {
        let bv = b.map(|b| b.value());
        let v = tensor::conv1d(&self.value(), &w.value(), bv.as_deref(), &spec);
        let rg = self.requires_grad() || w.requires_grad() || b.is_some_and(|b| b.requires_grad());
        self.graph.push(
            v,
            Op::Conv1d {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
                spec,
            },
            rg,
        )
    }

    pub fn conv_transpose1d(
        self,
        w: Var<'g, T>,
        b: Option<Var<'g, T>>,
        stride: usize,
        padding: usize,
    ) -> Var<'g, T> {
        let bv = b.map(|b| b.value());
        let v = tensor::conv_transpose1d(&self.value(), &w.value(), bv.as_deref(), stride, padding);
        let rg = self.requires_grad() || w.requires_grad() || b.is_some_and(|b| b.requires_grad());
        self.graph.push(
            v,
            Op::ConvTranspose1d {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
                stride,
                padding,
            },
            rg,
        )
    }

    pub fn conv2d(self, w: Var<'g, T>, b: Option<Var<'g, T>>, spec: Conv2dSpec) -> Var<'g, T> {
        let bv = b.map(|b| b.value());
        let v = tensor::conv2d(&self.value(), &w.value(), bv.as_deref(), &spec);
        let rg = self.requires_grad() || w.requires_grad() || b.is_some_and(|b| b.requires_grad());
        self.graph.push(
            v,
            Op::Conv2d {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
                spec,
            },
            rg,
        )
    }

    pub fn exp(self) -> Var<'g, T> {
        let v = self.value().map(|a| a.exp());
        self.graph.unary(self.id, v, Op::Exp(self.id))
    }

    pub fn tanh(self) -> Var<'g, T> {
        let v = self.value().map(|a| a.tanh());
        self.graph.unary(self.id, v, Op::Tanh(self.id))
    }

    pub fn sigmoid(self) -> Var<'g, T> {
        let v = self.value().map(|a| T::one() / (T::one() + (-a).exp()));
        self.graph.unary(self.id, v, Op::Sigmoid(self.id))
    }

    pub fn relu(self) -> Var<'g, T> {
        let v = self.value().map(|a| a.max(T::zero()));
        self.graph.unary(self.id, v, Op::Relu(self.id))
    }

    pub fn leaky_relu(self, slope: T) -> Var<'g, T> {
        let v = self.value().map(|a| if a > T::zero() { a } else { a * slope });
        self.graph.unary(self.id, v, Op::LeakyRelu(self.id, slope))
    }

    pub fn abs(self) -> Var<'g, T> {
        let v = self.value().map(|a| a.abs());
        self.graph.unary(self.id, v, Op::Abs(self.id))
    }

    pub fn square(self) -> Var<'g, T> {
        let v = self.value().map(|a| a * a);
        self.graph.unary(self.id, v, Op::Square(self.id))
    }

    pub fn ln(self) -> Var<'g, T> {
        let v = self.value().map(|a| a.ln());
        self.graph.unary(self.id, v, Op::Log(self.id))
    }

    /// Clamp to `[lo, hi]`; gradient is zero outside the interval.
    pub fn clamp(self, lo: T, hi: T) -> Var<'g, T> {
        let v = self.value().map(|a| a.max(lo).min(hi));
        self.graph.unary(self.id, v, Op::Clamp(self.id, lo, hi))
    }

    pub fn sum(self) -> Var<'g, T> {
        let v = Tensor::scalar(self.value().sum());
        self.graph.unary(self.id, v, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'g, T> {
        let n = self.value().len();
        self.sum().scale(T::one() / T::lit(n as f64))
    }

    /// Average over time: `[C, T] -> [C, 1]`.
    pub fn mean_cols(self) -> Var<'g, T> {
        let v = self.value().mean_cols();
        self.graph.unary(self.id, v, Op::MeanCols(self.id))
    }

    pub fn slice_rows(self, start: usize, end: usize) -> Var<'g, T> {
        let v = self.value().slice_rows(start, end);
        self.graph.unary(self.id, v, Op::SliceRows(self.id, start))
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Var<'g, T> {
        let v = self.value().slice_cols(start, end);
        self.graph.unary(self.id, v, Op::SliceCols(self.id, start))
    }

    pub fn concat_rows(parts: &[Var<'g, T>]) -> Var<'g, T> {
        let graph = parts[0].graph;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let cols = values[0].dims2().1;
        let mut data = Vec::new();
        let mut rows = 0;
        for v in &values {
            let (r, c) = v.dims2();
            assert_eq!(c, cols, "concat_rows column mismatch");
            rows += r;
            data.extend_from_slice(v.data());
        }
        let rg = parts.iter().any(|p| p.requires_grad());
        graph.push(
            Tensor::new(vec![rows, cols], data),
            Op::ConcatRows(parts.iter().map(|p| p.id).collect()),
            rg,
        )
    }

    /// Reverse channel order.
    pub fn flip_rows(self) -> Var<'g, T> {
        let x = self.value();
        let (rows, cols) = x.dims2();
        let v = Tensor::from_fn(&[rows, cols], |i| {
            let (r, c) = (i / cols, i % cols);
            x.data()[(rows - 1 - r) * cols + c]
        });
        self.graph.unary(self.id, v, Op::FlipRows(self.id))
    }

    /// `out[:, t] = self[:, index[t]]`.
    pub fn gather_cols(self, index: &[usize]) -> Var<'g, T> {
        let x = self.value();
        let (rows, cols) = x.dims2();
        let n = index.len();
        let mut data = vec![T::zero(); rows * n];
        for r in 0..rows {
            for (t, &src) in index.iter().enumerate() {
                assert!(src < cols, "gather index {src} out of range {cols}");
                data[r * n + t] = x.data()[r * cols + src];
            }
        }
        self.graph.unary(
            self.id,
            Tensor::new(vec![rows, n], data),
            Op::GatherCols(self.id, Rc::new(index.to_vec())),
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g, T> {
        let v = (*self.value()).clone().reshape(shape);
        self.graph.unary(self.id, v, Op::Reshape(self.id))
    }

    /// Magnitude STFT of a `[1, L]` waveform with the pipeline's framing.
    pub fn stft_magnitude(self) -> Var<'g, T> {
        let x = self.value();
        let (mag, cache) = spectral::stft_magnitude_with_cache(x.data());
        self.graph
            .unary(self.id, mag, Op::StftMagnitude(self.id, Rc::new(cache)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;

    fn fd_check(
        store: &ParamStore<f64>,
        id: ParamId,
        loss: impl Fn(&ParamStore<f64>) -> f64,
        analytic: &Tensor<f64>,
    ) {
        let h = 1e-6;
        for i in 0..store.get(id).len() {
            let mut plus = store.clone();
            plus.get_mut(id).data_mut()[i] += h;
            let mut minus = store.clone();
            minus.get_mut(id).data_mut()[i] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let a = analytic.data()[i];
            assert!(
                (fd - a).abs() <= 1e-6 * (1.0 + fd.abs()),
                "param elem {i}: fd {fd} vs analytic {a}"
            );
        }
    }

    #[test]
    fn elementwise_chain_gradients_match_finite_differences() {
        let mut store = ParamStore::new(StoreKind::Generator);
        let a = store.insert("a", Tensor::new(vec![2, 3], vec![0.3, -0.2, 0.5, 1.1, -0.7, 0.05]));
        let c = store.insert("c", Tensor::new(vec![2, 1], vec![0.4, -0.9]));
        let loss = |s: &ParamStore<f64>| {
            let g = Graph::new();
            let x = g.param(s, a);
            let col = g.param(s, c);
            let y = x.add_column(col).tanh().mul(x.sigmoid()).add(x.exp().scale(0.1));
            let z = y.leaky_relu(0.1).square().sum().add(x.mul_column(col).abs().sum());
            (g.backward(z), z.item())
        };
        let (grads, _) = loss(&store);
        fd_check(&store, a, |s| loss(s).1, grads.get(a).unwrap());
        fd_check(&store, c, |s| loss(s).1, grads.get(c).unwrap());
    }

    #[test]
    fn structural_ops_gradients_match_finite_differences() {
        let mut store = ParamStore::new(StoreKind::Generator);
        let a = store.insert("a", Tensor::from_fn(&[4, 5], |i| (i as f64 * 0.37).sin()));
        let w = store.insert("w", Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.11).cos()));
        let loss = |s: &ParamStore<f64>| {
            let g = Graph::new();
            let x = g.param(s, a);
            let m = g.param(s, w);
            let top = x.slice_rows(0, 2);
            let bottom = x.slice_rows(2, 4).flip_rows();
            let cat = Var::concat_rows(&[bottom, top.scale(2.0)]);
            let gathered = cat.gather_cols(&[0, 0, 3, 4, 4, 4, 1]);
            let prod = m.matmul(gathered).slice_cols(1, 6);
            let z = prod.square().mean().add(x.mean_cols().square().sum());
            (g.backward(z), z.item())
        };
        let (grads, _) = loss(&store);
        fd_check(&store, a, |s| loss(s).1, grads.get(a).unwrap());
        fd_check(&store, w, |s| loss(s).1, grads.get(w).unwrap());
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut store = ParamStore::new(StoreKind::Generator);
        let x = store.insert("x", Tensor::from_fn(&[4, 9], |i| (i as f64 * 0.53).sin()));
        let w = store.insert("w", Tensor::from_fn(&[4, 2, 3], |i| (i as f64 * 0.29).cos() * 0.3));
        let b = store.insert("b", Tensor::new(vec![4], vec![0.1, -0.2, 0.3, 0.0]));
        let wt = store.insert("wt", Tensor::from_fn(&[4, 2, 4], |i| (i as f64 * 0.71).sin() * 0.2));
        let spec = Conv1dSpec { stride: 2, padding: 1, dilation: 1, groups: 2 };
        let loss = |s: &ParamStore<f64>| {
            let g = Graph::new();
            let h = g
                .param(s, x)
                .conv1d(g.param(s, w), Some(g.param(s, b)), spec)
                .tanh()
                .conv_transpose1d(g.param(s, wt), None, 2, 1);
            let z = h.square().sum();
            (g.backward(z), z.item())
        };
        let (grads, _) = loss(&store);
        for id in [x, w, b, wt] {
            fd_check(&store, id, |s| loss(s).1, grads.get(id).unwrap());
        }
    }

    #[test]
    fn conv2d_gradients_match_finite_differences() {
        let mut store = ParamStore::new(StoreKind::Generator);
        let x = store.insert("x", Tensor::from_fn(&[1, 6, 5], |i| (i as f64 * 0.41).sin()));
        let w = store.insert("w", Tensor::from_fn(&[2, 1, 3, 3], |i| (i as f64 * 0.23).cos() * 0.3));
        let spec = Conv2dSpec { stride: (2, 2), padding: (1, 1) };
        let loss = |s: &ParamStore<f64>| {
            let g = Graph::new();
            let h = g.param(s, x).conv2d(g.param(s, w), None, spec).relu();
            let (c, hh, ww) = h.value().dims3();
            let z = h.reshape(&[c * hh, ww]).square().sum();
            (g.backward(z), z.item())
        };
        let (grads, _) = loss(&store);
        fd_check(&store, x, |s| loss(s).1, grads.get(x).unwrap());
        fd_check(&store, w, |s| loss(s).1, grads.get(w).unwrap());
    }

    #[test]
    fn detach_blocks_gradient_exactly() {
        let mut store = ParamStore::new(StoreKind::Generator);
        let a = store.insert("a", Tensor::new(vec![1, 2], vec![0.5, 2.0]));
        let b = store.insert("b", Tensor::new(vec![1, 2], vec![1.5, -1.0]));
        let g = Graph::new();
        let x = g.param(&store, a);
        let y = g.param(&store, b);
        let stopped = x.mul(y).detach();
        assert_eq!(*stopped.value(), *x.mul(y).value());
        let loss = stopped.mul(y).sum();
        let grads = g.backward(loss);
        assert!(grads.get(a).is_none());
        assert!(grads.get(b).is_some());
    }

    #[test]
    fn replayed_stop_gradients_match_autodiff_under_finite_differences() {
        // loss = sum(sg(a * b) * b): with sg held fixed, d/db = sg(a * b).
        let mut store = ParamStore::new(StoreKind::Generator);
        let a = store.insert("a", Tensor::new(vec![1, 2], vec![0.5, 2.0]));
        let b = store.insert("b", Tensor::new(vec![1, 2], vec![1.5, -1.0]));
        fn loss<'g>(g: &'g Graph<f64>, s: &ParamStore<f64>, a: ParamId, b: ParamId) -> Var<'g, f64> {
            let (x, y) = (g.param(s, a), g.param(s, b));
            x.mul(y).detach().mul(y).sum()
        }
        let build = |g: &Graph<f64>, s: &ParamStore<f64>| loss(g, s, a, b).item();
        let g = Graph::new().recording_stops();
        let grads = g.backward(loss(&g, &store, a, b));
        let stops = g.stopped_values();
        assert_eq!(stops.len(), 1);
        fd_check(
            &store,
            b,
            |s| {
                let g = Graph::new().replaying_stops(stops.clone());
                build(&g, s)
            },
            grads.get(b).unwrap(),
        );
    }

    #[test]
    fn frozen_store_yields_no_gradients() {
        let mut gen = ParamStore::new(StoreKind::Generator);
        let mut disc = ParamStore::new(StoreKind::Discriminator);
        let a = gen.insert("a", Tensor::new(vec![1, 1], vec![0.5]));
        let d = disc.insert("d", Tensor::new(vec![1, 1], vec![3.0]));
        let g = Graph::freezing(StoreKind::Discriminator);
        let loss = g.param(&gen, a).mul(g.param(&disc, d)).sum();
        let grads = g.backward(loss);
        assert_eq!(grads.get(a).unwrap().data(), &[3.0]);
        assert!(grads.get(d).is_none());
    }
}
