//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every objective evaluation. Leaves are
//! registered with [`Graph::leaf`], operations append nodes in topological
//! order, and [`Graph::backward`] walks the tape in reverse, accumulating
//! gradients into every leaf that requires them.

mod adam;
mod gemm;
mod gradcheck;
pub mod ops;
mod pad;

pub use adam::AdamState;
pub use gradcheck::{grad_check, grad_check_stencil, grad_check_sweep, GradCheckReport, Probe, Stencil};
pub use pad::PadMode;
pub(crate) use gemm::gemm;
pub(crate) use pad::PadMap;

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; len] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![], data: vec![value] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let len: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..len).map(&mut f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    /// `(channels, height, width)` of a rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::dim(format!("expected [C,H,W], got {:?}", self.shape))),
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::dim(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Compensated (Neumaier) sum, so finite-difference checks of large
    /// reductions are not swamped by rounding.
    pub fn sum(&self) -> f64 {
        compensated_sum(&self.data)
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn compensated_sum(values: &[f64]) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for &v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + carry
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reverse-mode rule for one taped operation.
///
/// `inputs` are the parent values in the order they were recorded, `needs[i]`
/// says whether parent `i` requires a gradient. The returned vector has one
/// entry per parent; entries for parents that do not need a gradient may be
/// `None`.
pub trait Backward {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_out: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>>;
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    parents: Vec<Var>,
    op: Option<Box<dyn Backward>>,
    grad: Option<Tensor>,
}

/// Tape of recorded operations.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Vec::new(), None)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Record the result of an operation. The node requires a gradient when any
    /// parent does; otherwise the backward rule is dropped.
    pub fn record(&mut self, value: Tensor, parents: &[Var], op: impl Backward + 'static) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let op: Option<Box<dyn Backward>> = if requires_grad { Some(Box::new(op)) } else { None };
        self.push(value, requires_grad, parents.to_vec(), op)
    }

    fn push(
        &mut self,
        value: Tensor,
        requires_grad: bool,
        parents: Vec<Var>,
        op: Option<Box<dyn Backward>>,
    ) -> Var {
        self.nodes.push(Node { value, requires_grad, parents, op, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, populated by [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.nodes[v.0].grad.take()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Reverse sweep from a scalar loss. Gradients are added to whatever the
    /// leaves already hold, so calling this twice without [`Graph::zero_grads`]
    /// accumulates. Leaves that require a gradient but are unreachable from
    /// `loss` receive zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            pending[loss.0] = Some(vec![1.0]);
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            if self.nodes[i].op.is_none() {
                if self.nodes[i].requires_grad {
                    accumulate_leaf(&mut self.nodes[i], g);
                }
                continue;
            }
            let node = &self.nodes[i];
            let op = node.op.as_ref().expect("checked above");
            let inputs: Vec<&Tensor> = node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
            let needs: Vec<bool> =
                node.parents.iter().map(|p| self.nodes[p.0].requires_grad).collect();
            let parent_grads = op.backward(&inputs, &node.value, &g, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len(), "{}", op.name());
            for ((p, pg), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                let Some(pg) = pg else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(pg.len(), self.nodes[p.0].value.len(), "{}", op.name());
                match &mut pending[p.0] {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(pg),
                }
            }
        }

        for node in &mut self.nodes {
            if node.requires_grad && node.op.is_none() && node.grad.is_none() {
                node.grad = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(())
    }
}

fn accumulate_leaf(node: &mut Node, g: Vec<f64>) {
    match &mut node.grad {
        Some(acc) => acc.data.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => node.grad = Some(Tensor { shape: node.value.shape.clone(), data: g }),
    }
}
