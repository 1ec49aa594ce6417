use crate::kernels::{self, ConvGeometry};
use crate::tensor::Tensor;
use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Disables graph recording on this thread until dropped.
pub struct NoGradGuard {
    prev: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    NoGradGuard { prev }
}

enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Scale(f64),
    AddScalar,
    Exp,
    Log,
    Sqrt,
    Tanh,
    MulConst(Rc<Tensor>),
    BroadcastTo,
    SumTo,
    Reshape,
    Permute(Vec<usize>),
    MatMul,
    Im2Col(ConvGeometry),
    Col2Im(ConvGeometry),
    Upsample2,
    SumPool2,
    Concat(usize),
    Slice { axis: usize, start: usize },
    Pad { axis: usize, before: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    parents: Vec<Var>,
    requires_grad: bool,
}

/// A node in the computation graph. Cloning is cheap (reference counted).
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("value", &self.0.value)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Var {
    fn make(value: Tensor, op: Op, parents: Vec<Var>) -> Var {
        let requires_grad = is_grad_enabled() && parents.iter().any(|p| p.0.requires_grad);
        if requires_grad {
            Var(Rc::new(Node {
                value,
                op,
                parents,
                requires_grad,
            }))
        } else {
            Var::constant(value)
        }
    }

    /// A value that gradients never flow into.
    pub fn constant(value: Tensor) -> Var {
        Var(Rc::new(Node {
            value,
            op: Op::Leaf,
            parents: Vec::new(),
            requires_grad: false,
        }))
    }

    /// A differentiable leaf (parameter or input of interest).
    pub fn leaf(value: Tensor) -> Var {
        Var(Rc::new(Node {
            value,
            op: Op::Leaf,
            parents: Vec::new(),
            requires_grad: true,
        }))
    }

    pub fn scalar(value: f64) -> Var {
        Var::constant(Tensor::scalar(value))
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn item(&self) -> f64 {
        self.0.value.item()
    }

    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    fn key(&self) -> *const Node {
        Rc::as_ptr(&self.0)
    }

    fn binary(&self, other: &Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let shape = kernels::broadcast_shape(self.shape(), other.shape()).unwrap_or_else(|| {
            panic!(
                "shapes {:?} and {:?} do not broadcast",
                self.shape(),
                other.shape()
            )
        });
        let a = self.broadcast_to(&shape);
        let b = other.broadcast_to(&shape);
        let value = a.value().zip_map(b.value(), f);
        Var::make(value, op, vec![a, b])
    }

    pub fn add(&self, other: &Var) -> Var {
        self.binary(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Var) -> Var {
        self.binary(other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: &Var) -> Var {
        self.binary(other, Op::Mul, |a, b| a * b)
    }

    pub fn div(&self, other: &Var) -> Var {
        self.binary(other, Op::Div, |a, b| a / b)
    }

    pub fn scale(&self, c: f64) -> Var {
        Var::make(self.value().map(|x| x * c), Op::Scale(c), vec![self.clone()])
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        Var::make(self.value().map(|x| x + c), Op::AddScalar, vec![self.clone()])
    }

    pub fn exp(&self) -> Var {
        Var::make(self.value().map(f64::exp), Op::Exp, vec![self.clone()])
    }

    pub fn log(&self) -> Var {
        Var::make(self.value().map(f64::ln), Op::Log, vec![self.clone()])
    }

    pub fn sqrt(&self) -> Var {
        Var::make(self.value().map(f64::sqrt), Op::Sqrt, vec![self.clone()])
    }

    pub fn tanh(&self) -> Var {
        Var::make(self.value().map(f64::tanh), Op::Tanh, vec![self.clone()])
    }

    pub fn square(&self) -> Var {
        self.mul(self)
    }

    /// Elementwise product with a tensor that is treated as constant.
    pub fn mul_const(&self, mask: Rc<Tensor>) -> Var {
        let value = self.value().zip_map(&mask, |a, b| a * b);
        Var::make(value, Op::MulConst(mask), vec![self.clone()])
    }

    /// `max(x, slope * x)` for `0 <= slope <= 1`. The derivative mask is
    /// piecewise constant, so higher derivatives through it are zero.
    pub fn leaky_relu(&self, slope: f64) -> Var {
        let mask = self.value().map(|x| if x > 0.0 { 1.0 } else { slope });
        self.mul_const(Rc::new(mask))
    }

    pub fn relu(&self) -> Var {
        self.leaky_relu(0.0)
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        Var::make(
            kernels::broadcast_to(self.value(), shape),
            Op::BroadcastTo,
            vec![self.clone()],
        )
    }

    /// Sums broadcast dimensions away so the result has `shape`.
    pub fn sum_to(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        Var::make(kernels::sum_to(self.value(), shape), Op::SumTo, vec![self.clone()])
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&self) -> Var {
        self.sum_to(&[])
    }

    pub fn mean(&self) -> Var {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums over `axes`, keeping them as size-1 dimensions.
    pub fn sum_axes(&self, axes: &[usize]) -> Var {
        let mut shape = self.shape().to_vec();
        for &a in axes {
            shape[a] = 1;
        }
        self.sum_to(&shape)
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Var {
        let count: usize = axes.iter().map(|&a| self.shape()[a]).product();
        self.sum_axes(axes).scale(1.0 / count as f64)
    }

    pub fn reshape(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        Var::make(
            self.value().clone().reshaped(shape.to_vec()),
            Op::Reshape,
            vec![self.clone()],
        )
    }

    pub fn permute(&self, perm: &[usize]) -> Var {
        Var::make(
            kernels::permute(self.value(), perm),
            Op::Permute(perm.to_vec()),
            vec![self.clone()],
        )
    }

    /// Transpose of a 2-D tensor.
    pub fn t(&self) -> Var {
        self.permute(&[1, 0])
    }

    pub fn matmul(&self, other: &Var) -> Var {
        Var::make(
            kernels::matmul(self.value(), other.value()),
            Op::MatMul,
            vec![self.clone(), other.clone()],
        )
    }

    pub fn im2col(&self, geom: ConvGeometry) -> Var {
        Var::make(
            kernels::im2col(self.value(), &geom),
            Op::Im2Col(geom),
            vec![self.clone()],
        )
    }

    pub fn col2im(&self, geom: ConvGeometry) -> Var {
        Var::make(
            kernels::col2im(self.value(), &geom),
            Op::Col2Im(geom),
            vec![self.clone()],
        )
    }

    pub fn upsample2(&self) -> Var {
        Var::make(kernels::upsample2(self.value()), Op::Upsample2, vec![self.clone()])
    }

    pub fn sum_pool2(&self) -> Var {
        Var::make(kernels::sum_pool2(self.value()), Op::SumPool2, vec![self.clone()])
    }

    pub fn avg_pool2(&self) -> Var {
        self.sum_pool2().scale(0.25)
    }

    pub fn concat(parts: &[Var], axis: usize) -> Var {
        let values: Vec<&Tensor> = parts.iter().map(|p| p.value()).collect();
        Var::make(kernels::concat(&values, axis), Op::Concat(axis), parts.to_vec())
    }

    pub fn slice_axis(&self, axis: usize, start: usize, len: usize) -> Var {
        Var::make(
            kernels::slice_axis(self.value(), axis, start, len),
            Op::Slice { axis, start },
            vec![self.clone()],
        )
    }

    /// Zero-pads `before`/`after` entries along `axis`.
    pub fn pad_axis(&self, axis: usize, before: usize, after: usize) -> Var {
        Var::make(
            kernels::pad_axis(self.value(), axis, before, after),
            Op::Pad { axis, before },
            vec![self.clone()],
        )
    }

    /// Gradient contributions for each parent given the upstream gradient.
    fn backward(&self, g: &Var) -> Vec<Var> {
        let node = &self.0;
        let p = &node.parents;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add => vec![g.clone(), g.clone()],
            Op::Sub => vec![g.clone(), g.neg()],
            Op::Mul => vec![g.mul(&p[1]), g.mul(&p[0])],
            Op::Div => {
                let ga = g.div(&p[1]);
                let gb = ga.mul(self).neg();
                vec![ga, gb]
            }
            Op::Scale(c) => vec![g.scale(*c)],
            Op::AddScalar => vec![g.clone()],
            Op::Exp => vec![g.mul(self)],
            Op::Log => vec![g.div(&p[0])],
            Op::Sqrt => vec![g.scale(0.5).div(self)],
            Op::Tanh => vec![g.sub(&g.mul(&self.square()))],
            Op::MulConst(mask) => vec![g.mul_const(mask.clone())],
            Op::BroadcastTo => vec![g.sum_to(p[0].shape())],
            Op::SumTo => vec![g.broadcast_to(p[0].shape())],
            Op::Reshape => vec![g.reshape(p[0].shape())],
            Op::Permute(perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &q) in perm.iter().enumerate() {
                    inv[q] = i;
                }
                vec![g.permute(&inv)]
            }
            Op::MatMul => vec![g.matmul(&p[1].t()), p[0].t().matmul(g)],
            Op::Im2Col(geom) => vec![g.col2im(*geom)],
            Op::Col2Im(geom) => vec![g.im2col(*geom)],
            Op::Upsample2 => vec![g.sum_pool2()],
            Op::SumPool2 => vec![g.upsample2()],
            Op::Concat(axis) => {
                let mut start = 0;
                p.iter()
                    .map(|part| {
                        let len = part.shape()[*axis];
                        let s = g.slice_axis(*axis, start, len);
                        start += len;
                        s
                    })
                    .collect()
            }
            Op::Slice { axis, start } => {
                let dim = p[0].shape()[*axis];
                let len = self.shape()[*axis];
                vec![g.pad_axis(*axis, *start, dim - start - len)]
            }
            Op::Pad { axis, before } => {
                let len = p[0].shape()[*axis];
                vec![g.slice_axis(*axis, *before, len)]
            }
        }
    }
}

impl std::ops::Add for &Var {
    type Output = Var;
    fn add(self, rhs: &Var) -> Var {
        Var::add(self, rhs)
    }
}

impl std::ops::Sub for &Var {
    type Output = Var;
    fn sub(self, rhs: &Var) -> Var {
        Var::sub(self, rhs)
    }
}

impl std::ops::Mul for &Var {
    type Output = Var;
    fn mul(self, rhs: &Var) -> Var {
        Var::mul(self, rhs)
    }
}

impl std::ops::Div for &Var {
    type Output = Var;
    fn div(self, rhs: &Var) -> Var {
        Var::div(self, rhs)
    }
}

/// Gradients of `output` (summed over its elements) with respect to each of
/// `wrt`. Inputs that `output` does not depend on get a zero gradient.
///
/// With `create_graph` the returned gradients are themselves differentiable;
/// otherwise they are constants and no backward graph is retained.
pub fn grad(output: &Var, wrt: &[Var], create_graph: bool) -> Vec<Var> {
    let _guard = (!create_graph).then(no_grad);

    let targets: HashMap<*const Node, ()> = wrt.iter().map(|w| (w.key(), ())).collect();

    // Iterative post-order DFS over nodes that require grad, tracking which
    // ones lie on a path to some target.
    let mut order: Vec<Var> = Vec::new();
    let mut needed: HashMap<*const Node, bool> = HashMap::new();
    if output.requires_grad() {
        let mut stack: Vec<(Var, usize)> = vec![(output.clone(), 0)];
        let mut visited: HashMap<*const Node, ()> = HashMap::new();
        visited.insert(output.key(), ());
        while let Some((node, child)) = stack.pop() {
            if child < node.0.parents.len() {
                let parent = node.0.parents[child].clone();
                stack.push((node, child + 1));
                if parent.requires_grad() && !visited.contains_key(&parent.key()) {
                    visited.insert(parent.key(), ());
                    stack.push((parent, 0));
                }
            } else {
                let is_needed = targets.contains_key(&node.key())
                    || node
                        .0
                        .parents
                        .iter()
                        .any(|p| needed.get(&p.key()).copied().unwrap_or(false));
                needed.insert(node.key(), is_needed);
                order.push(node);
            }
        }
    }

    let mut grads: HashMap<*const Node, Var> = HashMap::new();
    grads.insert(output.key(), Var::constant(Tensor::ones(output.shape().to_vec())));
    for node in order.iter().rev() {
        if !needed[&node.key()] {
            continue;
        }
        let Some(g) = grads.get(&node.key()).cloned() else {
            continue;
        };
        if matches!(node.0.op, Op::Leaf) {
            continue;
        }
        let contributions = node.backward(&g);
        for (parent, contribution) in node.0.parents.iter().zip(contributions) {
            if !needed.get(&parent.key()).copied().unwrap_or(false) {
                continue;
            }
            let entry = match grads.remove(&parent.key()) {
                Some(acc) => acc.add(&contribution),
                None => contribution,
            };
            grads.insert(parent.key(), entry);
        }
    }

    wrt.iter()
        .map(|w| match grads.get(&w.key()) {
            Some(g) if create_graph => g.clone(),
            Some(g) => g.detach(),
            None => Var::constant(Tensor::zeros(w.shape().to_vec())),
        })
        .collect()
}
