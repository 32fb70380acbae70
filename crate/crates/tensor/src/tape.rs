use crate::conv::{conv2d, conv2d_backward, ConvSpec};
use crate::element::Element;
use crate::error::{check_same_shape, Result, TensorError};
use crate::tensor::{Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        spec: ConvSpec,
    },
    Relu(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    SliceChannels { input: Var, start: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MuLaw { input: Var, mu: T },
    Clamp { input: Var, lo: T, hi: T },
    Abs(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            } => vec![*input, *weight, *bias],
            Op::Concat(parts) => parts.clone(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Scale(x, _)
            | Op::Abs(x)
            | Op::Square(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::SliceChannels { input: x, .. }
            | Op::MuLaw { input: x, .. }
            | Op::Clamp { input: x, .. } => vec![*x],
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Eager execution record for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so the node list is always a
/// topological order of the computation graph.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Gradients are accumulated for it during
    /// [`backward`](Self::backward) when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`, if `v`
    /// lies on a path from a grad-enabled leaf to the loss.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape(), g.clone()).expect("grad matches value shape"))
    }

    /// Moves the gradient out of the tape.
    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        let node = &mut self.nodes[v.0];
        let shape = node.value.shape();
        node.grad
            .take()
            .map(|g| Tensor::new(shape, g).expect("grad matches value shape"))
    }

    /// Clears all gradients so that backward may run again.
    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_done = false;
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn check_var(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(TensorError::UnknownVar(v.0))
        }
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, spec: ConvSpec) -> Result<Var> {
        let out = conv2d(self.value(input), self.value(weight), self.value(bias), &spec)?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_channels(&values)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).slice_channels(start, len)?;
        Ok(self.push(out, Op::SliceChannels { input: x, start }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Pointwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale(x, factor))
    }

    /// `ln(1 + mu·x) / ln(1 + mu)`, elementwise.
    pub fn mu_law(&mut self, x: Var, mu: T) -> Var {
        let denom = mu.ln_1p();
        let out = self.value(x).map(|v| (mu * v).ln_1p() / denom);
        self.push(out, Op::MuLaw { input: x, mu })
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let out = self.value(x).map(|v| v.max(lo).min(hi));
        self.push(out, Op::Clamp { input: x, lo, hi })
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.abs());
        self.push(out, Op::Abs(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        self.push(out, Op::Square(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = T::from_usize(t.len().max(1)).expect("length fits the element type");
        let out = Tensor::scalar(t.sum() / n);
        self.push(out, Op::Mean(x))
    }

    /// Propagates `d loss / d node` to every node upstream of `loss`.
    ///
    /// Each node is visited once, in reverse recording order; contributions
    /// from fan-out are summed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check_var(loss)?;
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        let shape = self.shape(loss);
        if !shape.is_scalar() {
            return Err(TensorError::NonScalarLoss(shape));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(grad) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.input_grads(i, &grad)?;
            self.nodes[i].grad = Some(grad);
            for (v, g) in contributions {
                let node = &mut self.nodes[v.0];
                match &mut node.grad {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a = *a + *b;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Local vector-Jacobian products of node `i` for each grad-enabled input.
    fn input_grads(&self, i: usize, grad: &[T]) -> Result<Vec<(Var, Vec<T>)>> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        let unary = |x: Var, f: &dyn Fn(T, T, T) -> T| -> Vec<T> {
            // f(upstream, input, output)
            let xv = self.value(x).data();
            grad.iter()
                .zip(xv)
                .zip(node.value.data())
                .map(|((&g, &a), &y)| f(g, a, y))
                .collect()
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            } => {
                let g = Tensor::new(node.value.shape(), grad.to_vec())?;
                let grads = conv2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    spec,
                    &g,
                    self.wants(*input),
                )?;
                if let Some(gi) = grads.input {
                    out.push((*input, gi.into_data()));
                }
                if self.wants(*weight) {
                    out.push((*weight, grads.weight.into_data()));
                }
                if self.wants(*bias) {
                    out.push((*bias, grads.bias.into_data()));
                }
            }
            Op::Relu(x) => {
                if self.wants(*x) {
                    out.push((*x, unary(*x, &|g, a, _| if a > T::zero() { g } else { T::zero() })));
                }
            }
            Op::Sigmoid(x) => {
                if self.wants(*x) {
                    out.push((*x, unary(*x, &|g, _, y| g * y * (T::one() - y))));
                }
            }
            Op::Concat(parts) => {
                let shape = node.value.shape();
                let plane = shape.plane();
                let total = shape.channels();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p).channels();
                    if self.wants(p) {
                        let mut g = Vec::with_capacity(self.value(p).len());
                        for n in 0..shape.batch() {
                            let base = (n * total + offset) * plane;
                            g.extend_from_slice(&grad[base..base + pc * plane]);
                        }
                        out.push((p, g));
                    }
                    offset += pc;
                }
            }
            Op::SliceChannels { input, start } => {
                if self.wants(*input) {
                    let ishape = self.shape(*input);
                    let plane = ishape.plane();
                    let len = node.value.shape().channels();
                    let mut g = vec![T::zero(); ishape.numel()];
                    for n in 0..ishape.batch() {
                        let dst = (n * ishape.channels() + start) * plane;
                        let src = n * len * plane;
                        g[dst..dst + len * plane].copy_from_slice(&grad[src..src + len * plane]);
                    }
                    out.push((*input, g));
                }
            }
            Op::Add(a, b) => {
                check_same_shape("add", self.shape(*a), self.shape(*b))?;
                for &v in [a, b] {
                    if self.wants(v) {
                        out.push((v, grad.to_vec()));
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    out.push((*a, grad.to_vec()));
                }
                if self.wants(*b) {
                    out.push((*b, grad.iter().map(|&g| -g).collect()));
                }
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.wants(*a) {
                    out.push((*a, grad.iter().zip(bv).map(|(&g, &y)| g * y).collect()));
                }
                if self.wants(*b) {
                    out.push((*b, grad.iter().zip(av).map(|(&g, &x)| g * x).collect()));
                }
            }
            Op::Scale(x, factor) => {
                if self.wants(*x) {
                    out.push((*x, grad.iter().map(|&g| g * *factor).collect()));
                }
            }
            Op::MuLaw { input, mu } => {
                if self.wants(*input) {
                    let mu = *mu;
                    let denom = mu.ln_1p();
                    out.push((
                        *input,
                        unary(*input, &|g, a, _| g * mu / ((T::one() + mu * a) * denom)),
                    ));
                }
            }
            Op::Clamp { input, lo, hi } => {
                if self.wants(*input) {
                    let (lo, hi) = (*lo, *hi);
                    out.push((
                        *input,
                        unary(*input, &|g, a, _| if a >= lo && a <= hi { g } else { T::zero() }),
                    ));
                }
            }
            Op::Abs(x) => {
                if self.wants(*x) {
                    // Subgradient 0 at the kink.
                    out.push((*x, unary(*x, &|g, a, _| {
                        if a > T::zero() {
                            g
                        } else if a < T::zero() {
                            -g
                        } else {
                            T::zero()
                        }
                    })));
                }
            }
            Op::Square(x) => {
                if self.wants(*x) {
                    let two = T::one() + T::one();
                    out.push((*x, unary(*x, &|g, a, _| two * a * g)));
                }
            }
            Op::Sum(x) => {
                if self.wants(*x) {
                    out.push((*x, vec![grad[0]; self.value(*x).len()]));
                }
            }
            Op::Mean(x) => {
                if self.wants(*x) {
                    let n = self.value(*x).len();
                    let scale = T::from_usize(n.max(1)).expect("length fits the element type");
                    out.push((*x, vec![grad[0] / scale; n]));
                }
            }
        }
        Ok(out)
    }
}

fn sigmoid<T: Element>(v: T) -> T {
    // Split by sign so exp never overflows.
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
