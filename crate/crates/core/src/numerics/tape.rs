use super::{check_same_shape, conv, Shape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Sum(Var),
    Mean(Var),
    SqNorm(Var),
    Conv2d { input: Var, kernel: Var, bias: Var },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Record of executed operations for reverse-mode differentiation.
///
/// Leaves inserted with `requires_grad` receive accumulated gradients on
/// every [`Tape::backward`] call until [`Tape::zero_grad`].
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Its `requires_grad` flag decides whether it collects
    /// a gradient.
    pub fn leaf(&mut self, mut value: Tensor<T>) -> Var {
        let needs_grad = value.requires_grad();
        if needs_grad {
            value.set_requires_grad(true);
        }
        self.push(value, Op::Leaf, needs_grad)
    }

    /// Records a leaf that never collects a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a `requires_grad` leaf.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take(mut self, v: Var) -> Tensor<T> {
        self.nodes.swap_remove(v.0).value
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_same_shape(ta, tb, name)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().clone(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x + s);
        let ng = self.needs(a);
        self.push(out, Op::AddScalar(a), ng)
    }

    /// `max(0, v)`, propagating NaN; the gradient at exactly zero is taken
    /// as zero.
    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x < T::zero() { T::zero() } else { x });
        let ng = self.needs(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().copied().sum::<T>() / T::of(t.len() as f64);
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// Σ v².
    pub fn sq_norm(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|&v| v * v).sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::SqNorm(a), ng)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let out = conv::conv2d_forward(self.value(input), self.value(kernel), self.value(bias))?;
        let ng = self.needs(input) || self.needs(kernel) || self.needs(bias);
        Ok(self.push(out, Op::Conv2d { input, kernel, bias }, ng))
    }

    /// Propagates `∂loss/∂leaf` into every `requires_grad` leaf, adding to
    /// whatever gradient is already stored there.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let len = self.value(loss).len();
        if len != 1 {
            return Err(Error::NotScalar { op: "backward", len });
        }
        if !self.needs(loss) {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            match self.nodes[i].op.clone() {
                Op::Leaf => {
                    let grad = self.nodes[i].value.grad_mut().expect("leaf needing grad has a buffer");
                    for (a, b) in grad.iter_mut().zip(&g) {
                        *a += *b;
                    }
                }
                Op::Add(a, b) => {
                    self.send(&mut adj, a, || g.clone());
                    self.send(&mut adj, b, || g.clone());
                }
                Op::Sub(a, b) => {
                    self.send(&mut adj, a, || g.clone());
                    self.send(&mut adj, b, || g.iter().map(|&v| -v).collect());
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(a).data(), self.value(b).data());
                    self.send(&mut adj, a, || g.iter().zip(vb).map(|(&d, &y)| d * y).collect());
                    self.send(&mut adj, b, || g.iter().zip(va).map(|(&d, &x)| d * x).collect());
                }
                Op::Scale(a, s) => self.send(&mut adj, a, || g.iter().map(|&d| d * s).collect()),
                Op::AddScalar(a) => self.send(&mut adj, a, || g.clone()),
                Op::Relu(a) => {
                    let x = self.value(a).data();
                    self.send(&mut adj, a, || {
                        g.iter()
                            .zip(x)
                            .map(|(&d, &v)| if v > T::zero() { d } else { T::zero() })
                            .collect()
                    });
                }
                Op::Sum(a) => {
                    let n = self.value(a).len();
                    self.send(&mut adj, a, || vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let n = self.value(a).len();
                    let d = g[0] / T::of(n as f64);
                    self.send(&mut adj, a, || vec![d; n]);
                }
                Op::SqNorm(a) => {
                    let two = T::of(2.0);
                    let x = self.value(a).data();
                    self.send(&mut adj, a, || x.iter().map(|&v| two * v * g[0]).collect());
                }
                Op::Conv2d { input, kernel, bias } => {
                    let out_shape = self.nodes[i].value.shape().clone();
                    if self.needs(input) {
                        let gi = conv::conv2d_backward_input(&g, self.value(kernel), self.value(input).shape())?;
                        accumulate(&mut adj, input, gi);
                    }
                    if self.needs(kernel) {
                        let gk = conv::conv2d_backward_kernel(&g, self.value(input), self.value(kernel).shape())?;
                        accumulate(&mut adj, kernel, gk);
                    }
                    if self.needs(bias) {
                        accumulate(&mut adj, bias, conv::conv2d_backward_bias(&g, &out_shape)?);
                    }
                }
            }
        }
        Ok(())
    }

    fn send(&self, adj: &mut [Option<Vec<T>>], to: Var, make: impl FnOnce() -> Vec<T>) {
        if self.needs(to) {
            accumulate(adj, to, make());
        }
    }

    /// Shape of a recorded value.
    pub fn shape(&self, v: Var) -> &Shape {
        self.value(v).shape()
    }
}

fn accumulate<T: Scalar>(adj: &mut [Option<Vec<T>>], to: Var, g: Vec<T>) {
    match &mut adj[to.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += *b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
