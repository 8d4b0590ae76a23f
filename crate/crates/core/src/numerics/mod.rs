//! Dense tensors with tape-based reverse-mode differentiation.

mod conv;
mod fd;
mod tape;

pub use conv::{conv2d_backward_bias, conv2d_backward_input, conv2d_backward_kernel, conv2d_forward};
pub use fd::finite_diff_grad;
pub use tape::{Tape, Var};

use std::fmt;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;

/// Ordered list of positive extents. Image tensors are `(N, C, H, W)`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() {
            return Err(Error::shape("shape must have at least one dimension"));
        }
        if let Some(d) = dims.iter().find(|&&d| d == 0) {
            return Err(Error::shape(format!("zero extent {d} in {dims:?}")));
        }
        Ok(Self(dims))
    }

    pub fn scalar() -> Self {
        Self(vec![1])
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Unpacks a rank-4 shape as `(n, c, h, w)`.
    pub fn nchw(&self) -> Result<(usize, usize, usize, usize)> {
        match self.0[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(format!("expected NCHW, got {self}"))),
        }
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "({})", parts.join("×"))
    }
}

/// Contiguous row-major array with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(format!("{} values for shape {shape}", data.len())));
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn from_vec(dims: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        Self::new(Shape::new(dims)?, data)
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.numel();
        Self {
            shape,
            data: vec![T::zero(); n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        let n = shape.numel();
        Self {
            shape,
            data: vec![value; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full(Shape::scalar(), value)
    }

    /// I.i.d. Gaussian samples drawn in row-major order from `rng`.
    pub fn randn(shape: Shape, rng: &mut RngStream, mean: T, std: T) -> Result<Self> {
        if std.is_nan() || std < T::zero() {
            return Err(Error::invalid(format!("standard deviation {std} < 0")));
        }
        let (mean, std) = (mean.as_f64(), std.as_f64());
        let data = (0..shape.numel()).map(|_| T::of(mean + std * rng.gaussian())).collect();
        Self::new(shape, data)
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.set_requires_grad(flag);
        self
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
        if flag {
            self.grad.get_or_insert_with(|| vec![T::zero(); self.data.len()]);
        } else {
            self.grad = None;
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub(crate) fn grad_mut(&mut self) -> Option<&mut Vec<T>> {
        self.grad.as_mut()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        match self.data[..] {
            [v] => Ok(v),
            _ => Err(Error::NotScalar {
                op: "item",
                len: self.data.len(),
            }),
        }
    }

    pub fn reshape(mut self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.data.len() {
            return Err(Error::shape(format!("cannot reshape {} into {shape}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Elementwise conversion to another precision. Gradient state is dropped.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        check_same_shape(self, other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }
}

pub(crate) fn check_same_shape<T>(a: &Tensor<T>, b: &Tensor<T>, op: &str) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::shape(format!("{op}: {} vs {}", a.shape, b.shape)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_rejects_zero_extent() {
        assert!(Shape::new(vec![2, 0, 3]).is_err());
        assert!(Shape::new(Vec::<usize>::new()).is_err());
        assert_eq!(Shape::new(vec![2, 3, 4]).unwrap().numel(), 24);
    }

    #[test]
    fn new_checks_length() {
        assert!(Tensor::<f64>::from_vec(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn randn_zero_std_is_mean() {
        let mut rng = RngStream::new(7, 0);
        let t = Tensor::<f64>::randn(Shape::new(vec![4]).unwrap(), &mut rng, 0.0, 0.0).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
    }

    #[test]
    fn randn_negative_std_fails() {
        let mut rng = RngStream::new(7, 0);
        assert!(Tensor::<f64>::randn(Shape::scalar(), &mut rng, 0.0, -1.0).is_err());
    }

    #[test]
    fn randn_deterministic() {
        let shape = Shape::new(vec![3, 5]).unwrap();
        let a = Tensor::<f32>::randn(shape.clone(), &mut RngStream::new(7, 0), 0.0, 1.0).unwrap();
        let b = Tensor::<f32>::randn(shape, &mut RngStream::new(7, 0), 0.0, 1.0).unwrap();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn randn_sample_std() {
        // Sample std of n Gaussians has standard error ≈ σ/√(2n) = 0.0707% of σ
        // at n = 10⁶, so 0.5% is over 7 standard errors.
        let n = 1_000_000;
        let mut rng = RngStream::new(7, 1);
        let t = Tensor::<f64>::randn(Shape::new(vec![n]).unwrap(), &mut rng, 0.0, 25.0).unwrap();
        let mean = t.data().iter().sum::<f64>() / n as f64;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var.sqrt() - 25.0).abs() / 25.0 < 0.005, "std {}", var.sqrt());
    }

    #[test]
    fn zero_grad_clears() {
        let mut t = Tensor::<f64>::zeros(Shape::new(vec![3]).unwrap()).with_requires_grad(true);
        t.grad_mut().unwrap()[1] = 4.0;
        t.zero_grad();
        assert_eq!(t.grad().unwrap(), &[0.0; 3]);
    }
}
