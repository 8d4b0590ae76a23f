use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Central-difference gradient `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` of a
/// scalar function, one coordinate at a time.
pub fn finite_diff_grad<T, F>(mut f: F, at: &Tensor<T>, h: T) -> Result<Tensor<T>>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> T,
{
    if h.is_nan() || h <= T::zero() {
        return Err(Error::invalid(format!("finite-difference step {h} must be > 0")));
    }
    let mut x = at.clone().with_requires_grad(false);
    let two_h = h + h;
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let up = f(&x);
        x.data_mut()[i] = orig - h;
        let down = f(&x);
        x.data_mut()[i] = orig;
        grad.push((up - down) / two_h);
    }
    Tensor::new(at.shape().clone(), grad)
}
