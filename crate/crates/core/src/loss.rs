//! Supervised MSE, Stein's unbiased risk estimate (SURE) and the divergence
//! estimators it needs.
//!
//! For a batch of `B` samples of `K` pixels each, with noise std `σ`:
//!
//! ```text
//! mse  = 1/B Σ_ℓ 1/K ‖x_ℓ − f(y_ℓ)‖²
//! sure = 1/B Σ_ℓ [ 1/K ‖y_ℓ − f(y_ℓ)‖² − σ² + 2σ²/K · div f(y_ℓ) ]
//! ```
//!
//! `div` arguments are always the divergence of `f` over the whole batch
//! tensor, which equals `Σ_ℓ div f(y_ℓ)` because the denoiser acts on each
//! sample independently.

use crate::error::{Error, Result};
use crate::numerics::{Shape, Tape, Tensor, Var};
use crate::rng::RngStream;
use crate::scalar::Scalar;

/// Additive white Gaussian noise with known standard deviation, expressed in
/// working units (pixel intensities in `[0, 1]`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    sigma: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!("noise sigma {sigma} must be positive")));
        }
        Ok(Self { sigma })
    }

    /// From a standard deviation on the 0–255 scale.
    pub fn from_8bit(sigma: f64) -> Result<Self> {
        Self::new(sigma / 255.0)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn sigma_8bit(&self) -> f64 {
        self.sigma * 255.0
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProbeDist {
    #[default]
    Gaussian,
    Rademacher,
}

/// Perturbation size of the Monte-Carlo divergence estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Epsilon {
    Fixed(f64),
    /// `scale · (max(y) − min(y) + floor)`, evaluated per batch.
    RangeRelative {
        scale: f64,
        floor: f64,
    },
}

impl Default for Epsilon {
    fn default() -> Self {
        Epsilon::RangeRelative {
            scale: 1e-4,
            floor: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SureConfig {
    pub epsilon: Epsilon,
    pub probe: ProbeDist,
    pub probes_per_sample: usize,
}

impl Default for SureConfig {
    fn default() -> Self {
        Self {
            epsilon: Epsilon::default(),
            probe: ProbeDist::Gaussian,
            probes_per_sample: 1,
        }
    }
}

impl SureConfig {
    pub fn validate(&self) -> Result<()> {
        let eps_ok = match self.epsilon {
            Epsilon::Fixed(e) => e > 0.0,
            Epsilon::RangeRelative { scale, floor } => scale > 0.0 && floor >= 0.0,
        };
        if !eps_ok {
            return Err(Error::invalid(format!("invalid epsilon {:?}", self.epsilon)));
        }
        if self.probes_per_sample < 1 {
            return Err(Error::invalid("probes_per_sample must be ≥ 1"));
        }
        Ok(())
    }

    pub fn epsilon_for<T: Scalar>(&self, y: &Tensor<T>) -> T {
        match self.epsilon {
            Epsilon::Fixed(e) => T::of(e),
            Epsilon::RangeRelative { scale, floor } => {
                let (lo, hi) = y
                    .data()
                    .iter()
                    .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
                        (lo.min(v), hi.max(v))
                    });
                T::of(scale) * (hi - lo + T::of(floor))
            }
        }
    }
}

/// A zero-mean, unit-covariance probe tensor.
pub fn sample_probe<T: Scalar>(shape: &Shape, dist: ProbeDist, rng: &mut RngStream) -> Tensor<T> {
    let data = (0..shape.numel())
        .map(|_| {
            T::of(match dist {
                ProbeDist::Gaussian => rng.gaussian(),
                ProbeDist::Rademacher => rng.rademacher(),
            })
        })
        .collect();
    Tensor::new(shape.clone(), data).expect("length matches shape")
}

/// `(batch, pixels per sample)` of a tensor; rank-4 tensors are batched
/// along the first axis, anything else is one sample.
fn batch_dims(shape: &Shape) -> (usize, usize) {
    let b = if shape.rank() == 4 { shape.dims()[0] } else { 1 };
    (b, shape.numel() / b)
}

/// Mean over the batch of `‖x − f(y)‖² / K`.
pub fn mse_loss<T: Scalar>(tape: &mut Tape<T>, x: Var, fy: Var) -> Result<Var> {
    let n = tape.shape(x).numel();
    let d = tape.sub(x, fy)?;
    let s = tape.sq_norm(d);
    Ok(tape.scale(s, T::of(1.0 / n as f64)))
}

/// Mean over the batch of the SURE expression. `div` is the batch-total
/// divergence of the denoiser at `y`. The constant `−σ²` is kept so the value
/// estimates the per-pixel MSE.
pub fn sure_loss<T: Scalar>(tape: &mut Tape<T>, y: Var, fy: Var, div: Var, noise: &NoiseModel) -> Result<Var> {
    let dl = tape.value(div).len();
    if dl != 1 {
        return Err(Error::NotScalar {
            op: "sure_loss divergence",
            len: dl,
        });
    }
    let (b, k) = batch_dims(tape.shape(y));
    let bk = (b * k) as f64;
    let var = noise.variance();
    let d = tape.sub(y, fy)?;
    let fit = tape.sq_norm(d);
    let fit = tape.scale(fit, T::of(1.0 / bk));
    let penalty = tape.scale(div, T::of(2.0 * var / bk));
    let s = tape.add(fit, penalty)?;
    Ok(tape.add_scalar(s, T::of(-var)))
}

/// Monte-Carlo divergence `1/ε · bᵀ(f(y + εb) − f(y))`, averaged over
/// `cfg.probes_per_sample` fresh probes from `rng`.
///
/// `fy` must be `f(y)` already recorded on the tape; the result is a
/// differentiable scalar and gradients flow through both evaluations.
pub fn mc_divergence<T, F>(
    tape: &mut Tape<T>,
    y: Var,
    fy: Var,
    mut f: F,
    cfg: &SureConfig,
    rng: &mut RngStream,
) -> Result<Var>
where
    T: Scalar,
    F: FnMut(&mut Tape<T>, Var) -> Result<Var>,
{
    cfg.validate()?;
    let eps = cfg.epsilon_for(tape.value(y));
    let shape = tape.shape(y).clone();
    let mut total: Option<Var> = None;
    for _ in 0..cfg.probes_per_sample {
        let b = sample_probe::<T>(&shape, cfg.probe, rng);
        let eb = tape.constant(b.map(|v| v * eps));
        let bv = tape.constant(b);
        let yp = tape.add(y, eb)?;
        let fyp = f(tape, yp)?;
        let diff = tape.sub(fyp, fy)?;
        let prod = tape.mul(diff, bv)?;
        let s = tape.sum(prod);
        total = Some(match total {
            None => s,
            Some(t) => tape.add(t, s)?,
        });
    }
    let total = total.expect("at least one probe");
    let norm = T::one() / (eps * T::of(cfg.probes_per_sample as f64));
    Ok(tape.scale(total, norm))
}

/// Jacobian trace `Σ_k ∂f_k/∂y_k` by `K` central differences with step
/// `h = ∛ε_machine · max(1, max|y|)`. Test oracle only; not differentiable.
pub fn analytic_divergence<T, F>(f: F, y: &Tensor<T>) -> Result<T>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> Result<Tensor<T>>,
{
    let scale = y.data().iter().fold(T::one(), |m, v| m.max(v.abs()));
    let h = T::epsilon().cbrt() * scale;
    analytic_divergence_with_step(f, y, h)
}

pub fn analytic_divergence_with_step<T, F>(mut f: F, y: &Tensor<T>, h: T) -> Result<T>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> Result<Tensor<T>>,
{
    if h.is_nan() || h <= T::zero() {
        return Err(Error::invalid(format!("finite-difference step {h} must be > 0")));
    }
    let mut x = y.clone().with_requires_grad(false);
    let mut div = T::zero();
    for k in 0..x.len() {
        let orig = x.data()[k];
        x.data_mut()[k] = orig + h;
        let up = f(&x)?;
        x.data_mut()[k] = orig - h;
        let down = f(&x)?;
        x.data_mut()[k] = orig;
        if up.len() != x.len() || down.len() != x.len() {
            return Err(Error::shape("divergence needs f to preserve element count"));
        }
        div += (up.data()[k] - down.data()[k]) / (h + h);
    }
    Ok(div)
}
