//! DnCNN-style residual denoiser `f(y) = y − R(y)`.
//!
//! `R` is a stack of `depth` same-padded convolutions: `in→width` + ReLU,
//! `depth − 2` times `width→width` + ReLU, then `width→in`. There is no
//! batch normalisation, so the map is sample-wise and deterministic.

use crate::error::{Error, Result};
use crate::numerics::{Shape, Tape, Tensor, Var};
use crate::rng::RngStream;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub depth: usize,
    pub width: usize,
    pub kernel: usize,
    pub in_channels: usize,
}

impl DenoiserConfig {
    /// 16 layers of 64 channels, 3×3 kernels.
    pub const FULL: Self = Self {
        depth: 16,
        width: 64,
        kernel: 3,
        in_channels: 1,
    };

    /// Small preset for tests and desk-scale experiments.
    pub const DESK: Self = Self {
        depth: 4,
        width: 16,
        kernel: 3,
        in_channels: 1,
    };

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::invalid(format!("depth {} < 2", self.depth)));
        }
        if self.width < 1 || self.in_channels < 1 {
            return Err(Error::invalid("width and in_channels must be ≥ 1"));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::invalid(format!("kernel size {} must be odd", self.kernel)));
        }
        Ok(())
    }

    /// `(out, in)` channel counts of layer `i`.
    pub fn layer_channels(&self, i: usize) -> (usize, usize) {
        let cin = if i == 0 { self.in_channels } else { self.width };
        let cout = if i + 1 == self.depth {
            self.in_channels
        } else {
            self.width
        };
        (cout, cin)
    }

    pub fn kernel_shape(&self, i: usize) -> Shape {
        let (o, c) = self.layer_channels(i);
        Shape::new(vec![o, c, self.kernel, self.kernel]).expect("validated config")
    }

    pub fn bias_shape(&self, i: usize) -> Shape {
        Shape::new(vec![self.layer_channels(i).0]).expect("validated config")
    }

    pub fn num_parameters(&self) -> usize {
        (0..self.depth)
            .map(|i| self.kernel_shape(i).numel() + self.bias_shape(i).numel())
            .sum()
    }
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self::FULL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser<T> {
    config: DenoiserConfig,
    /// Interleaved `[kernel₀, bias₀, kernel₁, bias₁, …]`.
    params: Vec<Tensor<T>>,
}

impl<T: Scalar> Denoiser<T> {
    /// He-initialised kernels (std `√(2 / fan_in)`), zero biases.
    pub fn init(config: DenoiserConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let mut params = Vec::with_capacity(2 * config.depth);
        for i in 0..config.depth {
            let ks = config.kernel_shape(i);
            let fan_in = ks.numel() / ks.dims()[0];
            let std = T::of((2.0 / fan_in as f64).sqrt());
            params.push(Tensor::randn(ks, rng, T::zero(), std)?);
            params.push(Tensor::zeros(config.bias_shape(i)));
        }
        Ok(Self { config, params })
    }

    /// All-zero parameters: the identity denoiser.
    pub fn zeros(config: DenoiserConfig) -> Result<Self> {
        config.validate()?;
        let params = (0..config.depth)
            .flat_map(|i| {
                [
                    Tensor::zeros(config.kernel_shape(i)),
                    Tensor::zeros(config.bias_shape(i)),
                ]
            })
            .collect();
        Ok(Self { config, params })
    }

    /// Rebuilds a model from tensors in [`Denoiser::parameters`] order.
    pub fn from_parameters(config: DenoiserConfig, params: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        if params.len() != 2 * config.depth {
            return Err(Error::shape(format!(
                "{} parameter tensors for depth {}",
                params.len(),
                config.depth
            )));
        }
        for (i, p) in params.iter().enumerate() {
            let want = if i % 2 == 0 {
                config.kernel_shape(i / 2)
            } else {
                config.bias_shape(i / 2)
            };
            if *p.shape() != want {
                return Err(Error::shape(format!("parameter {i}: {} vs {want}", p.shape())));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    /// Parameters ordered by layer, kernel before bias.
    pub fn parameters(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Denoiser<U> {
        Denoiser {
            config: self.config,
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    /// Records the parameters on `tape`; `trainable` makes them collect
    /// gradients.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundDenoiser {
        let vars = self
            .params
            .iter()
            .map(|p| tape.leaf(p.clone().with_requires_grad(trainable)))
            .collect();
        BoundDenoiser {
            config: self.config,
            vars,
        }
    }

    /// Inference without gradient tracking.
    pub fn forward(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let yv = tape.constant(y.clone());
        let out = bound.forward(&mut tape, yv)?;
        Ok(tape.take(out))
    }
}

/// A denoiser whose parameters live on a tape.
#[derive(Debug, Clone)]
pub struct BoundDenoiser {
    config: DenoiserConfig,
    vars: Vec<Var>,
}

impl BoundDenoiser {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// `y − R(y)` for an `(N, in_channels, H, W)` input.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, y: Var) -> Result<Var> {
        let (_, c, _, _) = tape.shape(y).nchw()?;
        if c != self.config.in_channels {
            return Err(Error::shape(format!(
                "denoiser expects {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        let mut h = y;
        for (i, kb) in self.vars.chunks(2).enumerate() {
            h = tape.conv2d(h, kb[0], kb[1])?;
            if i + 1 < self.config.depth {
                h = tape.relu(h);
            }
        }
        tape.sub(y, h)
    }

    /// Current gradients, in parameter order.
    pub fn grads<T: Scalar>(&self, tape: &Tape<T>) -> Vec<Vec<T>> {
        self.vars
            .iter()
            .map(|&v| {
                tape.grad(v)
                    .map(<[T]>::to_vec)
                    .unwrap_or_else(|| vec![T::zero(); tape.value(v).len()])
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(DenoiserConfig {
            depth: 1,
            ..DenoiserConfig::DESK
        }
        .validate()
        .is_err());
        assert!(DenoiserConfig {
            width: 0,
            ..DenoiserConfig::DESK
        }
        .validate()
        .is_err());
        assert!(DenoiserConfig {
            kernel: 4,
            ..DenoiserConfig::DESK
        }
        .validate()
        .is_err());
        assert!(DenoiserConfig::FULL.validate().is_ok());
    }

    #[test]
    fn full_parameter_count() {
        let expected = (64 * 9 + 64) + 14 * (64 * 64 * 9 + 64) + (64 * 9 + 1);
        assert_eq!(expected, 518_209);
        assert_eq!(DenoiserConfig::FULL.num_parameters(), expected);
        let m = Denoiser::<f32>::zeros(DenoiserConfig::FULL).unwrap();
        assert_eq!(m.num_parameters(), expected);
        assert_eq!(m.parameters().len(), 32);
    }

    #[test]
    fn layer_shapes() {
        let m = Denoiser::<f32>::init(DenoiserConfig::DESK, &mut RngStream::new(1, 1)).unwrap();
        let dims: Vec<&[usize]> = m.parameters().iter().map(|p| p.dims()).collect();
        assert_eq!(dims[0], &[16, 1, 3, 3]);
        assert_eq!(dims[1], &[16]);
        assert_eq!(dims[2], &[16, 16, 3, 3]);
        assert_eq!(dims[6], &[1, 16, 3, 3]);
        assert_eq!(dims[7], &[1]);
    }

    #[test]
    fn init_is_seeded_with_zero_bias() {
        let a = Denoiser::<f32>::init(DenoiserConfig::DESK, &mut RngStream::new(9, 1)).unwrap();
        let b = Denoiser::<f32>::init(DenoiserConfig::DESK, &mut RngStream::new(9, 1)).unwrap();
        assert_eq!(a, b);
        for bias in a.parameters().iter().skip(1).step_by(2) {
            assert!(bias.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn he_scale() {
        let m = Denoiser::<f64>::init(DenoiserConfig::FULL, &mut RngStream::new(2, 1)).unwrap();
        let k = &m.parameters()[2];
        let var = k.data().iter().map(|v| v * v).sum::<f64>() / k.len() as f64;
        let expected = 2.0 / (64.0 * 9.0);
        assert!((var / expected - 1.0).abs() < 0.03, "{var} vs {expected}");
    }

    #[test]
    fn zero_model_is_identity() {
        let m = Denoiser::<f32>::zeros(DenoiserConfig::DESK).unwrap();
        let y = Tensor::randn(
            Shape::new(vec![2, 1, 9, 7]).unwrap(),
            &mut RngStream::new(4, 0),
            0.5,
            0.3,
        )
        .unwrap();
        assert_eq!(m.forward(&y).unwrap(), y);
    }

    #[test]
    fn forward_preserves_shape_and_is_deterministic() {
        let m = Denoiser::<f32>::init(DenoiserConfig::DESK, &mut RngStream::new(3, 1)).unwrap();
        let y = Tensor::randn(
            Shape::new(vec![2, 1, 40, 40]).unwrap(),
            &mut RngStream::new(4, 0),
            0.5,
            0.1,
        )
        .unwrap();
        let a = m.forward(&y).unwrap();
        assert_eq!(a.dims(), &[2, 1, 40, 40]);
        assert_eq!(a, m.forward(&y).unwrap());
        // fully convolutional
        let odd = Tensor::zeros(Shape::new(vec![1, 1, 13, 5]).unwrap());
        assert_eq!(m.forward(&odd).unwrap().dims(), &[1, 1, 13, 5]);
    }

    #[test]
    fn channel_mismatch() {
        let m = Denoiser::<f32>::zeros(DenoiserConfig::DESK).unwrap();
        let y = Tensor::zeros(Shape::new(vec![1, 3, 8, 8]).unwrap());
        assert!(matches!(m.forward(&y), Err(Error::Shape(_))));
    }

    #[test]
    fn from_parameters_checks_shapes() {
        let m = Denoiser::<f32>::zeros(DenoiserConfig::DESK).unwrap();
        let mut p = m.parameters().to_vec();
        assert!(Denoiser::from_parameters(DenoiserConfig::DESK, p.clone()).is_ok());
        p.swap(0, 1);
        assert!(Denoiser::from_parameters(DenoiserConfig::DESK, p).is_err());
    }
}
