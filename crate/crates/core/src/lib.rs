//! Training residual convolutional denoisers without clean targets.
//!
//! The crate trains a DnCNN-style network `f(y) = y − R(y)` on noisy images
//! only, by minimising Stein's unbiased risk estimate of the per-pixel MSE
//! with a Monte-Carlo estimate of the network divergence. A supervised MSE
//! objective is provided as a baseline, together with PSNR/SSIM evaluation.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` for training, `f64`
//! for verification); the aliases below fix the precision.
//!
//! ```no_run
//! use suredn::data::{PatchRecipe, PatchSet};
//! use suredn::loss::NoiseModel;
//! use suredn::model::{Denoiser, DenoiserConfig};
//! use suredn::train::{LossKind, TrainConfig, Trainer};
//! use suredn::{synth, RngStream, StreamKind};
//!
//! let images = synth::dataset(16, 64, 64, 1, 0);
//! let patches = PatchSet::from_images(&images, &PatchRecipe::default())?;
//! let mut cfg = TrainConfig::new(LossKind::Sure, NoiseModel::from_8bit(25.0)?);
//! cfg.epochs = 2;
//! cfg.drop_epoch = 1;
//! let init = &mut RngStream::named(cfg.seed, StreamKind::Init, 0);
//! let mut trainer = Trainer::new(Denoiser::<f32>::init(DenoiserConfig::DESK, init)?, cfg)?;
//! trainer.run(&patches)?;
//! trainer.checkpoint().save("model.ckpt")?;
//! # Ok::<(), suredn::Error>(())
//! ```

pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod scalar;
pub mod selftest;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use numerics::{Shape, Tape, Tensor, Var};
pub use rng::{RngStream, StreamKind};
pub use scalar::Scalar;

pub type Tensor32 = numerics::Tensor<f32>;
pub type Tensor64 = numerics::Tensor<f64>;
pub type Tape32 = numerics::Tape<f32>;
pub type Tape64 = numerics::Tape<f64>;
pub type Denoiser32 = model::Denoiser<f32>;
pub type Denoiser64 = model::Denoiser<f64>;
pub type AdamState32 = train::AdamState<f32>;
pub type AdamState64 = train::AdamState<f64>;
