//! Runtime correctness checks: autodiff against central differences and
//! the unbiasedness of SURE. Used by the `selftest` command.

use crate::error::Result;
use crate::loss::{
    analytic_divergence, mc_divergence, mse_loss, sample_probe, sure_loss, Epsilon, NoiseModel, SureConfig,
};
use crate::model::{Denoiser, DenoiserConfig};
use crate::numerics::{finite_diff_grad, Shape, Tape, Tensor, Var};
use crate::rng::RngStream;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// `max|a − b| / max(max|a|, max|b|, floor)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = a.iter().chain(b).fold(1e-12f64, |m, v| m.max(v.abs()));
    diff / scale
}

type Objective = fn(&mut Tape<f64>, Var) -> Result<Var>;

fn op_objectives(rng: &mut RngStream) -> Vec<(&'static str, Shape, Objective)> {
    let _ = rng;
    let v = |d: Vec<usize>| Shape::new(d).unwrap();
    vec![
        ("relu", v(vec![7]), |t, x| {
            let r = t.relu(x);
            Ok(t.sq_norm(r))
        }),
        ("add", v(vec![6]), |t, x| {
            let s = t.add(x, x)?;
            let m = t.mul(s, x)?;
            Ok(t.sum(m))
        }),
        ("sub", v(vec![6]), |t, x| {
            let c = t.scale(x, 0.3);
            let d = t.sub(x, c)?;
            let d = t.add_scalar(d, 0.7);
            Ok(t.sq_norm(d))
        }),
        ("mul", v(vec![5]), |t, x| {
            let m = t.mul(x, x)?;
            let m = t.mul(m, x)?;
            Ok(t.mean(m))
        }),
        ("conv2d", v(vec![1, 2, 5, 5]), |t, x| {
            let mut r = RngStream::new(77, 0);
            let k = Tensor::randn(Shape::new(vec![3, 2, 3, 3])?, &mut r, 0.0, 1.0)?;
            let b = Tensor::randn(Shape::new(vec![3])?, &mut r, 0.0, 1.0)?;
            let (k, b) = (t.constant(k), t.constant(b));
            let c = t.conv2d(x, k, b)?;
            let c = t.relu(c);
            Ok(t.sq_norm(c))
        }),
    ]
}

fn scalar_of(f: Objective, x: &Tensor<f64>) -> f64 {
    let mut t = Tape::new();
    let v = t.constant(x.clone());
    let out = f(&mut t, v).expect("objective evaluates");
    t.value(out).item().expect("scalar objective")
}

/// Gradient of every primitive against central differences.
pub fn check_primitives(trials: usize, seed: u64, tol: f64) -> Result<CheckOutcome> {
    let mut rng = RngStream::new(seed, 0);
    let mut worst = 0.0f64;
    for (_, shape, f) in op_objectives(&mut rng) {
        for _ in 0..trials {
            let x = Tensor::<f64>::randn(shape.clone(), &mut rng, 0.0, 1.0)?;
            let mut t = Tape::new();
            let v = t.leaf(x.clone().with_requires_grad(true));
            let out = f(&mut t, v)?;
            t.backward(out)?;
            let auto = t.grad(v).expect("leaf gradient").to_vec();
            let fd = finite_diff_grad(|p| scalar_of(f, p), &x, 1e-6)?;
            worst = worst.max(relative_error(&auto, fd.data()));
        }
    }
    Ok(CheckOutcome {
        name: "primitive gradients".into(),
        passed: worst <= tol,
        detail: format!("max relative error {worst:.2e} (limit {tol:.0e})"),
    })
}

/// Smallest `|pre-activation|` over every hidden ReLU of `model` at `y`.
/// Central differences are only trustworthy when this is well above the
/// step times the activation's sensitivity to the perturbed parameter.
pub fn relu_margin(model: &Denoiser<f64>, y: &Tensor<f64>) -> Result<f64> {
    let mut t = Tape::new();
    let bound = model.bind(&mut t, false);
    let mut h = t.constant(y.clone());
    let mut margin = f64::INFINITY;
    let layers = bound.vars().chunks(2).count();
    for (i, kb) in bound.vars().chunks(2).enumerate() {
        h = t.conv2d(h, kb[0], kb[1])?;
        if i + 1 < layers {
            margin = t.value(h).data().iter().fold(margin, |m, v| m.min(v.abs()));
            h = t.relu(h);
        }
    }
    Ok(margin)
}

/// Draws a network input whose ReLU margin at `y` and at `y + εb` is at
/// least `margin`, so a parameter step of `h` cannot cross a kink.
pub fn kink_free_input(
    model: &Denoiser<f64>,
    shape: &Shape,
    probe: Option<(&RngStream, &SureConfig)>,
    margin: f64,
    rng: &mut RngStream,
) -> Result<Tensor<f64>> {
    loop {
        let y = Tensor::randn(shape.clone(), rng, 0.5, 0.3)?;
        if relu_margin(model, &y)? < margin {
            continue;
        }
        if let Some((probe_rng, cfg)) = probe {
            let eps = cfg.epsilon_for(&y);
            let b: Tensor<f64> = sample_probe(shape, cfg.probe, &mut probe_rng.clone());
            let yp = Tensor::new(
                shape.clone(),
                y.data().iter().zip(b.data()).map(|(a, b)| a + eps * b).collect(),
            )?;
            if relu_margin(model, &yp)? < margin {
                continue;
            }
        }
        return Ok(y);
    }
}

/// Gradient of SURE (frozen probe) and MSE through a depth-3, width-4
/// network with respect to every parameter.
pub fn check_network(trials: usize, seed: u64, tol: f64) -> Result<CheckOutcome> {
    let cfg = DenoiserConfig {
        depth: 3,
        width: 4,
        kernel: 3,
        in_channels: 1,
    };
    let noise = NoiseModel::from_8bit(25.0)?;
    let sure = SureConfig {
        epsilon: Epsilon::Fixed(1e-3),
        ..Default::default()
    };
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let mut rng = RngStream::new(seed, 1 + trial as u64);
        let model = Denoiser::<f64>::init(cfg, &mut rng)?;
        let shape = Shape::new(vec![2, 1, 6, 6])?;
        let x = Tensor::randn(shape.clone(), &mut rng, 0.5, 0.2)?;
        let probe_rng = RngStream::new(seed ^ 0xdead, trial as u64);
        let use_sure = trial % 2 == 0;
        let y = kink_free_input(&model, &shape, use_sure.then_some((&probe_rng, &sure)), 1e-4, &mut rng)?;

        let loss_of = |m: &Denoiser<f64>, track: bool| -> Result<(f64, Vec<Vec<f64>>)> {
            let mut t = Tape::new();
            let bound = m.bind(&mut t, track);
            let yv = t.constant(y.clone());
            let fy = bound.forward(&mut t, yv)?;
            let l = if use_sure {
                let mut pr = probe_rng.clone();
                let div = mc_divergence(&mut t, yv, fy, |t, v| bound.forward(t, v), &sure, &mut pr)?;
                sure_loss(&mut t, yv, fy, div, &noise)?
            } else {
                let xv = t.constant(x.clone());
                mse_loss(&mut t, xv, fy)?
            };
            let value = t.value(l).item()?;
            if track {
                t.backward(l)?;
            }
            Ok((value, bound.grads(&t)))
        };

        let (_, grads) = loss_of(&model, true)?;
        for (pi, g) in grads.iter().enumerate() {
            let fd = finite_diff_grad(
                |p| {
                    let mut m = model.clone();
                    m.parameters_mut()[pi] = p.clone();
                    loss_of(&m, false).map(|r| r.0).unwrap_or(f64::NAN)
                },
                &model.parameters()[pi],
                1e-6,
            )?;
            worst = worst.max(relative_error(g, fd.data()));
        }
    }
    Ok(CheckOutcome {
        name: "network gradients (SURE, MSE)".into(),
        passed: worst <= tol,
        detail: format!("max relative error {worst:.2e} (limit {tol:.0e})"),
    })
}

/// A denoiser with a closed-form map for the unbiasedness check.
#[derive(Debug, Clone, Copy)]
pub enum ToyDenoiser {
    Identity,
    Zero,
    Half,
    /// Three-tap moving average with replicated edges.
    Smooth,
    SoftThreshold(f64),
}

impl ToyDenoiser {
    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        match *self {
            ToyDenoiser::Identity => y.to_vec(),
            ToyDenoiser::Zero => vec![0.0; y.len()],
            ToyDenoiser::Half => y.iter().map(|v| 0.5 * v).collect(),
            ToyDenoiser::Smooth => (0..y.len())
                .map(|i| {
                    let l = y[i.saturating_sub(1)];
                    let r = y[(i + 1).min(y.len() - 1)];
                    (l + y[i] + r) / 3.0
                })
                .collect(),
            ToyDenoiser::SoftThreshold(t) => y.iter().map(|v| v.signum() * (v.abs() - t).max(0.0)).collect(),
        }
    }
}

/// Per-draw SURE and true MSE of `den` over `draws` noisy copies of `clean`.
/// Divergences come from [`analytic_divergence`].
pub fn sure_vs_mse(
    den: ToyDenoiser,
    clean: &[f64],
    sigma: f64,
    draws: usize,
    rng: &mut RngStream,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = clean.len();
    let noise = NoiseModel::new(sigma)?;
    let mut sures = Vec::with_capacity(draws);
    let mut mses = Vec::with_capacity(draws);
    for _ in 0..draws {
        let y: Vec<f64> = clean.iter().map(|&x| x + sigma * rng.gaussian()).collect();
        let yt = Tensor::from_vec(vec![k], y.clone())?;
        let fy = den.apply(&y);
        let div = analytic_divergence(|t: &Tensor<f64>| Tensor::from_vec(vec![k], den.apply(t.data())), &yt)?;
        let mut t = Tape::new();
        let yv = t.constant(yt);
        let fv = t.constant(Tensor::from_vec(vec![k], fy.clone())?);
        let dv = t.constant(Tensor::scalar(div));
        let s = sure_loss(&mut t, yv, fv, dv, &noise)?;
        sures.push(t.value(s).item()?);
        mses.push(clean.iter().zip(&fy).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / k as f64);
    }
    Ok((sures, mses))
}

pub fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// `|mean SURE − mean MSE| ≤ 3·√(SE²_sure + SE²_mse)` for every denoiser
/// and noise level.
pub fn check_unbiasedness(draws: usize, seed: u64) -> Result<CheckOutcome> {
    let clean: Vec<f64> = (0..64).map(|i| 0.5 + 0.3 * (i as f64 * 0.3).sin()).collect();
    let mut rng = RngStream::new(seed, 9);
    let mut worst = 0.0f64;
    for sigma in [10.0, 25.0, 50.0].map(|s| s / 255.0) {
        for den in [
            ToyDenoiser::Identity,
            ToyDenoiser::Zero,
            ToyDenoiser::Half,
            ToyDenoiser::Smooth,
            ToyDenoiser::SoftThreshold(0.5),
        ] {
            let (s, m) = sure_vs_mse(den, &clean, sigma, draws, &mut rng)?;
            let (ms, ses) = mean_and_se(&s);
            let (mm, sem) = mean_and_se(&m);
            let z = (ms - mm).abs() / (ses * ses + sem * sem).sqrt();
            worst = worst.max(z);
        }
    }
    Ok(CheckOutcome {
        name: "SURE unbiasedness".into(),
        passed: worst <= 3.0,
        detail: format!("worst |bias| = {worst:.2} pooled standard errors (limit 3)"),
    })
}

pub fn run_all(quick: bool) -> Result<Vec<CheckOutcome>> {
    let (trials, draws) = if quick { (10, 2000) } else { (100, 10_000) };
    Ok(vec![
        check_primitives(trials, 1, 1e-5)?,
        check_network(trials.min(20), 2, 1e-4)?,
        check_unbiasedness(draws, 3)?,
    ])
}
