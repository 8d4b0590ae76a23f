//! PSNR, SSIM and MSE on the 8-bit intensity scale, whole-image denoising
//! and tabular reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::data::{list_pgm_files, load_pgm, GrayImage};
use crate::error::{Error, Result};
use crate::loss::NoiseModel;
use crate::model::Denoiser;
use crate::numerics::Tensor;
use crate::rng::{RngStream, StreamKind};
use crate::scalar::Scalar;

const PEAK: f64 = 255.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = (0.01 * PEAK) * (0.01 * PEAK);
pub const SSIM_C2: f64 = (0.03 * PEAK) * (0.03 * PEAK);

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(format!(
            "metric inputs have {} and {} pixels",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Mean squared error on the 0–255 scale of two `[0, 1]`-scaled buffers.
pub fn mse_8bit(reference: &[f64], candidate: &[f64]) -> Result<f64> {
    check_len(reference, candidate)?;
    let s: f64 = reference
        .iter()
        .zip(candidate)
        .map(|(&a, &b)| {
            let d = (a - b) * PEAK;
            d * d
        })
        .sum();
    Ok(s / reference.len() as f64)
}

/// `10·log10(255² / mse)`; `+∞` when the MSE is zero.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / mse).log10()
    }
}

pub fn psnr_values(reference: &[f64], candidate: &[f64]) -> Result<f64> {
    mse_8bit(reference, candidate).map(psnr_from_mse)
}

pub fn psnr(reference: &GrayImage, candidate: &GrayImage) -> Result<f64> {
    check_dims(reference, candidate)?;
    psnr_values(reference.pixels(), candidate.pixels())
}

fn check_dims(a: &GrayImage, b: &GrayImage) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::shape(format!(
            "{}×{} vs {}×{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable Gaussian filter over all window positions fully inside the
/// image ("valid" filtering).
fn filter_valid(src: &[f64], width: usize, height: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = width - SSIM_WINDOW + 1;
    let oh = height - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * height];
    for y in 0..height {
        let line = &src[y * width..(y + 1) * width];
        for x in 0..ow {
            rows[y * ow + x] = win.iter().zip(&line[x..x + SSIM_WINDOW]).map(|(w, v)| w * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = win.iter().enumerate().map(|(k, w)| w * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of two `[0, 1]`-scaled buffers, evaluated on the 0–255 scale
/// with an 11×11 Gaussian window (σ = 1.5), `C1 = (0.01·255)²`,
/// `C2 = (0.03·255)²`.
pub fn ssim_values(width: usize, height: usize, reference: &[f64], candidate: &[f64]) -> Result<f64> {
    check_len(reference, candidate)?;
    if reference.len() != width * height {
        return Err(Error::shape("pixel count does not match extents"));
    }
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {width}×{height}"
        )));
    }
    let win = gaussian_window();
    let a: Vec<f64> = reference.iter().map(|v| v * PEAK).collect();
    let b: Vec<f64> = candidate.iter().map(|v| v * PEAK).collect();
    let sq = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(&a, width, height, &win);
    let mu_b = filter_valid(&b, width, height, &win);
    let e_aa = filter_valid(&sq(&a, &a), width, height, &win);
    let e_bb = filter_valid(&sq(&b, &b), width, height, &win);
    let e_ab = filter_valid(&sq(&a, &b), width, height, &win);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
        total += num / den;
    }
    Ok(total / n as f64)
}

pub fn ssim(reference: &GrayImage, candidate: &GrayImage) -> Result<f64> {
    check_dims(reference, candidate)?;
    ssim_values(
        reference.width(),
        reference.height(),
        reference.pixels(),
        candidate.pixels(),
    )
}

/// Output of a whole-image denoising pass.
#[derive(Debug, Clone)]
pub struct Denoised {
    /// Clipped to `[0, 1]`, ready to save.
    pub image: GrayImage,
    /// Raw network output in working units.
    pub raw: Vec<f64>,
    /// Wall time of the forward pass only.
    pub seconds: f64,
}

/// Denoises a `(1, 1, H, W)` tensor in one forward pass.
pub fn denoise_tensor<T: Scalar>(model: &Denoiser<T>, noisy: &Tensor<T>) -> Result<Denoised> {
    let (n, _, h, w) = noisy.shape().nchw()?;
    if n != 1 {
        return Err(Error::shape(format!("denoise expects one image, got a batch of {n}")));
    }
    let start = Instant::now();
    let out = model.forward(noisy)?;
    let seconds = start.elapsed().as_secs_f64();
    let raw: Vec<f64> = out.data().iter().map(|v| v.as_f64()).collect();
    Ok(Denoised {
        image: GrayImage::from_clipped(w, h, raw.iter().copied())?,
        raw,
        seconds,
    })
}

pub fn denoise_image<T: Scalar>(model: &Denoiser<T>, noisy: &GrayImage) -> Result<Denoised> {
    denoise_tensor(model, &noisy.to_tensor())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub image: String,
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
    pub seconds: f64,
    /// PSNR of the noisy input, for reference.
    pub noisy_psnr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub sigma_8bit: f64,
    pub model_id: String,
    pub rows: Vec<MetricsRow>,
    /// Images that could not be evaluated, with the reason.
    pub failures: Vec<(String, String)>,
}

impl Report {
    /// Column means over the rows: `(psnr, ssim, mse, seconds, noisy_psnr)`.
    pub fn averages(&self) -> Option<MetricsRow> {
        if self.rows.is_empty() {
            return None;
        }
        let n = self.rows.len() as f64;
        let mean = |f: fn(&MetricsRow) -> f64| self.rows.iter().map(f).sum::<f64>() / n;
        Some(MetricsRow {
            image: "average".into(),
            psnr: mean(|r| r.psnr),
            ssim: mean(|r| r.ssim),
            mse: mean(|r| r.mse),
            seconds: mean(|r| r.seconds),
            noisy_psnr: mean(|r| r.noisy_psnr),
        })
    }

    /// `image,psnr,ssim,mse,seconds`, one row per image, then the average row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("image,psnr,ssim,mse,seconds\n");
        for r in self.rows.iter().chain(self.averages().as_ref()) {
            writeln!(s, "{},{},{},{},{}", r.image, r.psnr, r.ssim, r.mse, r.seconds).unwrap();
        }
        s
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "model: {}  noise std: {}", self.model_id, self.sigma_8bit).unwrap();
        let name_w = self.rows.iter().map(|r| r.image.len()).chain([7]).max().unwrap_or(7);
        writeln!(
            s,
            "{:<name_w$}  {:>10}  {:>8}  {:>10}  {:>9}  {:>11}",
            "image", "PSNR (dB)", "SSIM", "MSE", "time (s)", "input PSNR"
        )
        .unwrap();
        for r in self.rows.iter().chain(self.averages().as_ref()) {
            writeln!(
                s,
                "{:<name_w$}  {:>10.2}  {:>8.3}  {:>10.2}  {:>9.3}  {:>11.2}",
                r.image, r.psnr, r.ssim, r.mse, r.seconds, r.noisy_psnr
            )
            .unwrap();
        }
        for (img, why) in &self.failures {
            writeln!(s, "{img}: FAILED ({why})").unwrap();
        }
        s
    }
}

fn evaluate_one<T: Scalar>(
    model: &Denoiser<T>,
    name: &str,
    clean: &GrayImage,
    noise: &NoiseModel,
    rng: &mut RngStream,
) -> Result<MetricsRow> {
    let clean_t: Tensor<T> = clean.to_tensor();
    let noisy = crate::data::add_gaussian_noise(&clean_t, noise, rng);
    let noisy_raw: Vec<f64> = noisy.data().iter().map(|v| v.as_f64()).collect();
    let out = denoise_tensor(model, &noisy)?;
    let mse = mse_8bit(clean.pixels(), &out.raw)?;
    Ok(MetricsRow {
        image: name.to_string(),
        psnr: psnr_from_mse(mse),
        ssim: ssim_values(clean.width(), clean.height(), clean.pixels(), &out.raw)?,
        mse,
        seconds: out.seconds,
        noisy_psnr: psnr_values(clean.pixels(), &noisy_raw)?,
    })
}

/// Evaluates in-memory images. Image `i` gets noise from its own stream
/// under `seed`, so rows do not depend on evaluation order.
pub fn evaluate_images<T: Scalar>(
    model: &Denoiser<T>,
    images: &[(String, GrayImage)],
    noise: &NoiseModel,
    seed: u64,
) -> Report {
    let mut report = Report {
        sigma_8bit: noise.sigma_8bit(),
        model_id: String::new(),
        rows: Vec::new(),
        failures: Vec::new(),
    };
    for (i, (name, img)) in images.iter().enumerate() {
        let mut rng = RngStream::named(seed, StreamKind::Eval, i as u32);
        match evaluate_one(model, name, img, noise, &mut rng) {
            Ok(row) => report.rows.push(row),
            Err(e) => report.failures.push((name.clone(), e.to_string())),
        }
    }
    report
}

/// Evaluates every `.pgm` in `clean_dir` (sorted by name), or the files of
/// `manifest` when given. Unreadable images are recorded as failures.
pub fn evaluate_set<T: Scalar>(model: &Denoiser<T>, clean_dir: &Path, noise: &NoiseModel, seed: u64) -> Result<Report> {
    let files = list_pgm_files(clean_dir)?;
    evaluate_files(model, &files, noise, seed)
}

pub fn evaluate_files<T: Scalar>(
    model: &Denoiser<T>,
    files: &[PathBuf],
    noise: &NoiseModel,
    seed: u64,
) -> Result<Report> {
    if files.is_empty() {
        return Err(Error::invalid("no images to evaluate"));
    }
    let mut report = Report {
        sigma_8bit: noise.sigma_8bit(),
        model_id: String::new(),
        rows: Vec::new(),
        failures: Vec::new(),
    };
    for (i, path) in files.iter().enumerate() {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let mut rng = RngStream::named(seed, StreamKind::Eval, i as u32);
        match load_pgm(path).and_then(|img| evaluate_one(model, &name, &img, noise, &mut rng)) {
            Ok(row) => report.rows.push(row),
            Err(e) => {
                log::warn!("{name}: {e}");
                report.failures.push((name, e.to_string()));
            }
        }
    }
    Ok(report)
}
