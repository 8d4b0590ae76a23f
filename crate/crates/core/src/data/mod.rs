//! Grayscale images, the patch pipeline and noisy minibatches.

mod batch;
mod cache;
mod pgm;
mod transform;

pub use batch::{add_gaussian_noise, batches, Batch, Batches, NoiseSource};
pub use cache::{read_patch_cache, write_patch_cache, PATCH_CACHE_MAGIC, PATCH_CACHE_VERSION};
pub use pgm::{decode_pgm, encode_pgm, load_pgm, save_pgm};
pub use transform::{augment, extract_patches, rescale, rescale_to, Augment, PatchRecipe};

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("empty image {width}×{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::shape(format!(
                "{} pixels for a {width}×{height} image",
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { width, height, pixels })
    }

    /// 8-bit intensities scaled by 1/255.
    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Clips arbitrary values into `[0, 1]`.
    pub fn from_clipped(width: usize, height: usize, values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let pixels = values
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Nearest 8-bit code of each pixel.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    /// A `(1, 1, H, W)` tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_vec(
            vec![1, 1, self.height, self.width],
            self.pixels.iter().map(|&v| T::of(v)).collect(),
        )
        .expect("pixel count matches extents")
    }
}

/// Uniform square training patches and the id of the image each came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatchSet {
    pub patch_size: usize,
    pub patches: Vec<GrayImage>,
    pub provenance: Vec<usize>,
}

impl PatchSet {
    pub fn new(patch_size: usize) -> Self {
        Self {
            patch_size,
            patches: Vec::new(),
            provenance: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn push(&mut self, patch: GrayImage, source: usize) -> Result<()> {
        if patch.width() != self.patch_size || patch.height() != self.patch_size {
            return Err(Error::shape(format!(
                "{}×{} patch in a set of {}×{0}",
                patch.width(),
                patch.height(),
                self.patch_size
            )));
        }
        self.patches.push(patch);
        self.provenance.push(source);
        Ok(())
    }

    pub fn extend(&mut self, other: PatchSet) -> Result<()> {
        for (p, s) in other.patches.into_iter().zip(other.provenance) {
            self.push(p, s)?;
        }
        Ok(())
    }

    /// Runs the full rescale → crop → augment recipe over `images`.
    pub fn from_images(images: &[GrayImage], recipe: &PatchRecipe) -> Result<Self> {
        recipe.validate()?;
        let mut set = PatchSet::new(recipe.patch_size);
        for (id, img) in images.iter().enumerate() {
            for &factor in &recipe.scales {
                let scaled = rescale(img, factor)?;
                if scaled.width() < recipe.patch_size || scaled.height() < recipe.patch_size {
                    continue;
                }
                let crops = extract_patches(&scaled, id, recipe.patch_size, recipe.stride)?;
                set.extend(augment(&crops, &recipe.augment))?;
            }
        }
        Ok(set)
    }
}

/// Reads a manifest: one image path per line, relative to the manifest's
/// directory. Blank lines and `#` comments are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect())
}

/// `.pgm` files directly inside `dir`, sorted by file name.
pub fn list_pgm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}
