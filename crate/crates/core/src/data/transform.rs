use super::{GrayImage, PatchSet};
use crate::error::{Error, Result};

/// Exact pixel permutations of a square patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Augment {
    Identity,
    HFlip,
    VFlip,
    Rot90,
    Rot180,
    Rot270,
}

impl Augment {
    pub fn apply(self, img: &GrayImage) -> GrayImage {
        let (w, h) = (img.width(), img.height());
        let (ow, oh) = match self {
            Augment::Rot90 | Augment::Rot270 => (h, w),
            _ => (w, h),
        };
        let mut out = Vec::with_capacity(w * h);
        for y in 0..oh {
            for x in 0..ow {
                let (sx, sy) = match self {
                    Augment::Identity => (x, y),
                    Augment::HFlip => (w - 1 - x, y),
                    Augment::VFlip => (x, h - 1 - y),
                    // counter-clockwise
                    Augment::Rot90 => (w - 1 - y, x),
                    Augment::Rot180 => (w - 1 - x, h - 1 - y),
                    Augment::Rot270 => (y, h - 1 - x),
                };
                out.push(img.get(sx, sy));
            }
        }
        GrayImage::new(ow, oh, out).expect("permutation of a valid image")
    }
}

impl std::str::FromStr for Augment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" | "identity" => Augment::Identity,
            "hflip" => Augment::HFlip,
            "vflip" => Augment::VFlip,
            "rot90" => Augment::Rot90,
            "rot180" => Augment::Rot180,
            "rot270" => Augment::Rot270,
            _ => return Err(Error::invalid(format!("unknown augmentation {s:?}"))),
        })
    }
}

/// Multi-scale crop-and-flip recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchRecipe {
    pub patch_size: usize,
    pub stride: usize,
    pub scales: Vec<f64>,
    pub augment: Vec<Augment>,
}

impl Default for PatchRecipe {
    fn default() -> Self {
        Self {
            patch_size: 40,
            stride: 10,
            scales: vec![1.0, 0.9, 0.8, 0.7],
            augment: vec![Augment::Identity, Augment::HFlip],
        }
    }
}

impl PatchRecipe {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.stride == 0 {
            return Err(Error::invalid("patch size and stride must be positive"));
        }
        if self.scales.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
            return Err(Error::invalid(format!("scales {:?} must lie in (0, 1]", self.scales)));
        }
        Ok(())
    }
}

/// Bilinear resize by `factor ∈ (0, 1]`; extents become `⌊extent · factor⌋`.
pub fn rescale(image: &GrayImage, factor: f64) -> Result<GrayImage> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::invalid(format!("rescale factor {factor} not in (0, 1]")));
    }
    let ow = (image.width() as f64 * factor).floor() as usize;
    let oh = (image.height() as f64 * factor).floor() as usize;
    rescale_to(image, ow, oh)
}

/// Bilinear resize to explicit extents, sampling at pixel centres
/// (`src = (dst + ½) · in/out − ½`, clamped to the image).
pub fn rescale_to(image: &GrayImage, out_w: usize, out_h: usize) -> Result<GrayImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid(format!("rescaled image would be {out_w}×{out_h}")));
    }
    let (w, h) = (image.width(), image.height());
    let axis = |dst: usize, src_len: usize, dst_len: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).clamp(0.0, (src_len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, s - i0 as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|x| axis(x, w, out_w)).collect();
    let mut out = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let (y0, y1, ty) = axis(y, h, out_h);
        for &(x0, x1, tx) in &cols {
            let top = image.get(x0, y0) * (1.0 - tx) + image.get(x1, y0) * tx;
            let bottom = image.get(x0, y1) * (1.0 - tx) + image.get(x1, y1) * tx;
            out.push((top * (1.0 - ty) + bottom * ty).clamp(0.0, 1.0));
        }
    }
    GrayImage::new(out_w, out_h, out)
}

/// Square crops at offsets `0, stride, 2·stride, …` along each axis while the
/// crop fits. An image smaller than `size` yields an empty set.
pub fn extract_patches(image: &GrayImage, source: usize, size: usize, stride: usize) -> Result<PatchSet> {
    if size == 0 || stride == 0 {
        return Err(Error::invalid("patch size and stride must be positive"));
    }
    let mut set = PatchSet::new(size);
    if image.width() < size || image.height() < size {
        log::warn!(
            "image {source} ({}×{}) is smaller than the {size}×{size} patch; no patches extracted",
            image.width(),
            image.height()
        );
        return Ok(set);
    }
    for oy in (0..=image.height() - size).step_by(stride) {
        for ox in (0..=image.width() - size).step_by(stride) {
            let mut px = Vec::with_capacity(size * size);
            for y in oy..oy + size {
                let row = &image.pixels()[y * image.width() + ox..y * image.width() + ox + size];
                px.extend_from_slice(row);
            }
            set.push(GrayImage::new(size, size, px)?, source)?;
        }
    }
    Ok(set)
}

/// Each patch under each mode, patch-major.
pub fn augment(patches: &PatchSet, modes: &[Augment]) -> PatchSet {
    let mut out = PatchSet::new(patches.patch_size);
    for (p, &src) in patches.patches.iter().zip(&patches.provenance) {
        for &m in modes {
            out.patches.push(m.apply(p));
            out.provenance.push(src);
        }
    }
    out
}
