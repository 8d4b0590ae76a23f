use std::marker::PhantomData;

use super::PatchSet;
use crate::error::{Error, Result};
use crate::loss::NoiseModel;
use crate::numerics::Tensor;
use crate::rng::{RngStream, StreamKind};
use crate::scalar::Scalar;

/// `y = x + w` with `w ~ N(0, σ²)` in working units. Values are not clipped.
pub fn add_gaussian_noise<T: Scalar>(clean: &Tensor<T>, noise: &NoiseModel, rng: &mut RngStream) -> Tensor<T> {
    let sigma = noise.sigma();
    let data = clean
        .data()
        .iter()
        .map(|&x| T::of(x.as_f64() + sigma * rng.gaussian()))
        .collect();
    Tensor::new(clean.shape().clone(), data).expect("same length as input")
}

/// Minibatch of `(B, 1, s, s)` noisy patches with their clean sources.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub noisy: Tensor<T>,
    pub clean: Option<Tensor<T>>,
    /// Patch indices, in batch order.
    pub indices: Vec<usize>,
}

impl<T> Batch<T> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Where batch noise comes from.
#[derive(Debug)]
pub enum NoiseSource<'a> {
    /// Fresh draws from a running stream: new noise every epoch.
    Fresh(&'a mut RngStream),
    /// Noise of patch `i` always comes from its own stream under `seed`, so
    /// every epoch sees the same noisy copy.
    Fixed { seed: u64 },
}

/// One epoch over a patch set in seeded-shuffled order.
#[derive(Debug)]
pub struct Batches<'a, T> {
    patches: &'a PatchSet,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    noise: NoiseModel,
    source: NoiseSource<'a>,
    _scalar: PhantomData<T>,
}

/// Starts an epoch: shuffles patch indices with `shuffle` and yields batches
/// of `batch_size` (the last one may be short).
pub fn batches<'a, T: Scalar>(
    patches: &'a PatchSet,
    batch_size: usize,
    shuffle: &mut RngStream,
    noise: NoiseModel,
    source: NoiseSource<'a>,
) -> Result<Batches<'a, T>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be ≥ 1"));
    }
    if patches.is_empty() {
        return Err(Error::invalid("empty patch set"));
    }
    let mut order: Vec<usize> = (0..patches.len()).collect();
    shuffle.shuffle(&mut order);
    Ok(Batches {
        patches,
        order,
        pos: 0,
        batch_size,
        noise,
        source,
        _scalar: PhantomData,
    })
}

impl<T> Batches<'_, T> {
    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl<T: Scalar> Iterator for Batches<'_, T> {
    type Item = Batch<T>;

    fn next(&mut self) -> Option<Batch<T>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;

        let s = self.patches.patch_size;
        let mut clean = Vec::with_capacity(indices.len() * s * s);
        for &i in &indices {
            clean.extend(self.patches.patches[i].pixels().iter().map(|&v| T::of(v)));
        }
        let sigma = self.noise.sigma();
        let noisy: Vec<T> = match &mut self.source {
            NoiseSource::Fresh(rng) => clean
                .iter()
                .map(|&x| T::of(x.as_f64() + sigma * rng.gaussian()))
                .collect(),
            NoiseSource::Fixed { seed } => {
                let mut out = Vec::with_capacity(clean.len());
                for (k, &i) in indices.iter().enumerate() {
                    let mut rng = RngStream::named(*seed, StreamKind::Noise, i as u32);
                    out.extend(
                        clean[k * s * s..(k + 1) * s * s]
                            .iter()
                            .map(|&x| T::of(x.as_f64() + sigma * rng.gaussian())),
                    );
                }
                out
            }
        };
        let dims = vec![indices.len(), 1, s, s];
        Some(Batch {
            noisy: Tensor::from_vec(dims.clone(), noisy).expect("batch extents"),
            clean: Some(Tensor::from_vec(dims, clean).expect("batch extents")),
            indices,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GrayImage;
    use crate::numerics::Shape;

    fn patch_set(n: usize, size: usize) -> PatchSet {
        let mut s = PatchSet::new(size);
        for i in 0..n {
            s.push(GrayImage::filled(size, size, (i % 10) as f64 / 10.0).unwrap(), i)
                .unwrap();
        }
        s
    }

    fn noise() -> NoiseModel {
        NoiseModel::from_8bit(25.0).unwrap()
    }

    #[test]
    fn batch_sizes() {
        let set = patch_set(225, 4);
        let mut sh = RngStream::new(1, 2);
        let mut nr = RngStream::new(1, 3);
        let it = batches::<f32>(&set, 64, &mut sh, noise(), NoiseSource::Fresh(&mut nr)).unwrap();
        assert_eq!(it.num_batches(), 4);
        let sizes: Vec<usize> = it.map(|b| b.len()).collect();
        assert_eq!(sizes, vec![64, 64, 64, 33]);
    }

    #[test]
    fn epoch_is_permutation() {
        let set = patch_set(100, 3);
        let mut sh = RngStream::new(4, 2);
        let mut nr = RngStream::new(4, 3);
        let mut seen: Vec<usize> = batches::<f64>(&set, 7, &mut sh, noise(), NoiseSource::Fresh(&mut nr))
            .unwrap()
            .flat_map(|b| b.indices)
            .collect();
        assert_ne!(seen, (0..100).collect::<Vec<_>>());
        seen.sort();
        assert_eq!(seen, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_same_batches() {
        let set = patch_set(50, 4);
        let run = || {
            let mut sh = RngStream::new(9, 2);
            let mut nr = RngStream::new(9, 3);
            batches::<f32>(&set, 16, &mut sh, noise(), NoiseSource::Fresh(&mut nr))
                .unwrap()
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clean_matches_patches() {
        let set = patch_set(10, 2);
        let mut sh = RngStream::new(1, 2);
        let b = batches::<f64>(&set, 10, &mut sh, noise(), NoiseSource::Fixed { seed: 1 })
            .unwrap()
            .next()
            .unwrap();
        let clean = b.clean.unwrap();
        for (k, &i) in b.indices.iter().enumerate() {
            assert_eq!(clean.data()[k * 4], set.patches[i].pixels()[0]);
        }
    }

    #[test]
    fn fixed_noise_repeats_across_epochs() {
        let set = patch_set(20, 3);
        let mut sh = RngStream::new(1, 2);
        let collect = |sh: &mut RngStream| {
            let mut by_patch = vec![Vec::new(); 20];
            for b in batches::<f64>(&set, 6, sh, noise(), NoiseSource::Fixed { seed: 5 }).unwrap() {
                for (k, &i) in b.indices.iter().enumerate() {
                    by_patch[i] = b.noisy.data()[k * 9..(k + 1) * 9].to_vec();
                }
            }
            by_patch
        };
        let a = collect(&mut sh);
        let b = collect(&mut sh);
        assert_eq!(a, b);
    }

    #[test]
    fn fresh_noise_changes_across_epochs() {
        let set = patch_set(4, 3);
        let mut sh = RngStream::new(1, 2);
        let mut nr = RngStream::new(1, 3);
        let e1: Vec<_> = batches::<f64>(&set, 4, &mut sh, noise(), NoiseSource::Fresh(&mut nr))
            .unwrap()
            .collect();
        let e2: Vec<_> = batches::<f64>(&set, 4, &mut sh, noise(), NoiseSource::Fresh(&mut nr))
            .unwrap()
            .collect();
        assert_ne!(e1[0].noisy, e2[0].noisy);
    }

    #[test]
    fn errors() {
        let set = patch_set(3, 2);
        let mut sh = RngStream::new(1, 2);
        assert!(batches::<f32>(&set, 0, &mut sh, noise(), NoiseSource::Fixed { seed: 0 }).is_err());
        let empty = PatchSet::new(2);
        assert!(batches::<f32>(&empty, 4, &mut sh, noise(), NoiseSource::Fixed { seed: 0 }).is_err());
    }

    #[test]
    fn noise_statistics() {
        let n = 1_000_000;
        let clean = Tensor::<f64>::full(Shape::new(vec![n]).unwrap(), 0.5);
        let nm = noise();
        let y = add_gaussian_noise(&clean, &nm, &mut RngStream::new(13, 3));
        let r: Vec<f64> = y.data().iter().map(|v| v - 0.5).collect();
        let mean = r.iter().sum::<f64>() / n as f64;
        let sd = (r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((sd / nm.sigma() - 1.0).abs() < 0.005);
        // unclipped: some values leave [0, 1]
        let tiny = NoiseModel::new(1e-9).unwrap();
        let y = add_gaussian_noise(&clean, &tiny, &mut RngStream::new(13, 3));
        assert!(y.data().iter().all(|v| (v - 0.5).abs() < 1e-7));
    }

    #[test]
    fn noise_is_seeded() {
        let clean = Tensor::<f32>::full(Shape::new(vec![50]).unwrap(), 0.2);
        let a = add_gaussian_noise(&clean, &noise(), &mut RngStream::new(2, 3));
        let b = add_gaussian_noise(&clean, &noise(), &mut RngStream::new(2, 3));
        assert_eq!(a, b);
    }
}
