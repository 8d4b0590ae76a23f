//! Binary checkpoint format, version 1. All integers and floats are
//! little-endian:
//!
//! ```text
//! magic        8 bytes  "SUREDNCK"
//! version      u32      1
//! config       4 × u32  depth, width, kernel, in_channels
//! n_params     u64
//! params       n_params × f32, in `Denoiser::parameters()` order
//! epoch        u32      completed epochs
//! step         u64      completed optimizer steps
//! n_rng        u32
//! rng states   n_rng × { seed u64, stream u64, word_pos u128 }
//! has_adam     u8       0 or 1
//! [adam]       t u64, beta1 f64, beta2 f64, eps f64,
//!              m n_params × f32, v n_params × f32
//! checksum     u32      CRC-32 of every preceding byte
//! ```

use std::io::Write;
use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::model::{Denoiser, DenoiserConfig};
use crate::numerics::Tensor;
use crate::rng::RngState;
use crate::scalar::Scalar;

use super::adam::{AdamConfig, AdamState};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SUREDNCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamBlob {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: DenoiserConfig,
    pub params: Vec<f32>,
    pub epoch: u32,
    pub step: u64,
    pub rng: Vec<RngState>,
    pub adam: Option<AdamBlob>,
}

fn flatten<T: Scalar>(bufs: impl IntoIterator<Item = impl AsRef<[T]>>) -> Vec<f32> {
    bufs.into_iter()
        .flat_map(|b| b.as_ref().iter().map(|v| v.as_f32()).collect::<Vec<_>>())
        .collect()
}

fn split<T: Scalar>(flat: &[f32], lens: &[usize]) -> Vec<Vec<T>> {
    let mut at = 0;
    lens.iter()
        .map(|&n| {
            let v = flat[at..at + n].iter().map(|&x| T::of(x as f64)).collect();
            at += n;
            v
        })
        .collect()
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &Denoiser<T>) -> Self {
        Self {
            config: *model.config(),
            params: flatten(model.parameters().iter().map(Tensor::data)),
            epoch: 0,
            step: 0,
            rng: Vec::new(),
            adam: None,
        }
    }

    pub fn with_adam<T: Scalar>(mut self, state: &AdamState<T>) -> Self {
        self.adam = Some(AdamBlob {
            config: state.config,
            t: state.t,
            m: flatten(&state.m),
            v: flatten(&state.v),
        });
        self
    }

    fn layer_lens(&self) -> Vec<usize> {
        (0..self.config.depth)
            .flat_map(|i| [self.config.kernel_shape(i).numel(), self.config.bias_shape(i).numel()])
            .collect()
    }

    pub fn to_model<T: Scalar>(&self) -> Result<Denoiser<T>> {
        self.check_consistent()?;
        let lens = self.layer_lens();
        let tensors = split::<T>(&self.params, &lens)
            .into_iter()
            .enumerate()
            .map(|(i, data)| {
                let shape = if i % 2 == 0 {
                    self.config.kernel_shape(i / 2)
                } else {
                    self.config.bias_shape(i / 2)
                };
                Tensor::new(shape, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Denoiser::from_parameters(self.config, tensors)
    }

    pub fn to_adam<T: Scalar>(&self) -> Option<AdamState<T>> {
        let lens = self.layer_lens();
        self.adam.as_ref().map(|a| AdamState {
            config: a.config,
            t: a.t,
            m: split(&a.m, &lens),
            v: split(&a.v, &lens),
        })
    }

    fn check_consistent(&self) -> Result<(), CheckpointError> {
        self.config
            .validate()
            .map_err(|e| CheckpointError::ConfigMismatch(e.to_string()))?;
        let want = self.config.num_parameters();
        if self.params.len() != want {
            return Err(CheckpointError::ConfigMismatch(format!(
                "{} parameters stored, config needs {want}",
                self.params.len()
            )));
        }
        if let Some(a) = &self.adam {
            if a.m.len() != want || a.v.len() != want {
                return Err(CheckpointError::Corrupt("optimizer state size".into()));
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(64 + self.params.len() * 12);
        b.extend_from_slice(CHECKPOINT_MAGIC);
        b.extend(CHECKPOINT_VERSION.to_le_bytes());
        let c = &self.config;
        for v in [c.depth, c.width, c.kernel, c.in_channels] {
            b.extend((v as u32).to_le_bytes());
        }
        b.extend((self.params.len() as u64).to_le_bytes());
        self.params.iter().for_each(|v| b.extend(v.to_le_bytes()));
        b.extend(self.epoch.to_le_bytes());
        b.extend(self.step.to_le_bytes());
        b.extend((self.rng.len() as u32).to_le_bytes());
        for r in &self.rng {
            b.extend(r.seed.to_le_bytes());
            b.extend(r.stream.to_le_bytes());
            b.extend(r.word_pos.to_le_bytes());
        }
        match &self.adam {
            None => b.push(0),
            Some(a) => {
                b.push(1);
                b.extend(a.t.to_le_bytes());
                for v in [a.config.beta1, a.config.beta2, a.config.eps] {
                    b.extend(v.to_le_bytes());
                }
                a.m.iter().chain(&a.v).for_each(|v| b.extend(v.to_le_bytes()));
            }
        }
        let crc = crc32fast::hash(&b);
        b.extend(crc.to_le_bytes());
        b
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 12 {
            return Err(if bytes.len() >= 8 && &bytes[..8] != CHECKPOINT_MAGIC {
                CheckpointError::BadMagic
            } else {
                CheckpointError::Truncated
            });
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let mut r = Reader { bytes, pos: 12 };
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let config = DenoiserConfig {
            depth: dims[0],
            width: dims[1],
            kernel: dims[2],
            in_channels: dims[3],
        };
        let n = r.u64()? as usize;
        let params = r.f32s(n)?;
        let epoch = r.u32()?;
        let step = r.u64()?;
        let n_rng = r.u32()? as usize;
        let mut rng = Vec::with_capacity(n_rng.min(16));
        for _ in 0..n_rng {
            rng.push(RngState {
                seed: r.u64()?,
                stream: r.u64()?,
                word_pos: u128::from_le_bytes(r.take(16)?.try_into().unwrap()),
            });
        }
        let adam = match r.take(1)?[0] {
            0 => None,
            1 => {
                let t = r.u64()?;
                let config = AdamConfig {
                    beta1: r.f64()?,
                    beta2: r.f64()?,
                    eps: r.f64()?,
                };
                let m = r.f32s(n)?;
                let v = r.f32s(n)?;
                Some(AdamBlob { config, t, m, v })
            }
            f => return Err(CheckpointError::Corrupt(format!("optimizer flag {f}"))),
        };
        let body_end = r.pos;
        let stored = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if r.pos != bytes.len() {
            return Err(CheckpointError::Corrupt("trailing bytes".into()));
        }
        if crc32fast::hash(&bytes[..body_end]) != stored {
            return Err(CheckpointError::Checksum);
        }
        let ck = Self {
            config,
            params,
            epoch,
            step,
            rng,
            adam,
        };
        ck.check_consistent()?;
        Ok(ck)
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.encode()).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::decode(&bytes)?)
    }

    /// Loads and insists on a particular architecture.
    pub fn load_expecting(path: impl AsRef<Path>, config: &DenoiserConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.config != *config {
            return Err(CheckpointError::ConfigMismatch(format!(
                "checkpoint holds {:?}, expected {config:?}",
                ck.config
            ))
            .into());
        }
        Ok(ck)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, CheckpointError> {
        let raw = self.take(n.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
