// Patch cache layout (all integers little-endian):
//
//   magic    8 bytes  "SDNPATCH"
//   version  u32      1
//   size     u32      patch side length
//   count    u64      number of patches
//   count × { source u32, size² bytes of 8-bit pixels, row-major }
//
// Pixels are quantised to the nearest 8-bit code.

use std::io::Write;
use std::path::Path;

use super::{GrayImage, PatchSet};
use crate::error::{Error, PatchCacheError, Result};

pub const PATCH_CACHE_MAGIC: &[u8; 8] = b"SDNPATCH";
pub const PATCH_CACHE_VERSION: u32 = 1;

pub fn write_patch_cache(set: &PatchSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(24 + set.len() * (4 + set.patch_size * set.patch_size));
    buf.extend_from_slice(PATCH_CACHE_MAGIC);
    buf.extend_from_slice(&PATCH_CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(set.patch_size as u32).to_le_bytes());
    buf.extend_from_slice(&(set.len() as u64).to_le_bytes());
    for (p, &src) in set.patches.iter().zip(&set.provenance) {
        buf.extend_from_slice(&(src as u32).to_le_bytes());
        buf.extend(p.to_u8());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_patch_cache(path: impl AsRef<Path>) -> Result<PatchSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes)?)
}

fn decode(bytes: &[u8]) -> Result<PatchSet, PatchCacheError> {
    let take = |at: usize, n: usize| bytes.get(at..at + n).ok_or(PatchCacheError::Truncated);
    if take(0, 8)? != PATCH_CACHE_MAGIC {
        return Err(PatchCacheError::BadMagic);
    }
    let u32_at = |at| take(at, 4).map(|b| u32::from_le_bytes(b.try_into().unwrap()));
    let version = u32_at(8)?;
    if version != PATCH_CACHE_VERSION {
        return Err(PatchCacheError::Version(version));
    }
    let size = u32_at(12)? as usize;
    let count = u64::from_le_bytes(take(16, 8)?.try_into().unwrap()) as usize;
    let mut set = PatchSet::new(size);
    let mut at = 24;
    for _ in 0..count {
        let src = u32_at(at)? as usize;
        let px = take(at + 4, size * size)?;
        let img = GrayImage::from_u8(size, size, px).map_err(|_| PatchCacheError::Truncated)?;
        set.patches.push(img);
        set.provenance.push(src);
        at += 4 + size * size;
    }
    Ok(set)
}
