// Binary PGM (P5), 8-bit only:
//   "P5" <ws> width <ws> height <ws> maxval <single ws> raster
// Comments start with '#' and run to end of line; they may appear anywhere
// whitespace is allowed in the header.

use std::path::Path;

use super::GrayImage;
use crate::error::{Error, PgmError, Result};

struct Header {
    width: usize,
    height: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, PgmError> {
    if bytes.len() < 2 {
        return Err(PgmError::MalformedHeader("file too short".into()));
    }
    if &bytes[..2] != b"P5" {
        return Err(PgmError::UnsupportedFormat {
            magic: String::from_utf8_lossy(&bytes[..2]).into_owned(),
        });
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        let ws_start = pos;
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        if pos == ws_start {
            return Err(PgmError::MalformedHeader(format!(
                "missing whitespace before field {i}"
            )));
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(PgmError::MalformedHeader(format!("expected a number at byte {start}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PgmError::MalformedHeader("number out of range".into()))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(PgmError::MalformedHeader("missing whitespace after maxval".into())),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(PgmError::MalformedHeader(format!("empty image {width}×{height}")));
    }
    if maxval != 255 {
        return Err(PgmError::UnsupportedMaxval(maxval));
    }
    Ok(Header {
        width: width as usize,
        height: height as usize,
        data_start: pos,
    })
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, PgmError> {
    let h = parse_header(bytes)?;
    let expected = h.width * h.height;
    let raster = &bytes[h.data_start..];
    if raster.len() < expected {
        return Err(PgmError::Truncated {
            expected,
            found: raster.len(),
        });
    }
    Ok(GrayImage::from_u8(h.width, h.height, &raster[..expected]).expect("validated extents"))
}

pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.to_u8());
    out
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_pgm(&bytes)?)
}

pub fn save_pgm(image: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(image)).map_err(|e| Error::io(path, e))
}
