//! Binary scene image container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 4 | magic `PSIM` |
//! | 2 | format version (1) |
//! | 2 | reserved, 0 |
//! | 4 × 3 | height, width, channels |
//! | 4 × h·w·c | `f32` pixels, row-major `[y][x][c]` |

use std::fs;
use std::path::Path;

use persearch_core::model::Image;

use crate::error::{CliError, Result};

pub const MAGIC: [u8; 4] = *b"PSIM";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 20;

pub fn encode(image: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * image.data.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    for dim in [image.height, image.width, image.channels] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in &image.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Image, String> {
    if bytes.len() < HEADER_LEN || bytes[..4] != MAGIC {
        return Err("not a PSIM image".into());
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(format!("unsupported image version {version}"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(8), dim(12), dim(16));
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or("image dimensions overflow")?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * n {
        return Err(format!(
            "expected {} pixel bytes, found {}",
            4 * n,
            body.len()
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Image::from_data(h, w, c, data).map_err(|e| e.to_string())
}

pub fn write(path: &Path, image: &Image) -> Result<()> {
    fs::write(path, encode(image)).map_err(|e| CliError::io(path, e))
}

pub fn read(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes).map_err(|e| CliError::format(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_truncated_and_foreign_input() {
        let mut img = Image::filled(2, 3, 1, 0.25);
        img.set(1, 2, 0, 0.75);
        let bytes = encode(&img);
        assert_eq!(decode(&bytes).unwrap(), img);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(b"PNG\0............................").is_err());
        let mut future = bytes.clone();
        future[4] = 9;
        assert!(decode(&future).unwrap_err().contains("version"));
    }
}
