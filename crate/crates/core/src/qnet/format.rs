//! Binary weight files.
//!
//! Layout (all integers little-endian `u32`):
//! magic `SVOQNET\0`, version, layer count, then `(rows, cols)` per layer,
//! then every layer's weights followed by its bias as little-endian `f32`,
//! and finally a CRC-32 of all preceding bytes.

use std::fs;
use std::path::Path;

use super::{Dense, Network};
use crate::error::{FormatError, Result};

pub const MAGIC: &[u8; 8] = b"SVOQNET\0";
pub const VERSION: u32 = 1;

/// Largest layer side accepted when decoding; guards allocations on corrupt input.
const MAX_SIDE: u32 = 1 << 20;

impl Network<f32> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.layers.len() + 4 * self.param_count() + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.rows as u32).to_le_bytes());
            out.extend_from_slice(&(l.cols as u32).to_le_bytes());
        }
        for s in self.params() {
            for x in s {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(FormatError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let count = r.u32()?;
        if count == 0 || count > 1024 {
            return Err(FormatError::Dimensions(format!("layer count {count}")));
        }
        let mut shapes = Vec::with_capacity(count as usize);
        for i in 0..count {
            let (rows, cols) = (r.u32()?, r.u32()?);
            if rows == 0 || cols == 0 || rows > MAX_SIDE || cols > MAX_SIDE {
                return Err(FormatError::Dimensions(format!("layer {i} is {rows}x{cols}")));
            }
            if let Some(&(prev_rows, _)) = shapes.last() {
                if prev_rows != cols {
                    return Err(FormatError::Dimensions(format!(
                        "layer {i} takes {cols} inputs but the previous layer has {prev_rows} outputs"
                    )));
                }
            }
            shapes.push((rows, cols));
        }
        let params: usize = shapes.iter().map(|&(r, c)| (r as usize) * (c as usize + 1)).sum();
        let needed = r.pos + 4 * params + 4;
        if bytes.len() < needed {
            return Err(FormatError::Truncated { needed, found: bytes.len() });
        }
        if bytes.len() > needed {
            return Err(FormatError::TrailingBytes(bytes.len() - needed));
        }
        let body = needed - 4;
        let stored = u32::from_le_bytes(bytes[body..].try_into().expect("four bytes"));
        let computed = crc32fast::hash(&bytes[..body]);
        if stored != computed {
            return Err(FormatError::Checksum { stored, computed });
        }
        let mut layers = Vec::with_capacity(shapes.len());
        for (rows, cols) in shapes {
            let (rows, cols) = (rows as usize, cols as usize);
            let weights = r.f32s(rows * cols)?;
            let bias = r.f32s(rows)?;
            layers.push(Dense { rows, cols, weights, bias });
        }
        Ok(Network { layers })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(FormatError::Truncated { needed: end, found: self.bytes.len() });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect())
    }
}

pub fn save_weights(net: &Network<f32>, path: &Path) -> Result<()> {
    fs::write(path, net.to_bytes())?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<Network<f32>> {
    Ok(Network::from_bytes(&fs::read(path)?)?)
}
