//! On-disk index format (PSIX).
//!
//! Little-endian throughout:
//!
//! ```text
//! magic        4 bytes  "PSIX"
//! version      u32      1
//! m            u32      mosaics per record
//! dim          u32      bits per code == semantic components
//! float_width  u8       4 or 8 (bytes per semantic component)
//! record_count u64
//! label table  u16 count, then per name: u16 byte length + UTF-8
//! records      per record:
//!   id         u16 byte length + UTF-8 (non-empty)
//!   label      u16 (0xFFFF = unlabeled, else an index into the table)
//!   mosaic     m * ceil(dim/8) bytes, codes packed LSB-first
//!   semantic   dim * float_width bytes
//!   text flag  u8 (0 or 1)
//!   text       dim * float_width bytes when the flag is 1
//! ```
//!
//! With `float_width = 4` components are quantized to f32 on save; loading
//! widens them back without renormalizing, so save → load → save is
//! byte-identical at either width.

use std::fs;
use std::path::Path;

use ndarray::Array1;

use crate::core::{BinaryMosaicCode, SemanticVector, SlideRecord};
use crate::{Error, Result};

use super::{RetrievalIndex, LABEL_NONE};

const MAGIC: &[u8; 4] = b"PSIX";
const VERSION: u32 = 1;

/// Widened f32 values sit within f32 rounding of a unit norm.
const F32_NORM_TOL: f64 = 1e-5;
const F64_NORM_TOL: f64 = 1e-9;

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let bytes = s.as_bytes();
    if bytes.len() > u16::MAX as usize {
        return Err(Error::InvalidValue {
            key: "string field".into(),
            message: format!("{} bytes exceeds the u16 length prefix", bytes.len()),
        });
    }
    out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
    out.extend_from_slice(bytes);
    Ok(())
}

fn put_semantic(out: &mut Vec<u8>, v: &SemanticVector, float_width: u8) {
    match float_width {
        4 => {
            for &x in v.values() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        _ => {
            for &x in v.values() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
}

pub fn save_index(index: &RetrievalIndex, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(index.m() as u32).to_le_bytes());
    out.extend_from_slice(&(index.dim() as u32).to_le_bytes());
    out.push(index.float_width());
    out.extend_from_slice(&(index.len() as u64).to_le_bytes());

    if index.label_names().len() > u16::MAX as usize {
        return Err(Error::InvalidValue {
            key: "label table".into(),
            message: "too many labels for the u16 count".into(),
        });
    }
    out.extend_from_slice(&(index.label_names().len() as u16).to_le_bytes());
    for name in index.label_names() {
        put_str(&mut out, name)?;
    }

    for rec in index.records() {
        put_str(&mut out, &rec.id)?;
        out.extend_from_slice(&rec.label.unwrap_or(LABEL_NONE).to_le_bytes());
        out.extend_from_slice(&rec.mosaic.to_bytes());
        put_semantic(&mut out, &rec.semantic, index.float_width());
        match &rec.text_semantic {
            Some(t) => {
                out.push(1);
                put_semantic(&mut out, t, index.float_width());
            }
            None => out.push(0),
        }
    }

    fs::write(path, out)?;
    Ok(())
}

/// Byte reader that reports the offset where a failed read began.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let start = self.pos;
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: start as u64,
                message: format!(
                    "truncated reading {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            });
        }
        self.pos += n;
        Ok(&self.bytes[start..start + n])
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u16(what)? as usize;
        let start = self.pos;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Format {
            offset: start as u64,
            message: format!("{what} is not valid UTF-8"),
        })
    }

    fn semantic(&mut self, dim: usize, float_width: u8, what: &str) -> Result<SemanticVector> {
        let start = self.pos;
        let (values, tol) = match float_width {
            4 => {
                let raw = self.take(dim * 4, what)?;
                let v: Vec<f64> = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect();
                (v, F32_NORM_TOL)
            }
            _ => {
                let raw = self.take(dim * 8, what)?;
                let v: Vec<f64> = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                (v, F64_NORM_TOL)
            }
        };
        SemanticVector::new_with_tol(Array1::from_vec(values), tol).map_err(|e| Error::Format {
            offset: start as u64,
            message: format!("{what}: {e}"),
        })
    }
}

pub fn load_index(path: &Path) -> Result<RetrievalIndex> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };

    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {magic:?}, expected {MAGIC:?}"),
        });
    }
    let version_at = cur.pos as u64;
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: version_at,
            message: format!("unsupported version {version}"),
        });
    }
    let m = cur.u32("m")? as usize;
    let dim = cur.u32("dim")? as usize;
    let fw_at = cur.pos as u64;
    let float_width = cur.u8("float_width")?;
    let record_count = cur.u64("record count")?;

    let mut index = RetrievalIndex::with_float_width(m, dim, float_width).map_err(|e| {
        Error::Format {
            offset: fw_at,
            message: format!("bad header: {e}"),
        }
    })?;

    let label_count = cur.u16("label count")? as usize;
    for i in 0..label_count {
        let at = cur.pos as u64;
        let name = cur.string("label name")?;
        index.add_label(&name).map_err(|e| Error::Format {
            offset: at,
            message: format!("label {i}: {e}"),
        })?;
    }

    let bpc = dim.div_ceil(8);
    for r in 0..record_count {
        let rec_at = cur.pos as u64;
        let id = cur.string("record id")?;
        let label_raw = cur.u16("record label")?;
        let label = if label_raw == LABEL_NONE {
            None
        } else {
            Some(label_raw)
        };
        let mosaic_at = cur.pos as u64;
        let mosaic_bytes = cur.take(m * bpc, "mosaic block")?;
        let mosaic = BinaryMosaicCode::from_bytes(m, dim, mosaic_bytes).map_err(|e| {
            Error::Format {
                offset: mosaic_at,
                message: format!("record {r} mosaic: {e}"),
            }
        })?;
        let semantic = cur.semantic(dim, float_width, "semantic block")?;
        let text_semantic = match cur.u8("text flag")? {
            0 => None,
            1 => Some(cur.semantic(dim, float_width, "text block")?),
            other => {
                return Err(Error::Format {
                    offset: cur.pos as u64 - 1,
                    message: format!("text flag must be 0 or 1, got {other}"),
                });
            }
        };
        index
            .push(SlideRecord {
                id,
                label,
                mosaic,
                semantic,
                text_semantic,
            })
            .map_err(|e| Error::Format {
                offset: rec_at,
                message: format!("record {r}: {e}"),
            })?;
    }

    if cur.pos != bytes.len() {
        return Err(Error::Format {
            offset: cur.pos as u64,
            message: format!("{} trailing bytes after the last record", bytes.len() - cur.pos),
        });
    }
    Ok(index)
}
