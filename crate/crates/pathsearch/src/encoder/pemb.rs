//! Patch-embedding files.
//!
//! Binary layout (little-endian throughout):
//!
//! ```text
//! "PEMB" | version: u32 = 1 | n: u32 | c: u32 | n*c f32 values, row-major
//! ```
//!
//! A CSV fallback (one patch per line, comma-separated floats) is accepted;
//! [`read_patch_file`] sniffs the magic to pick the parser. Values are stored
//! in 32-bit precision and widened to f64 in memory.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::core::PatchEmbeddingMatrix;
use crate::{Error, Result};

pub(crate) const PEMB_MAGIC: &[u8; 4] = b"PEMB";
const PEMB_VERSION: u32 = 1;

/// Write a patch matrix in the binary embedding format.
pub fn write_pemb(path: &Path, patches: &PatchEmbeddingMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(PEMB_MAGIC)?;
    w.write_all(&PEMB_VERSION.to_le_bytes())?;
    w.write_all(&(patches.n_patches() as u32).to_le_bytes())?;
    w.write_all(&(patches.dim() as u32).to_le_bytes())?;
    for &x in patches.rows().iter() {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a binary embedding file.
pub fn read_pemb(path: &Path) -> Result<PatchEmbeddingMatrix> {
    let mut r = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    parse_pemb(&bytes)
}

fn parse_pemb(bytes: &[u8]) -> Result<PatchEmbeddingMatrix> {
    if bytes.len() < 4 || &bytes[..4] != PEMB_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic, expected PEMB".into(),
        });
    }
    if bytes.len() < 16 {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: "truncated header".into(),
        });
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != PEMB_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let n = u32_at(8) as usize;
    let c = u32_at(12) as usize;
    let expected = 16 + 4 * n * c;
    if bytes.len() != expected {
        return Err(Error::Format {
            offset: bytes.len().min(expected) as u64,
            message: format!(
                "expected {expected} bytes for {n} x {c} embeddings, file has {}",
                bytes.len()
            ),
        });
    }
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = Vec::with_capacity(c);
        for j in 0..c {
            let off = 16 + 4 * (i * c + j);
            let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Format {
                    offset: off as u64,
                    message: format!("non-finite value at patch {i}, column {j}"),
                });
            }
            row.push(v as f64);
        }
        rows.push(row);
    }
    PatchEmbeddingMatrix::from_rows(rows)
}

/// Read a CSV of patch embeddings: one patch per line, comma-separated.
pub fn read_patch_csv(path: &Path) -> Result<PatchEmbeddingMatrix> {
    let text = std::fs::read_to_string(path)?;
    let path_str = path.display().to_string();
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                path: path_str.clone(),
                line: lineno + 1,
                message: format!("not a number: {:?}", field.trim()),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path_str.clone(),
                    line: lineno + 1,
                    message: "non-finite value".into(),
                });
            }
            row.push(v);
        }
        rows.push(row);
    }
    PatchEmbeddingMatrix::from_rows(rows).map_err(|e| match e {
        Error::DimensionMismatch { expected, got, .. } => Error::Parse {
            path: path_str.clone(),
            line: 0,
            message: format!("ragged rows: widths {expected} and {got} both present"),
        },
        other => other,
    })
}

/// Read either format, deciding by the magic bytes.
pub fn read_patch_file(path: &Path) -> Result<PatchEmbeddingMatrix> {
    let mut head = [0u8; 4];
    let n = File::open(path)?.read(&mut head)?;
    if n == 4 && &head == PEMB_MAGIC {
        read_pemb(path)
    } else {
        read_patch_csv(path)
    }
}
