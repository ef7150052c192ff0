//! Encoder checkpoint files.
//!
//! Layout (little-endian):
//!
//! ```text
//! "PSMD" | version: u32 = 1 | dim: u32 | hidden: u32 | m: u32
//! | flags: u8 (bit0 residual, bit1 projection, bit2 text projection)
//! | temperature_logit: f64
//! | correlation Q, K, V           (each dim*dim f64, row-major)
//! | m branches of V1, V2, w       (hidden*dim, hidden*dim, hidden f64)
//! | aggregator V1, V2, w
//! | [projection dim*dim f64]      (if flag set)
//! | [text projection dim*dim f64] (if flag set)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{CorrelationParams, EncoderModel, GatedAttentionParams};
use crate::{Error, Result};

const MODEL_MAGIC: &[u8; 4] = b"PSMD";
const MODEL_VERSION: u32 = 1;

const FLAG_RESIDUAL: u8 = 1;
const FLAG_PROJECTION: u8 = 1 << 1;
const FLAG_TEXT_PROJECTION: u8 = 1 << 2;

/// Persist a model checkpoint.
pub fn save_model(path: &Path, model: &EncoderModel) -> Result<()> {
    model.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&(model.dim() as u32).to_le_bytes())?;
    w.write_all(&(model.hidden() as u32).to_le_bytes())?;
    w.write_all(&(model.m() as u32).to_le_bytes())?;
    let mut flags = 0u8;
    if model.correlation.residual {
        flags |= FLAG_RESIDUAL;
    }
    if model.projection.is_some() {
        flags |= FLAG_PROJECTION;
    }
    if model.text_projection.is_some() {
        flags |= FLAG_TEXT_PROJECTION;
    }
    w.write_all(&[flags])?;
    w.write_all(&model.temperature_logit.to_le_bytes())?;

    let write_mat = |w: &mut BufWriter<File>, m: &Array2<f64>| -> Result<()> {
        for &x in m.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    };
    for mat in [&model.correlation.q, &model.correlation.k, &model.correlation.v] {
        write_mat(&mut w, mat)?;
    }
    for head in model.branches.iter().chain(std::iter::once(&model.aggregator)) {
        write_mat(&mut w, &head.v1)?;
        write_mat(&mut w, &head.v2)?;
        for &x in head.w.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    for p in [&model.projection, &model.text_projection].into_iter().flatten() {
        write_mat(&mut w, p)?;
    }
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.bytes.len() as u64,
                message: format!(
                    "truncated: needed {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn mat(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let raw = self.take(8 * rows * cols)?;
        let vals: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Array2::from_shape_vec((rows, cols), vals).map_err(|e| Error::Format {
            offset: self.pos as u64,
            message: e.to_string(),
        })
    }

    fn vec(&mut self, len: usize) -> Result<Array1<f64>> {
        let raw = self.take(8 * len)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Load a model checkpoint.
pub fn load_model(path: &Path) -> Result<EncoderModel> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4)? != MODEL_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic, expected PSMD".into(),
        });
    }
    let version = cur.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported model version {version}"),
        });
    }
    let dim = cur.u32()? as usize;
    let hidden = cur.u32()? as usize;
    let m = cur.u32()? as usize;
    if dim == 0 || hidden == 0 || m == 0 {
        return Err(Error::Format {
            offset: 8,
            message: format!("invalid shape dim={dim} hidden={hidden} m={m}"),
        });
    }
    let flags = cur.take(1)?[0];
    let temperature_logit = cur.f64()?;

    let q = cur.mat(dim, dim)?;
    let k = cur.mat(dim, dim)?;
    let v = cur.mat(dim, dim)?;
    let mut heads = Vec::with_capacity(m + 1);
    for _ in 0..=m {
        heads.push(GatedAttentionParams {
            v1: cur.mat(hidden, dim)?,
            v2: cur.mat(hidden, dim)?,
            w: cur.vec(hidden)?,
        });
    }
    let aggregator = heads.pop().unwrap();
    let projection = if flags & FLAG_PROJECTION != 0 {
        Some(cur.mat(dim, dim)?)
    } else {
        None
    };
    let text_projection = if flags & FLAG_TEXT_PROJECTION != 0 {
        Some(cur.mat(dim, dim)?)
    } else {
        None
    };
    if cur.pos != bytes.len() {
        return Err(Error::Format {
            offset: cur.pos as u64,
            message: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }
    let model = EncoderModel {
        correlation: CorrelationParams {
            q,
            k,
            v,
            residual: flags & FLAG_RESIDUAL != 0,
        },
        branches: heads,
        aggregator,
        projection,
        text_projection,
        temperature_logit,
    };
    model.validate()?;
    Ok(model)
}
