//! Dense row-matrix wrappers with shape and finiteness enforced up front.

use ndarray::Array2;

use crate::{Error, Result};

fn check_finite(rows: &Array2<f64>, context: &'static str) -> Result<()> {
    for ((r, c), &x) in rows.indexed_iter() {
        if !x.is_finite() {
            return Err(Error::NonFinite {
                context: format!("{context} row {r}, column {c}"),
            });
        }
    }
    Ok(())
}

/// N patch embeddings of dimension C, one patch per row. N >= 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbeddingMatrix {
    rows: Array2<f64>,
}

impl PatchEmbeddingMatrix {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(Error::Empty("patch embedding matrix"));
        }
        check_finite(&rows, "patch matrix")?;
        Ok(PatchEmbeddingMatrix { rows })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        to_array(rows, "patch embedding matrix").and_then(Self::new)
    }

    pub fn n_patches(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }
}

/// M mosaic vectors of dimension C, one per row. M >= 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MosaicSet {
    rows: Array2<f64>,
}

impl MosaicSet {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(Error::Empty("mosaic set"));
        }
        check_finite(&rows, "mosaic set")?;
        Ok(MosaicSet { rows })
    }

    pub fn m(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }
}

fn to_array(rows: Vec<Vec<f64>>, what: &'static str) -> Result<Array2<f64>> {
    if rows.is_empty() {
        return Err(Error::Empty(what));
    }
    let dim = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "ragged rows",
                expected: dim,
                got: rows[i].len(),
            });
        }
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((flat.len() / dim.max(1), dim), flat).map_err(|_| Error::Empty(what))
}
