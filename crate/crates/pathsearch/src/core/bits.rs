//! Bit-packed binary codes and Hamming distance.
//!
//! Bit `j` of a code lives in word `j / 64` at position `j % 64` (LSB first),
//! so serialization to `ceil(bits / 8)` little-endian bytes is a plain byte
//! copy. Padding bits past the logical length are always zero.

use ndarray::ArrayView2;

use super::matrix::MosaicSet;
use crate::{Error, Result};

/// Borrowed view of one fixed-length bit string.
#[derive(Debug, Clone, Copy)]
pub struct CodeView<'a> {
    words: &'a [u64],
    bits: usize,
}

impl<'a> CodeView<'a> {
    /// View over pre-packed words. `words.len()` must equal `ceil(bits/64)`.
    pub fn new(words: &'a [u64], bits: usize) -> Result<Self> {
        let expected = words_per_code(bits);
        if words.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "code words",
                expected,
                got: words.len(),
            });
        }
        Ok(CodeView { words, bits })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn words(&self) -> &'a [u64] {
        self.words
    }

    /// Value of bit `j`.
    pub fn bit(&self, j: usize) -> bool {
        debug_assert!(j < self.bits);
        (self.words[j / 64] >> (j % 64)) & 1 == 1
    }
}

/// Number of differing bits between two codes of equal length.
///
/// Padding bits are masked off, so views over unnormalized words still
/// compare correctly.
pub fn hamming_distance(a: CodeView, b: CodeView) -> Result<u32> {
    if a.bits != b.bits {
        return Err(Error::BitLengthMismatch {
            a: a.bits,
            b: b.bits,
        });
    }
    if a.bits == 0 {
        return Ok(0);
    }
    let full = a.bits / 64;
    let mut dist = 0u32;
    for i in 0..full {
        dist += (a.words[i] ^ b.words[i]).count_ones();
    }
    let rem = a.bits % 64;
    if rem > 0 {
        let mask = (1u64 << rem) - 1;
        dist += ((a.words[full] ^ b.words[full]) & mask).count_ones();
    }
    Ok(dist)
}

fn words_per_code(bits: usize) -> usize {
    bits.div_ceil(64)
}

/// M binary codes of `bits` bits each, packed contiguously.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMosaicCode {
    m: usize,
    bits: usize,
    words_per_code: usize,
    words: Vec<u64>,
}

impl BinaryMosaicCode {
    /// Build from raw words, one `ceil(bits/64)`-word group per code.
    /// Padding bits are cleared.
    pub fn from_words(m: usize, bits: usize, mut words: Vec<u64>) -> Result<Self> {
        let wpc = words_per_code(bits);
        if words.len() != m * wpc {
            return Err(Error::DimensionMismatch {
                context: "packed code words",
                expected: m * wpc,
                got: words.len(),
            });
        }
        let rem = bits % 64;
        if rem > 0 {
            let mask = (1u64 << rem) - 1;
            for c in 0..m {
                words[c * wpc + wpc - 1] &= mask;
            }
        }
        Ok(BinaryMosaicCode {
            m,
            bits,
            words_per_code: wpc,
            words,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn code(&self, i: usize) -> CodeView<'_> {
        let start = i * self.words_per_code;
        CodeView {
            words: &self.words[start..start + self.words_per_code],
            bits: self.bits,
        }
    }

    /// Bytes per serialized code.
    pub fn bytes_per_code(&self) -> usize {
        self.bits.div_ceil(8)
    }

    /// Serialize all codes: `m * ceil(bits/8)` little-endian bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let bpc = self.bytes_per_code();
        let mut out = Vec::with_capacity(self.m * bpc);
        for c in 0..self.m {
            let words = &self.words[c * self.words_per_code..(c + 1) * self.words_per_code];
            let mut written = 0;
            for w in words {
                let le = w.to_le_bytes();
                let take = (bpc - written).min(8);
                out.extend_from_slice(&le[..take]);
                written += take;
                if written == bpc {
                    break;
                }
            }
        }
        out
    }

    /// Inverse of [`to_bytes`](Self::to_bytes).
    pub fn from_bytes(m: usize, bits: usize, bytes: &[u8]) -> Result<Self> {
        let bpc = bits.div_ceil(8);
        if bytes.len() != m * bpc {
            return Err(Error::DimensionMismatch {
                context: "packed code bytes",
                expected: m * bpc,
                got: bytes.len(),
            });
        }
        let wpc = words_per_code(bits);
        let mut words = vec![0u64; m * wpc];
        for c in 0..m {
            let src = &bytes[c * bpc..(c + 1) * bpc];
            for (k, &byte) in src.iter().enumerate() {
                words[c * wpc + k / 8] |= (byte as u64) << (8 * (k % 8));
            }
        }
        Self::from_words(m, bits, words)
    }
}

/// Sign-binarize a mosaic set: entry > 0 maps to 1, everything else
/// (including exact 0.0) to 0. Finiteness is enforced when the
/// [`MosaicSet`] is constructed.
pub fn binarize(mosaics: &MosaicSet) -> BinaryMosaicCode {
    binarize_rows(mosaics.rows().view()).expect("MosaicSet entries are finite by construction")
}

/// Sign-binarize arbitrary rows; rejects non-finite entries.
pub fn binarize_rows(rows: ArrayView2<'_, f64>) -> Result<BinaryMosaicCode> {
    let (m, bits) = (rows.nrows(), rows.ncols());
    let wpc = words_per_code(bits);
    let mut words = vec![0u64; m * wpc];
    for (r, row) in rows.outer_iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("mosaic row {r}, column {j}"),
                });
            }
            if x > 0.0 {
                words[r * wpc + j / 64] |= 1u64 << (j % 64);
            }
        }
    }
    BinaryMosaicCode::from_words(m, bits, words)
}
