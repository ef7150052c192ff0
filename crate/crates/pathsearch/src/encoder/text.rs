//! Deterministic text embedding.
//!
//! The default embedder is a hashed bag of words: each whitespace token is
//! hashed to a bucket in [0, C) and contributes +1 or -1 chosen by an
//! independent second hash. Disjoint vocabularies therefore land on nearly
//! orthogonal raw vectors. The hash is a fixed FNV-1a, not the standard
//! library hasher, so embeddings are stable across platforms and releases.

/// Maps report text to a raw (unnormalized) C-dimensional vector.
/// Implementations must be deterministic.
pub trait TextEmbedder {
    fn dim(&self) -> usize;
    fn embed(&self, report: &str) -> Vec<f64>;
}

const FNV_OFFSET_BUCKET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_OFFSET_SIGN: u64 = 0x9e37_79b9_7f4a_7c15;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a with an avalanche finalizer. Bare FNV-1a mixes a trailing byte
/// change only into the low-order lanes, so token families like "grade1",
/// "grade2", ... would land on an arithmetic progression of buckets; the
/// finalizer diffuses every input bit across the word.
fn fnv1a64(bytes: &[u8], offset: u64) -> u64 {
    let mut h = offset;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Signed hashed bag-of-words embedder.
#[derive(Debug, Clone)]
pub struct HashTextEmbedder {
    dim: usize,
}

impl HashTextEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1);
        HashTextEmbedder { dim }
    }
}

impl TextEmbedder for HashTextEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, report: &str) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for token in report.split_whitespace() {
            let bytes = token.as_bytes();
            let bucket = (fnv1a64(bytes, FNV_OFFSET_BUCKET) % self.dim as u64) as usize;
            let sign = if fnv1a64(bytes, FNV_OFFSET_SIGN) & 1 == 0 {
                1.0
            } else {
                -1.0
            };
            out[bucket] += sign;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::embed_text;
    use crate::Error;

    #[test]
    fn embedding_is_deterministic() {
        let e = HashTextEmbedder::new(64);
        let a = e.embed("poorly differentiated carcinoma");
        let b = e.embed("poorly differentiated carcinoma");
        assert_eq!(a, b);
    }

    #[test]
    fn normalized_embedding_is_unit() {
        let e = HashTextEmbedder::new(64);
        let v = embed_text("metastatic deposit in lymph node", &e).unwrap();
        let norm: f64 = v.values().dot(&v.values()).sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_or_whitespace_report_is_degenerate() {
        let e = HashTextEmbedder::new(16);
        assert!(matches!(embed_text("", &e), Err(Error::Degenerate(_))));
        assert!(matches!(embed_text("   \t\n", &e), Err(Error::Degenerate(_))));
    }

    #[test]
    fn repeated_tokens_accumulate() {
        let e = HashTextEmbedder::new(32);
        let one = e.embed("tumor");
        let three = e.embed("tumor tumor tumor");
        for (a, b) in one.iter().zip(three.iter()) {
            assert_eq!(*b, 3.0 * *a);
        }
    }

    /// Disjoint vocabularies should be close to orthogonal at C = 768.
    #[test]
    fn disjoint_vocabularies_have_low_cosine() {
        let e = HashTextEmbedder::new(768);
        for pair in 0..100 {
            let a_text: String = (0..8).map(|i| format!("alpha{pair}x{i} ")).collect();
            let b_text: String = (0..8).map(|i| format!("beta{pair}y{i} ")).collect();
            let a = embed_text(&a_text, &e).unwrap();
            let b = embed_text(&b_text, &e).unwrap();
            let cos = a.values().dot(&b.values());
            assert!(cos.abs() < 0.5, "pair {pair}: cosine {cos}");
        }
    }
}
