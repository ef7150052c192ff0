//! Unit-norm semantic vectors and distances between them.

use ndarray::{Array1, ArrayView1};

use crate::{Error, Result};

const UNIT_NORM_TOL: f64 = 1e-9;

/// L2-normalized embedding. The unit-norm invariant (within 1e-9) is checked
/// at every construction site, so distance code never re-validates.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticVector {
    values: Array1<f64>,
}

impl SemanticVector {
    /// Wrap an already-normalized vector; rejects anything whose norm is not
    /// within 1e-9 of 1.
    pub fn new(values: Array1<f64>) -> Result<Self> {
        Self::new_with_tol(values, UNIT_NORM_TOL)
    }

    /// Construction with a relaxed norm tolerance, for vectors that went
    /// through single-precision storage. The values are kept exactly as
    /// given so byte round-trips stay exact.
    pub(crate) fn new_with_tol(values: Array1<f64>, tol: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("semantic vector"));
        }
        for (i, &x) in values.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("semantic vector entry {i}"),
                });
            }
        }
        let norm = values.dot(&values).sqrt();
        if (norm - 1.0).abs() > tol {
            return Err(Error::Degenerate(format!(
                "semantic vector norm {norm} is not 1"
            )));
        }
        Ok(SemanticVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.values.view()
    }
}

/// Scale a vector to unit L2 norm. Zero or non-finite input is rejected.
pub fn l2_normalize(v: ArrayView1<'_, f64>) -> Result<SemanticVector> {
    if v.is_empty() {
        return Err(Error::Empty("vector to normalize"));
    }
    for (i, &x) in v.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFinite {
                context: format!("vector entry {i}"),
            });
        }
    }
    let norm = v.dot(&v).sqrt();
    if norm == 0.0 {
        return Err(Error::Degenerate("cannot normalize the zero vector".into()));
    }
    let scaled: Array1<f64> = v.map(|&x| x / norm);
    if scaled.iter().any(|x| !x.is_finite()) {
        return Err(Error::Degenerate(format!(
            "normalization overflowed (norm {norm:e})"
        )));
    }
    SemanticVector::new(scaled)
}

/// Euclidean distance between two unit vectors; lies in [0, 2] and decreases
/// monotonically as cosine similarity grows.
pub fn euclidean_distance(u: &SemanticVector, v: &SemanticVector) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            context: "semantic vectors",
            expected: u.dim(),
            got: v.dim(),
        });
    }
    let mut acc = 0.0;
    for (a, b) in u.values.iter().zip(v.values.iter()) {
        let d = a - b;
        acc += d * d;
    }
    Ok(acc.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn three_four_normalizes_to_point_six_point_eight() {
        let v = l2_normalize(array![3.0, 4.0].view()).unwrap();
        assert_abs_diff_eq!(v.values()[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(v.values()[1], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn unit_vector_unchanged_and_all_ones_scales() {
        let v = l2_normalize(array![1.0, 0.0, 0.0].view()).unwrap();
        assert_eq!(v.values()[0], 1.0);
        let v = l2_normalize(array![1.0, 1.0, 1.0, 1.0].view()).unwrap();
        for &x in v.values().iter() {
            assert_abs_diff_eq!(x, 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_vector_is_degenerate() {
        assert!(matches!(
            l2_normalize(array![0.0, 0.0].view()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn non_unit_wrap_is_rejected() {
        assert!(SemanticVector::new(array![0.5, 0.5]).is_err());
        assert!(SemanticVector::new(array![0.6, 0.8]).is_ok());
    }

    #[test]
    fn distance_examples() {
        let e1 = SemanticVector::new(array![1.0, 0.0]).unwrap();
        let e2 = SemanticVector::new(array![0.0, 1.0]).unwrap();
        assert_eq!(euclidean_distance(&e1, &e1).unwrap(), 0.0);
        assert_abs_diff_eq!(
            euclidean_distance(&e1, &e2).unwrap(),
            2.0f64.sqrt(),
            epsilon = 1e-15
        );
        let v = SemanticVector::new(array![0.6, 0.8]).unwrap();
        assert_abs_diff_eq!(
            euclidean_distance(&v, &e1).unwrap(),
            0.8944271909999159,
            epsilon = 1e-12
        );
    }

    #[test]
    fn dimension_mismatch_errors() {
        let a = SemanticVector::new(array![1.0, 0.0]).unwrap();
        let b = SemanticVector::new(array![1.0, 0.0, 0.0]).unwrap();
        assert!(euclidean_distance(&a, &b).is_err());
    }

    fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> SemanticVector {
        loop {
            let v: Array1<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if let Ok(u) = l2_normalize(v.view()) {
                return u;
            }
        }
    }

    /// d = sqrt(2 - 2 cos) on unit vectors: larger cosine, smaller distance.
    #[test]
    fn distance_is_monotone_decreasing_in_cosine() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let q = random_unit(&mut rng, 16);
        let mut pairs: Vec<(f64, f64)> = (0..200)
            .map(|_| {
                let c = random_unit(&mut rng, 16);
                let cos = q.values().dot(&c.values());
                let dist = euclidean_distance(&q, &c).unwrap();
                (cos, dist)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pairs.windows(2) {
            assert!(
                w[1].1 <= w[0].1 + 1e-12,
                "distance must not grow with cosine: {w:?}"
            );
        }
    }
}
