//! Small dense-vector helpers and the [`Embedding`] newtype.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative distance from 1 an ingested embedding norm may have before it is
/// rejected rather than re-normalized.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;

/// Inner product over the common prefix of `a` and `b`.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ar.iter().zip(br).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// A real feature vector expected to have unit L2 norm.
///
/// Construction through [`Embedding::normalized`] guarantees the norm.
/// [`Embedding::from_vec`] keeps the raw values so that consumers which
/// enforce the norm contract (queues, tables) can validate them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn from_vec(values: Vec<f64>) -> Self {
        Embedding(values)
    }

    /// Scales `values` to unit norm. Fails on zero or non-finite input.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self> {
        if !all_finite(&values) {
            return Err(Error::NonFinite("embedding"));
        }
        let n = norm(&values);
        if n <= f64::MIN_POSITIVE {
            return Err(Error::invalid(
                "embedding",
                "zero vector cannot be normalized",
            ));
        }
        values.iter_mut().for_each(|v| *v /= n);
        Ok(Embedding(values))
    }

    /// Checks the norm against [`UNIT_NORM_TOLERANCE`] and snaps it to exactly 1.
    pub fn validated(mut self) -> Result<Self> {
        if !all_finite(&self.0) {
            return Err(Error::NonFinite("embedding"));
        }
        let n = norm(&self.0);
        if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::NotUnitNorm { norm: n });
        }
        self.0.iter_mut().for_each(|v| *v /= n);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn normalized_has_unit_norm() {
        let e = Embedding::normalized(vec![3.0, 4.0]).unwrap();
        assert_eq!(e.as_slice(), &[0.6, 0.8]);
        assert!(Embedding::normalized(vec![0.0, 0.0]).is_err());
        assert!(Embedding::normalized(vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn validated_renormalizes_within_tolerance_only() {
        let near = Embedding::from_vec(vec![1.0 + 5e-5, 0.0])
            .validated()
            .unwrap();
        assert_eq!(near.as_slice(), &[1.0, 0.0]);
        let far = Embedding::from_vec(vec![1.01, 0.0]).validated();
        assert!(matches!(far, Err(Error::NotUnitNorm { .. })));
    }
}
