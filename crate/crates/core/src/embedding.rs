use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NORM_TOLERANCE: f64 = 1e-6;

/// A fixed-dimension real vector from an embedding backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    normalized: bool,
}

impl EmbeddingVector {
    /// Wraps raw values without normalizing. Empty vectors are rejected.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Precondition("embedding has zero dimension".into()));
        }
        Ok(Self {
            values,
            normalized: false,
        })
    }

    /// L2-normalizes the values.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let mut v = Self::new(values)?;
        let norm = v.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroVector);
        }
        v.values.iter_mut().for_each(|x| *x /= norm);
        v.normalized = true;
        Ok(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|x| x * factor).collect(),
            normalized: self.normalized && (factor - 1.0).abs() < f64::EPSILON,
        }
    }

    pub fn negated(&self) -> Self {
        Self {
            values: self.values.iter().map(|x| -x).collect(),
            normalized: self.normalized,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_to_unit_length() {
        let v = EmbeddingVector::normalized(vec![3.0, 4.0]).unwrap();
        assert!((v.norm() - 1.0).abs() < NORM_TOLERANCE);
        assert_eq!(v.values(), &[0.6, 0.8]);
        assert_eq!(v.dimension(), 2);
    }

    #[test]
    fn zero_vector_cannot_normalize() {
        assert!(matches!(
            EmbeddingVector::normalized(vec![0.0; 4]),
            Err(Error::ZeroVector)
        ));
        assert!(EmbeddingVector::new(vec![]).is_err());
    }
}
