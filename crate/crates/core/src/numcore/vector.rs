use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite-valued dense vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite entry {} at index {pos}", values[pos])));
        }
        Ok(Vector(values))
    }

    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Vector::new(values)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

impl AsRef<[f64]> for Vector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// `‖a⊙m − b⊙m‖₂`.
pub fn masked_l2(a: &[f64], b: &[f64], m: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() != m.len() {
        return Err(Error::InvalidInput(format!("dimension mismatch: {} / {} / {}", a.len(), b.len(), m.len())));
    }
    let sq: f64 = a
        .iter()
        .zip(b)
        .zip(m)
        .map(|((x, y), w)| {
            let diff = x * w - y * w;
            diff * diff
        })
        .sum();
    Ok(sq.sqrt())
}

/// Plain Euclidean distance.
pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!("dimension mismatch: {} / {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// `max{0, x + margin}`.
pub fn hinge(x: f64, margin: f64) -> f64 {
    (x + margin).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn masked_l2_examples() {
        assert_eq!(masked_l2(&[0.3, -2.0], &[0.3, -2.0], &[5.0, 0.1]).unwrap(), 0.0);
        let d = masked_l2(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!((d - std::f64::consts::SQRT_2).abs() < 1e-15);
        assert_eq!(masked_l2(&[1.0, 0.0], &[0.0, 1.0], &[2.0, 0.0]).unwrap(), 2.0);
    }

    #[test]
    fn masked_l2_dimension_mismatch() {
        let err = masked_l2(&[1.0], &[1.0, 2.0], &[1.0]).unwrap_err();
        assert_eq!(err.kind(), "invalid-input");
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(hinge(-1.0, 0.3), 0.0);
        assert!((hinge(-0.1, 0.3) - 0.2).abs() < 1e-15);
        assert_eq!(hinge(0.0, 0.0), 0.0);
    }

    #[test]
    fn vector_rejects_non_finite() {
        assert!(Vector::new(vec![1.0, f64::NAN]).is_err());
        assert!(Vector::new(vec![f64::INFINITY]).is_err());
        assert!(serde_json::from_str::<Vector>("[1.0, 2.0]").is_ok());
    }

    fn triple(len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        let v = || proptest::collection::vec(-10.0f64..10.0, len);
        (v(), v(), v())
    }

    proptest! {
        #[test]
        fn symmetric((a, b, m) in triple(6)) {
            prop_assert_eq!(masked_l2(&a, &b, &m).unwrap(), masked_l2(&b, &a, &m).unwrap());
        }

        #[test]
        fn homogeneous((a, b, m) in triple(5), c in -4.0f64..4.0) {
            let base = masked_l2(&a, &b, &m).unwrap();
            let ca: Vec<f64> = a.iter().map(|x| c * x).collect();
            let cb: Vec<f64> = b.iter().map(|x| c * x).collect();
            let cm: Vec<f64> = m.iter().map(|x| c * x).collect();
            let tol = 1e-12 * (1.0 + base * c.abs());
            prop_assert!((masked_l2(&ca, &cb, &m).unwrap() - c.abs() * base).abs() <= tol);
            prop_assert!((masked_l2(&a, &b, &cm).unwrap() - c.abs() * base).abs() <= tol);
        }
    }
}
