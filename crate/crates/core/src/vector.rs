//! Flat parameter vectors and the handful of BLAS-1 style operations the
//! federated algorithms are written in.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Index;

use crate::error::{ensure, Result};

/// A flat, fixed-length vector of model parameters.
///
/// Global models, personalized models, weight differences and meta-gradients
/// all share this representation; the model spec interprets the layout.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ParamVector(values)
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

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> core::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    fn check_len(&self, other: &ParamVector) -> Result<()> {
        ensure!(
            self.len() == other.len(),
            "parameter length mismatch: {} vs {}",
            self.len(),
            other.len()
        );
        Ok(())
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|x| s * x).collect())
    }

    /// Returns `a * x + self`.
    pub fn axpy(&self, a: f64, x: &ParamVector) -> Result<ParamVector> {
        self.zip_with(x, |y, x| a * x + y)
    }

    /// In-place `self += a * x`.
    pub fn axpy_assign(&mut self, a: f64, x: &ParamVector) -> Result<()> {
        self.check_len(x)?;
        for (y, x) in self.0.iter_mut().zip(&x.0) {
            *y += a * x;
        }
        Ok(())
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_len(other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        libm::sqrt(self.0.iter().map(|x| x * x).sum())
    }

    pub fn zip_with(
        &self,
        other: &ParamVector,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<ParamVector> {
        self.check_len(other)?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    /// Elementwise mean of a non-empty collection, summed in the given order.
    pub fn mean<'a, I>(items: I) -> Result<ParamVector>
    where
        I: IntoIterator<Item = &'a ParamVector>,
    {
        let mut iter = items.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| crate::Error::config("mean of an empty collection"))?;
        let mut acc = first.clone();
        let mut count = 1usize;
        for item in iter {
            acc.check_len(item)?;
            for (a, b) in acc.0.iter_mut().zip(&item.0) {
                *a += b;
            }
            count += 1;
        }
        if count > 1 {
            let inv = count as f64;
            for a in acc.0.iter_mut() {
                *a /= inv;
            }
        }
        Ok(acc)
    }

    /// `(1 - w) * self + w * other`, returning `other` verbatim when `w == 1`
    /// and `self` verbatim when `w == 0`.
    pub fn interpolate(&self, other: &ParamVector, w: f64) -> Result<ParamVector> {
        self.check_len(other)?;
        if w == 1.0 {
            return Ok(other.clone());
        }
        if w == 0.0 {
            return Ok(self.clone());
        }
        self.zip_with(other, |a, b| (1.0 - w) * a + w * b)
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn mean_of_identical_vectors() {
        let x = ParamVector::from_vec(vec![0.1, -2.5, 3.75]);
        let m = ParamVector::mean([&x, &x, &x]).unwrap();
        for (a, b) in m.iter().zip(x.iter()) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn axpy_zero_is_identity() {
        let v = ParamVector::from_vec(vec![1.0, 2.0]);
        let w = ParamVector::from_vec(vec![-3.0, 0.5]);
        assert_eq!(w.axpy(0.0, &v).unwrap(), w);
    }

    #[test]
    fn zero_norm() {
        assert_eq!(ParamVector::zeros(7).norm(), 0.0);
    }

    #[test]
    fn length_mismatch_is_config_error() {
        let a = ParamVector::zeros(2);
        let b = ParamVector::zeros(3);
        assert!(matches!(a.add(&b), Err(crate::Error::Config(_))));
        assert!(matches!(a.dot(&b), Err(crate::Error::Config(_))));
        assert!(ParamVector::mean(core::iter::empty()).is_err());
    }

    #[test]
    fn interpolate_endpoints_are_exact() {
        let a = ParamVector::from_vec(vec![0.1, 0.7]);
        let b = ParamVector::from_vec(vec![0.3, -0.2]);
        assert_eq!(a.interpolate(&b, 1.0).unwrap(), b);
        assert_eq!(a.interpolate(&b, 0.0).unwrap(), a);
    }

    proptest! {
        #[test]
        fn sub_is_antisymmetric(v in proptest::collection::vec(-1e3f64..1e3, 1..16)) {
            let a = ParamVector::from_vec(v.clone());
            let b = ParamVector::from_vec(v.iter().map(|x| x * 0.5 + 1.0).collect());
            let ab = a.sub(&b).unwrap();
            let ba = b.sub(&a).unwrap();
            prop_assert_eq!(ab, ba.scale(-1.0));
        }
    }
}
