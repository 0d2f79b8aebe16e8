//! Observations and diagonal-Gaussian action distributions.

use std::ops::Deref;

use crate::error::{Error, Result};
use crate::scalar::{all_finite, Scalar};

/// A finite observation vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T>(Vec<T>);

impl<T: Scalar> Observation<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if !all_finite(&values) {
            return Err(Error::NonFinite("observation".into()));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    /// L∞ distance to another observation of the same length.
    pub fn linf_distance(&self, other: &[T]) -> T {
        self.0
            .iter()
            .zip(other)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }
}

impl<T> Deref for Observation<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

/// Diagonal Gaussian over actions, `N(mean, diag(std²))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Scalar> DiagGaussian<T> {
    pub fn new(mean: Vec<T>, std: Vec<T>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::DimMismatch {
                context: "gaussian std",
                expected: mean.len(),
                got: std.len(),
            });
        }
        if let Some((index, s)) = std
            .iter()
            .enumerate()
            .find(|(_, s)| !(s.is_finite() && **s > T::zero()))
        {
            return Err(Error::InvalidStd {
                index,
                value: s.as_f64(),
            });
        }
        if !all_finite(&mean) {
            return Err(Error::NonFinite("gaussian mean".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Reparameterized sample `mean + std ⊙ noise`.
    pub fn sample(&self, noise: &[T]) -> Result<Vec<T>> {
        if noise.len() != self.dim() {
            return Err(Error::DimMismatch {
                context: "sample noise",
                expected: self.dim(),
                got: noise.len(),
            });
        }
        Ok(self
            .mean
            .iter()
            .zip(&self.std)
            .zip(noise)
            .map(|((m, s), z)| *m + *s * *z)
            .collect())
    }

    /// Log-density of `action`.
    pub fn log_prob(&self, action: &[T]) -> Result<T> {
        if action.len() != self.dim() {
            return Err(Error::DimMismatch {
                context: "log_prob action",
                expected: self.dim(),
                got: action.len(),
            });
        }
        Ok(self.log_prob_unchecked(action))
    }

    pub(crate) fn log_prob_unchecked(&self, action: &[T]) -> T {
        let half = T::lit(0.5);
        let half_ln_2pi = half * (T::TAU()).ln();
        self.mean
            .iter()
            .zip(&self.std)
            .zip(action)
            .map(|((m, s), a)| {
                let u = (*a - *m) / *s;
                -half * u * u - s.ln() - half_ln_2pi
            })
            .sum()
    }

    /// Differential entropy, `Σ ln σ + ½ ln(2πe)` per dimension.
    pub fn entropy(&self) -> T {
        let c = T::lit(0.5) * (T::TAU() * T::E()).ln();
        self.std.iter().map(|s| s.ln() + c).sum()
    }
}

/// Free-function form of [`DiagGaussian::sample`].
pub fn sample<T: Scalar>(dist: &DiagGaussian<T>, noise: &[T]) -> Result<Vec<T>> {
    dist.sample(noise)
}

/// Free-function form of [`DiagGaussian::log_prob`].
pub fn log_prob<T: Scalar>(dist: &DiagGaussian<T>, action: &[T]) -> Result<T> {
    dist.log_prob(action)
}
