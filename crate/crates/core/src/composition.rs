//! Compositional-data arithmetic on the simplex.
//!
//! A [`Composition`] is a vector of `d >= 2` non-negative parts summing to one.
//! The centered log-ratio map [`clr`] sends strictly positive compositions to
//! the zero-sum hyperplane of `R^d`, where perturbation and powering become
//! ordinary vector addition and scalar multiplication.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance used for the unit-sum and zero-sum invariants.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Default replacement value for zero parts.
pub const DEFAULT_ZERO_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompositionError {
    #[error("entry {index} is negative ({value})")]
    NegativeEntry { index: usize, value: f64 },
    #[error("degenerate input: need at least two parts and a positive total")]
    DegenerateInput,
    #[error("replacing {zeros} zero part(s) with eps = {eps} leaves no mass for the rest")]
    EpsTooLarge { zeros: usize, eps: f64 },
    #[error("part {index} is not strictly positive ({value})")]
    NonPositivePart { index: usize, value: f64 },
    #[error("value at {index} is not finite")]
    NonFinite { index: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("parts sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
}

pub type Result<T, E = CompositionError> = std::result::Result<T, E>;

/// A point of the standard simplex: `d >= 2` non-negative parts summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Composition(Vec<f64>);

impl Composition {
    /// Wraps parts that already satisfy the simplex invariants.
    ///
    /// Use [`closure`] to normalize arbitrary non-negative input instead.
    pub fn new(parts: Vec<f64>) -> Result<Self> {
        if parts.len() < 2 {
            return Err(CompositionError::DegenerateInput);
        }
        check_finite(&parts)?;
        if let Some((index, &value)) = parts.iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(CompositionError::NegativeEntry { index, value });
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(CompositionError::NotNormalized { sum });
        }
        Ok(Self(parts))
    }

    /// The uniform composition with `d` parts, the identity of perturbation.
    pub fn uniform(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(CompositionError::DegenerateInput);
        }
        Ok(Self(vec![1.0 / d as f64; d]))
    }

    pub fn parts(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_parts(self) -> Vec<f64> {
        self.0
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.0.iter().all(|&p| p > 0.0)
    }

    fn require_positive(&self) -> Result<()> {
        match self.0.iter().enumerate().find(|(_, p)| **p <= 0.0) {
            Some((index, &value)) => Err(CompositionError::NonPositivePart { index, value }),
            None => Ok(()),
        }
    }
}

impl<'de> Deserialize<'de> for Composition {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let parts = Vec::<f64>::deserialize(deserializer)?;
        Composition::new(parts).map_err(serde::de::Error::custom)
    }
}

/// Centered log-ratio coordinates; sums to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClrVector(Vec<f64>);

impl ClrVector {
    /// Wraps raw coordinates. Any finite vector is accepted; [`clr_inv`]
    /// implicitly projects onto the zero-sum hyperplane.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        check_finite(&coords)?;
        Ok(Self(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.0
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(CompositionError::NonFinite { index }),
        None => Ok(()),
    }
}

fn check_dims(a: &Composition, b: &Composition) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(CompositionError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

/// Rescales a non-negative vector onto the simplex.
pub fn closure(values: &[f64]) -> Result<Composition> {
    if values.len() < 2 {
        return Err(CompositionError::DegenerateInput);
    }
    check_finite(values)?;
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(CompositionError::NegativeEntry { index, value });
    }
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Err(CompositionError::DegenerateInput);
    }
    if !total.is_finite() {
        // Sum overflowed; rescale by the largest entry first.
        let max = values.iter().cloned().fold(0.0, f64::max);
        let scaled: Vec<f64> = values.iter().map(|v| v / max).collect();
        return closure(&scaled);
    }
    Ok(Composition(values.iter().map(|v| v / total).collect()))
}

/// Multiplicative zero replacement.
///
/// Every zero part becomes `eps` and the nonzero parts are scaled by
/// `1 - z * eps`, `z` being the number of zeros. Ratios among nonzero parts
/// are preserved. Input without zeros is returned unchanged.
pub fn replace_zeros(c: &Composition, eps: f64) -> Result<Composition> {
    let zeros = c.0.iter().filter(|&&p| p == 0.0).count();
    if zeros == 0 {
        return Ok(c.clone());
    }
    if !(eps.is_finite() && eps > 0.0) || zeros as f64 * eps >= 1.0 {
        return Err(CompositionError::EpsTooLarge { zeros, eps });
    }
    let scale = 1.0 - zeros as f64 * eps;
    Ok(Composition(
        c.0.iter()
            .map(|&p| if p == 0.0 { eps } else { p * scale })
            .collect(),
    ))
}

/// Centered log-ratio transform: `ln(p_j / g(p))` with `g` the geometric mean.
pub fn clr(c: &Composition) -> Result<ClrVector> {
    c.require_positive()?;
    let logs: Vec<f64> = c.0.iter().map(|p| p.ln()).collect();
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    Ok(ClrVector(logs.into_iter().map(|l| l - mean).collect()))
}

/// Inverse of [`clr`]: `closure(exp(z))`.
pub fn clr_inv(z: &ClrVector) -> Result<Composition> {
    check_finite(&z.0)?;
    if z.0.len() < 2 {
        return Err(CompositionError::DegenerateInput);
    }
    // Shifting by the max keeps exp() in range; closure removes the factor.
    let max = z.0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.0.iter().map(|v| (v - max).exp()).collect();
    closure(&exps)
}

/// Aitchison addition: `closure(a_1 b_1, ..., a_d b_d)`.
pub fn perturb(a: &Composition, b: &Composition) -> Result<Composition> {
    check_dims(a, b)?;
    a.require_positive()?;
    b.require_positive()?;
    let prod: Vec<f64> = a.0.iter().zip(&b.0).map(|(x, y)| x * y).collect();
    closure(&prod)
}

/// Aitchison scalar multiplication: `closure(c_1^t, ..., c_d^t)`.
pub fn power(c: &Composition, t: f64) -> Result<Composition> {
    if !t.is_finite() {
        return Err(CompositionError::NonFinite { index: 0 });
    }
    // Equivalent to clr_inv(t * clr(c)), which stays finite for large |t|.
    let z = clr(c)?;
    clr_inv(&ClrVector(z.0.iter().map(|v| v * t).collect()))
}

/// Euclidean distance between CLR images.
pub fn aitchison_distance(a: &Composition, b: &Composition) -> Result<f64> {
    check_dims(a, b)?;
    let za = clr(a)?;
    let zb = clr(b)?;
    Ok(za
        .0
        .iter()
        .zip(&zb.0)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}
