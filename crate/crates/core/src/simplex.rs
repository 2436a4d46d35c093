//! Categorical distributions over a finite label set.
//!
//! Labels are 0-based inside the library (`0..C`); file formats and the CLI
//! expose them 1-based.

use std::fmt;
use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on the total mass of a [`ProbVec`].
pub const MASS_TOLERANCE: f64 = 1e-12;

/// A probability vector over `C >= 1` labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbVec {
    probs: Vec<f64>,
}

impl ProbVec {
    /// Validates `probs` and renormalizes it exactly by its sum.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum = check_entries(&probs)?;
        if (sum - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidProbVec(format!("entries sum to {sum}, not 1")));
        }
        let mut probs = probs;
        if sum != 1.0 {
            probs.iter_mut().for_each(|p| *p /= sum);
        }
        Ok(Self { probs })
    }

    /// Normalizes nonnegative weights with positive total mass.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidProbVec("no labels".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidProbVec("weights must be finite and nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidProbVec("weights have zero total mass".into()));
        }
        Ok(Self {
            probs: weights.into_iter().map(|w| w / sum).collect(),
        })
    }

    /// Empirical frequencies `counts[y] / total`, left unnormalized so that
    /// every entry is exactly the rounded rational.
    pub(crate) fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if counts.is_empty() || total == 0 {
            return Err(Error::InvalidProbVec("empty counts".into()));
        }
        let total = total as f64;
        Ok(Self {
            probs: counts.iter().map(|&c| c as f64 / total).collect(),
        })
    }

    pub fn uniform(num_labels: usize) -> Result<Self> {
        if num_labels == 0 {
            return Err(Error::InvalidProbVec("no labels".into()));
        }
        Ok(Self {
            probs: vec![1.0 / num_labels as f64; num_labels],
        })
    }

    pub fn point_mass(num_labels: usize, label: usize) -> Result<Self> {
        if label >= num_labels {
            return Err(Error::LabelOutOfRange { label, num_labels });
        }
        let mut probs = vec![0.0; num_labels];
        probs[label] = 1.0;
        Ok(Self { probs })
    }

    pub fn num_labels(&self) -> usize {
        self.probs.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, label: usize) -> Result<f64> {
        self.probs.get(label).copied().ok_or(Error::LabelOutOfRange {
            label,
            num_labels: self.probs.len(),
        })
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    pub(crate) fn check_same_labels(&self, other: &ProbVec) -> Result<()> {
        if self.num_labels() != other.num_labels() {
            return Err(Error::DimensionMismatch {
                expected: self.num_labels(),
                got: other.num_labels(),
            });
        }
        Ok(())
    }
}

fn check_entries(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::InvalidProbVec("no labels".into()));
    }
    for (y, &p) in probs.iter().enumerate() {
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidProbVec(format!("entry {y} = {p} is outside [0, 1]")));
        }
    }
    Ok(probs.iter().sum())
}

impl Index<usize> for ProbVec {
    type Output = f64;

    fn index(&self, label: usize) -> &f64 {
        &self.probs[label]
    }
}

impl<'de> Deserialize<'de> for ProbVec {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let probs = Vec::<f64>::deserialize(de)?;
        ProbVec::new(probs).map_err(serde::de::Error::custom)
    }
}

/// A nonnegative extended real, measured in nats.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ExtReal(f64);

// JSON has no infinity; `+inf` is written as the string "inf".
impl Serialize for ExtReal {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            ser.serialize_f64(self.0)
        } else {
            ser.serialize_str("inf")
        }
    }
}

impl ExtReal {
    pub const ZERO: ExtReal = ExtReal(0.0);
    pub const INFINITY: ExtReal = ExtReal(f64::INFINITY);

    pub fn finite(value: f64) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::InvalidParameter {
                name: "value",
                reason: format!("{value} is not a finite nonnegative real"),
            });
        }
        Ok(ExtReal(value))
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Adds a finite nonnegative amount; `+inf` absorbs it.
    pub fn plus(self, amount: f64) -> ExtReal {
        ExtReal(self.0 + amount)
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_finite() {
            write!(f, "{}", self.0)
        } else {
            f.write_str("inf")
        }
    }
}

/// `sum_y p_y * (-ln q_y)` with `0 * ln 0 = 0`; `+inf` exactly when some label
/// supported by `p` has zero mass under `q`.
pub fn cross_entropy(p: &ProbVec, q: &ProbVec) -> Result<ExtReal> {
    p.check_same_labels(q)?;
    let mut total = 0.0;
    for (&py, &qy) in p.probs.iter().zip(&q.probs) {
        if py == 0.0 {
            continue;
        }
        if qy == 0.0 {
            return Ok(ExtReal::INFINITY);
        }
        total -= py * qy.ln();
    }
    // Rounding can leave a tiny negative sum for point masses.
    Ok(ExtReal(total.max(0.0)))
}

/// Smallest label attaining the maximum probability.
pub fn modal_label(p: &ProbVec) -> usize {
    let mut best = 0;
    for (y, &py) in p.probs.iter().enumerate().skip(1) {
        if py > p.probs[best] {
            best = y;
        }
    }
    best
}

/// L1 distance `sum_y |p_y - q_y|`, in `[0, 2]` (twice the total variation).
pub fn l1_distance(p: &ProbVec, q: &ProbVec) -> Result<f64> {
    p.check_same_labels(q)?;
    Ok(p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).abs()).sum())
}

/// Alias kept for callers that think in total-variation terms; returns the L1 norm.
pub fn tv_distance(p: &ProbVec, q: &ProbVec) -> Result<f64> {
    l1_distance(p, q)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ProbVec {
        ProbVec::new(v.to_vec()).unwrap()
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&pv(&[1.0, 0.0]), &pv(&[1.0, 0.0])).unwrap(), ExtReal::ZERO);
        let h = cross_entropy(&pv(&[0.5, 0.5]), &pv(&[0.5, 0.5])).unwrap();
        assert!((h.value() - std::f64::consts::LN_2).abs() < 1e-15);
        let inf = cross_entropy(&pv(&[0.5, 0.5]), &pv(&[1.0, 0.0])).unwrap();
        assert!(!inf.is_finite());
    }

    #[test]
    fn cross_entropy_ignores_unsupported_zero_mass() {
        let h = cross_entropy(&pv(&[1.0, 0.0]), &pv(&[0.5, 0.5])).unwrap();
        assert!((h.value() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let err = cross_entropy(&pv(&[1.0]), &pv(&[0.5, 0.5])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
        assert!(l1_distance(&pv(&[1.0]), &pv(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn modal_label_examples() {
        assert_eq!(modal_label(&pv(&[0.2, 0.5, 0.3])), 1);
        assert_eq!(modal_label(&pv(&[0.5, 0.5])), 0);
        assert_eq!(modal_label(&ProbVec::uniform(3).unwrap()), 0);
    }

    #[test]
    fn l1_examples() {
        assert_eq!(l1_distance(&pv(&[0.3, 0.7]), &pv(&[0.3, 0.7])).unwrap(), 0.0);
        assert_eq!(l1_distance(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0])).unwrap(), 2.0);
        let d = tv_distance(&pv(&[0.6, 0.4]), &pv(&[0.4, 0.6])).unwrap();
        assert!((d - 0.4).abs() < 1e-15);
    }

    #[test]
    fn construction_validates() {
        assert!(ProbVec::new(vec![]).is_err());
        assert!(ProbVec::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVec::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbVec::new(vec![f64::NAN, 1.0]).is_err());
        let p = ProbVec::new(vec![0.5, 0.5 + 5e-13]).unwrap();
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(ProbVec::from_weights(vec![0.0, 0.0]).is_err());
        assert_eq!(ProbVec::from_weights(vec![1.0, 3.0]).unwrap().as_slice(), &[0.25, 0.75]);
    }

    #[test]
    fn ext_real_ordering() {
        assert!(ExtReal::finite(1.0).unwrap() < ExtReal::INFINITY);
        assert!(!ExtReal::INFINITY.plus(1.0).is_finite());
        assert!(ExtReal::finite(-1.0).is_err());
        assert_eq!(ExtReal::INFINITY.to_string(), "inf");
    }
}
