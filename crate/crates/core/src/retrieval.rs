//! Retriever distribution and retrieval-trust weight from one neighbor set.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::memory::{knn_radius, MemoryStore, NeighborSet};
use crate::simplex::ProbVec;

/// Default trust-weight bandwidth; `1.0` gives `mean_j exp(-d_j^2)`.
pub const DEFAULT_BANDWIDTH: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalView {
    pub rhat: ProbVec,
    pub w_fact: f64,
    pub radius: f64,
    pub k: usize,
}

impl RetrievalView {
    /// Builds both statistics from the same neighbors.
    pub fn from_neighbors(
        neighbors: &NeighborSet,
        num_labels: usize,
        bandwidth: f64,
    ) -> Result<Self> {
        Ok(Self {
            rhat: retriever_distribution(neighbors, num_labels)?,
            w_fact: trust_weight(neighbors, bandwidth)?,
            radius: knn_radius(neighbors)?,
            k: neighbors.len(),
        })
    }

    pub fn query(store: &MemoryStore, x: &[f64], k: usize, bandwidth: f64) -> Result<Self> {
        let neighbors = store.knn_query(x, k)?;
        Self::from_neighbors(&neighbors, store.num_labels(), bandwidth)
    }
}

/// Label frequencies among the neighbors.
pub fn retriever_distribution(neighbors: &NeighborSet, num_labels: usize) -> Result<ProbVec> {
    if neighbors.is_empty() {
        return Err(Error::EmptyNeighbors);
    }
    let mut counts = vec![0usize; num_labels];
    for &label in &neighbors.labels {
        *counts.get_mut(label).ok_or(Error::LabelOutOfRange { label, num_labels })? += 1;
    }
    ProbVec::from_counts(&counts)
}

/// `(1/k) sum_j exp(-(d_j / bandwidth)^2)`.
///
/// The weight is mathematically positive; when every term underflows the
/// smallest positive normal `f64` is returned instead of zero.
pub fn trust_weight(neighbors: &NeighborSet, bandwidth: f64) -> Result<f64> {
    if neighbors.is_empty() {
        return Err(Error::EmptyNeighbors);
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "bandwidth",
            reason: format!("{bandwidth} is not a positive finite real"),
        });
    }
    let k = neighbors.len() as f64;
    let w = neighbors
        .distances
        .iter()
        .map(|d| {
            let t = d / bandwidth;
            (-t * t).exp()
        })
        .sum::<f64>()
        / k;
    Ok(w.clamp(f64::MIN_POSITIVE, 1.0))
}
