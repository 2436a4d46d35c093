//! Immutable labeled embedding store with exact k-nearest-neighbor search.
//!
//! Neighbors are ordered by `(distance, index)`: distances are compared as the
//! computed `f64` values with no epsilon widening, and exact ties go to the
//! lower store index.

use std::cmp::Ordering;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"KNNSTORE";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    L2,
    L1,
    Linf,
}

impl Norm {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match self {
            Norm::L2 => diffs.map(|t| t * t).sum::<f64>().sqrt(),
            Norm::L1 => diffs.sum(),
            Norm::Linf => diffs.fold(0.0, f64::max),
        }
    }

    pub fn length(self, a: &[f64]) -> f64 {
        match self {
            Norm::L2 => a.iter().map(|t| t * t).sum::<f64>().sqrt(),
            Norm::L1 => a.iter().map(|t| t.abs()).sum(),
            Norm::Linf => a.iter().fold(0.0, |m, t| m.max(t.abs())),
        }
    }

    fn code(self) -> u32 {
        match self {
            Norm::L2 => 0,
            Norm::L1 => 1,
            Norm::Linf => 2,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Norm::L2),
            1 => Ok(Norm::L1),
            2 => Ok(Norm::Linf),
            c => Err(Error::MalformedStore(format!("unknown norm code {c}"))),
        }
    }
}

/// `n` labeled points in `R^d`. Labels are 0-based, `< num_labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryStore {
    dim: usize,
    num_labels: usize,
    norm: Norm,
    points: Vec<f64>,
    labels: Vec<u32>,
}

/// The `k` nearest store entries of a query, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
    pub labels: Vec<usize>,
}

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

impl MemoryStore {
    /// Builds a store from row-major `points` (length `n * dim`) and labels.
    pub fn new(
        dim: usize,
        num_labels: usize,
        norm: Norm,
        points: Vec<f64>,
        labels: Vec<u32>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter { name: "dim", reason: "must be >= 1".into() });
        }
        if num_labels == 0 {
            return Err(Error::InvalidParameter {
                name: "num_labels",
                reason: "must be >= 1".into(),
            });
        }
        if labels.is_empty() {
            return Err(Error::InvalidParameter { name: "n", reason: "store is empty".into() });
        }
        if points.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                got: points.len(),
            });
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "points",
                reason: "coordinates must be finite".into(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_labels) {
            return Err(Error::LabelOutOfRange { label: bad as usize, num_labels });
        }
        Ok(Self { dim, num_labels, norm, points, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    /// Exact k nearest neighbors of `x` under the store norm.
    pub fn knn_query(&self, x: &[f64], k: usize) -> Result<NeighborSet> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        if x.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "query",
                reason: "coordinates must be finite".into(),
            });
        }
        let n = self.len();
        if k == 0 || k > n {
            return Err(Error::InvalidK { k, n });
        }

        let mut scored: Vec<(f64, usize)> = self
            .points()
            .enumerate()
            .map(|(i, p)| (self.norm.distance(x, p), i))
            .collect();
        if k < n {
            scored.select_nth_unstable_by(k - 1, by_distance_then_index);
            scored.truncate(k);
        }
        scored.sort_unstable_by(by_distance_then_index);

        Ok(NeighborSet {
            indices: scored.iter().map(|&(_, i)| i).collect(),
            distances: scored.iter().map(|&(d, _)| d).collect(),
            labels: scored.iter().map(|&(_, i)| self.label(i)).collect(),
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.num_labels as u32).to_le_bytes())?;
        w.write_all(&self.norm.code().to_le_bytes())?;
        for p in &self.points {
            w.write_all(&p.to_le_bytes())?;
        }
        // Labels are 1-based on disk.
        for &l in &self.labels {
            w.write_all(&(l + 1).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::MalformedStore("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::MalformedStore(format!("unsupported version {version}")));
        }
        let dim = read_u32(&mut r)? as usize;
        let n = read_u64(&mut r)? as usize;
        let num_labels = read_u32(&mut r)? as usize;
        let norm = Norm::from_code(read_u32(&mut r)?)?;
        if dim == 0 || n == 0 {
            return Err(Error::MalformedStore("empty store".into()));
        }
        let len = n
            .checked_mul(dim)
            .ok_or_else(|| Error::MalformedStore("size overflow".into()))?;
        let mut points = Vec::with_capacity(len.min(1 << 24));
        let mut buf = [0u8; 8];
        for _ in 0..len {
            read_exact(&mut r, &mut buf)?;
            points.push(f64::from_le_bytes(buf));
        }
        let mut labels = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            let l = read_u32(&mut r)?;
            if l == 0 {
                return Err(Error::MalformedStore("labels are 1-based; found 0".into()));
            }
            labels.push(l - 1);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::MalformedStore("trailing bytes".into()));
        }
        Self::new(dim, num_labels, norm, points, labels)
            .map_err(|e| Error::MalformedStore(e.to_string()))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::MalformedStore("unexpected end of file".into()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// `R_k(x)`: distance to the k-th (farthest retained) neighbor.
pub fn knn_radius(neighbors: &NeighborSet) -> Result<f64> {
    neighbors.distances.last().copied().ok_or(Error::EmptyNeighbors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> MemoryStore {
        let labels = (0..xs.len() as u32).map(|i| i % 2).collect();
        MemoryStore::new(1, 2, Norm::L2, xs.to_vec(), labels).unwrap()
    }

    #[test]
    fn nearest_first() {
        let store = line(&[0.0, 1.0, 2.0]);
        let nb = store.knn_query(&[0.9], 2).unwrap();
        assert_eq!(nb.indices, vec![1, 0]);
    }

    #[test]
    fn equidistant_ties_go_to_lower_index() {
        let store = line(&[0.0, 1.0]);
        assert_eq!(store.knn_query(&[0.5], 2).unwrap().indices, vec![0, 1]);
        let store = line(&[1.0, 0.0]);
        assert_eq!(store.knn_query(&[0.5], 1).unwrap().indices, vec![0]);
    }

    #[test]
    fn k_equals_n_returns_everything_sorted() {
        let store = line(&[3.0, -1.0, 0.5, 2.0]);
        let nb = store.knn_query(&[0.0], 4).unwrap();
        assert_eq!(nb.indices, vec![2, 1, 3, 0]);
        assert!(nb.distances.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn rejects_bad_k_and_dimension() {
        let store = line(&[0.0, 1.0]);
        assert_eq!(store.knn_query(&[0.0], 3), Err(Error::InvalidK { k: 3, n: 2 }));
        assert!(matches!(store.knn_query(&[0.0], 0), Err(Error::InvalidK { .. })));
        assert!(matches!(
            store.knn_query(&[0.0, 0.0], 1),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn radius_is_last_distance() {
        let nb = NeighborSet {
            indices: vec![0, 1, 2],
            distances: vec![0.1, 0.3, 0.7],
            labels: vec![0, 0, 0],
        };
        assert_eq!(knn_radius(&nb).unwrap(), 0.7);
        let single = NeighborSet { indices: vec![4], distances: vec![0.0], labels: vec![1] };
        assert_eq!(knn_radius(&single).unwrap(), 0.0);
        let flat = NeighborSet {
            indices: vec![0, 1],
            distances: vec![0.25, 0.25],
            labels: vec![0, 0],
        };
        assert_eq!(knn_radius(&flat).unwrap(), 0.25);
        let empty = NeighborSet { indices: vec![], distances: vec![], labels: vec![] };
        assert_eq!(knn_radius(&empty), Err(Error::EmptyNeighbors));
    }

    #[test]
    fn norms() {
        let a = [0.0, 0.0];
        let b = [3.0, -4.0];
        assert_eq!(Norm::L2.distance(&a, &b), 5.0);
        assert_eq!(Norm::L1.distance(&a, &b), 7.0);
        assert_eq!(Norm::Linf.distance(&a, &b), 4.0);
    }

    #[test]
    fn store_validation() {
        assert!(MemoryStore::new(1, 2, Norm::L2, vec![], vec![]).is_err());
        assert!(MemoryStore::new(2, 2, Norm::L2, vec![0.0], vec![0]).is_err());
        assert!(matches!(
            MemoryStore::new(1, 2, Norm::L2, vec![0.0], vec![2]),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn binary_round_trip_and_corruption() {
        let store = MemoryStore::new(
            2,
            3,
            Norm::Linf,
            vec![0.0, 1.0, -2.5, 3.25, 1e-300, 7.0],
            vec![0, 2, 1],
        )
        .unwrap();
        let mut bytes = Vec::new();
        store.write_to(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 8 + 4 * 3 + 8 + 4 + 6 * 8 + 3 * 4);
        assert_eq!(MemoryStore::read_from(bytes.as_slice()).unwrap(), store);

        let mut truncated = bytes.clone();
        truncated.pop();
        assert!(MemoryStore::read_from(truncated.as_slice()).is_err());
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(MemoryStore::read_from(trailing.as_slice()).is_err());
        let mut bad_magic = bytes;
        bad_magic[0] = b'X';
        assert!(MemoryStore::read_from(bad_magic.as_slice()).is_err());
    }
}
