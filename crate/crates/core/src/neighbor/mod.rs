//! Neighbor search: k-d tree, brute force, bounded heap, voxel-window lookup
//! and the latency harness comparing them.
//!
//! All exact searches order candidates by `(squared distance, point index)`,
//! so equal distances resolve to the lower index and every algorithm returns
//! the same list.

mod brute;
mod heap;
mod kdtree;
mod latency;
mod window;

pub use brute::{bruteforce_knn, bruteforce_knn_counted};
pub use heap::{heap_knn, heap_knn_counted};
pub use kdtree::KdTree;
pub use latency::{fit_loglog_slope, measure_latency, synthetic_points, Algorithm, LatencyRecord, Phase};
pub use window::{window_neighbors, NeighborTable, WindowOffsets};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub query: usize,
    pub indices: Vec<usize>,
    /// Euclidean distances, meters.
    pub distances: Vec<f64>,
}

impl NeighborList {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub(crate) fn from_candidates(cands: impl IntoIterator<Item = Candidate>) -> Self {
        let (indices, distances) = cands.into_iter().map(|c| (c.index, c.dist2.sqrt())).unzip();
        Self { query: 0, indices, distances }
    }
}

#[inline]
pub fn squared_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Search candidate ordered by `(dist2, index)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Candidate {
    pub dist2: f64,
    pub index: usize,
}

impl Candidate {
    pub const WORST: Candidate = Candidate { dist2: f64::INFINITY, index: usize::MAX };

    #[inline]
    pub fn less(&self, other: &Candidate) -> bool {
        self.dist2 < other.dist2 || (self.dist2 == other.dist2 && self.index < other.index)
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.dist2.total_cmp(&other.dist2).then(self.index.cmp(&other.index))
    }
}

pub(crate) fn check_k(k: usize, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if k > n {
        return Err(Error::KTooLarge { k, n });
    }
    Ok(())
}
