use serde::{Deserialize, Serialize};

/// Materialized positional-encoding scalars, by bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryLedger {
    pub per_point: u64,
    pub per_offset: u64,
    pub per_pair: u64,
}

impl MemoryLedger {
    pub fn total(&self) -> u64 {
        self.per_point + self.per_offset + self.per_pair
    }
}

/// Counts encoding storage for one layer.
///
/// Decomposed: one absolute encoding per voxel plus one token per window
/// offset. Otherwise: one encoding per (voxel, neighbor) pair.
/// `neighbor_counts` holds `|N(i)|` per voxel; `window_volume` is `K = k^3`.
pub fn memory_ledger(
    n_points: usize,
    n_voxels: usize,
    neighbor_counts: &[usize],
    window_volume: usize,
    dim: usize,
    decomposed: bool,
) -> MemoryLedger {
    debug_assert!(n_voxels <= n_points.max(n_voxels));
    debug_assert_eq!(neighbor_counts.len(), n_voxels);
    debug_assert!(neighbor_counts.iter().all(|&c| c <= window_volume));
    let d = dim as u64;
    if decomposed {
        MemoryLedger { per_point: n_voxels as u64 * d, per_offset: window_volume as u64 * d, per_pair: 0 }
    } else {
        let pairs: u64 = neighbor_counts.iter().map(|&c| c as u64).sum();
        MemoryLedger { per_point: 0, per_offset: 0, per_pair: pairs * d }
    }
}
