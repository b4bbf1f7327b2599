use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsa::{memory_ledger, MemoryLedger};
use crate::neighbor::{fit_loglog_slope, measure_latency, Algorithm, LatencyRecord, Phase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub algorithm: Algorithm,
    pub phase: Phase,
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyTable {
    pub records: Vec<LatencyRecord>,
    pub slopes: Vec<SlopeFit>,
}

impl LatencyTable {
    pub fn from_records(records: Vec<LatencyRecord>) -> Self {
        let mut keys: Vec<(Algorithm, Phase)> = records.iter().map(|r| (r.algorithm, r.phase)).collect();
        keys.sort();
        keys.dedup();
        let slopes = keys
            .into_iter()
            .map(|(algorithm, phase)| {
                let pts: Vec<(f64, f64)> = records
                    .iter()
                    .filter(|r| r.algorithm == algorithm && r.phase == phase)
                    .map(|r| (r.n as f64, r.median_seconds))
                    .collect();
                SlopeFit { algorithm, phase, slope: fit_loglog_slope(&pts) }
            })
            .collect();
        Self { records, slopes }
    }

    pub fn slope(&self, algorithm: Algorithm, phase: Phase) -> Option<f64> {
        self.slopes.iter().find(|s| s.algorithm == algorithm && s.phase == phase)?.slope
    }

    pub fn median(&self, algorithm: Algorithm, phase: Phase, n: usize) -> Option<f64> {
        self.records.iter().find(|r| r.algorithm == algorithm && r.phase == phase && r.n == n).map(|r| r.median_seconds)
    }
}

/// Times every (algorithm, phase, size) cell, smallest sizes first.
pub fn run_knn_bench(
    sizes: &[usize],
    m: usize,
    k: usize,
    algorithms: &[Algorithm],
    reps: usize,
    seed: u64,
) -> Result<LatencyTable> {
    if m == 0 || k == 0 {
        return Err(Error::Domain("query count and K must be positive".into()));
    }
    if let Some(&n) = sizes.iter().find(|&&n| n < k) {
        return Err(Error::KTooLarge { k, n });
    }
    let mut records = Vec::new();
    for &algorithm in algorithms {
        for phase in [Phase::Preparation, Phase::Inference] {
            for &n in sizes {
                records.push(measure_latency(algorithm, phase, n, m, k, reps, seed));
            }
        }
    }
    Ok(LatencyTable::from_records(records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryCell {
    pub window: usize,
    pub window_volume: usize,
    pub decomposed: MemoryLedger,
    pub full: MemoryLedger,
    /// Non-decomposed over decomposed scalar count.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub n_voxels: usize,
    pub dim: usize,
    pub occupancy: f64,
    pub cells: Vec<MemoryCell>,
}

/// Encoding storage with and without the decomposition for each window size.
/// Each voxel is given `max(1, round(occupancy * K))` neighbors.
pub fn run_memory_bench(n_voxels: usize, windows: &[usize], dim: usize, occupancy: f64) -> Result<MemoryReport> {
    if !(occupancy > 0.0 && occupancy <= 1.0) {
        return Err(Error::Domain(format!("occupancy must lie in (0, 1], got {occupancy}")));
    }
    let mut cells = Vec::with_capacity(windows.len());
    for &k in windows {
        if k == 0 || k % 2 == 0 {
            return Err(Error::Domain(format!("window size must be odd, got {k}")));
        }
        let volume = k * k * k;
        let per_voxel = ((occupancy * volume as f64).round() as usize).clamp(1, volume);
        let counts = vec![per_voxel; n_voxels];
        let decomposed = memory_ledger(n_voxels, n_voxels, &counts, volume, dim, true);
        let full = memory_ledger(n_voxels, n_voxels, &counts, volume, dim, false);
        let ratio = full.total() as f64 / decomposed.total() as f64;
        cells.push(MemoryCell { window: k, window_volume: volume, decomposed, full, ratio });
    }
    Ok(MemoryReport { n_voxels, dim, occupancy, cells })
}
