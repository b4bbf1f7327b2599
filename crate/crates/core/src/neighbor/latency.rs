//! Wall-clock latency of each neighbor-search algorithm, per phase.
//!
//! The hash method quantizes points at a voxel size giving about
//! [`POINTS_PER_VOXEL`] points per cell, so the number of occupied voxels
//! grows linearly with `N`; a query is one window lookup (`k` = smallest odd
//! window with `k^3 >= K`).

use std::fmt;
use std::hint::black_box;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{bruteforce_knn, heap_knn, KdTree, WindowOffsets};
use crate::hash::{SpatialHashTable, VoxelCoord};
use crate::rng::Stream;
use crate::voxel::quantize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Hash,
    KdTree,
    BruteForce,
    Heap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Preparation,
    Inference,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Hash, Algorithm::KdTree, Algorithm::BruteForce, Algorithm::Heap];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Hash => "hash",
            Algorithm::KdTree => "kdtree",
            Algorithm::BruteForce => "bruteforce",
            Algorithm::Heap => "heap",
        }
    }
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Preparation => "preparation",
            Phase::Inference => "inference",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| format!("unknown algorithm {s:?}"))
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "preparation" => Ok(Phase::Preparation),
            "inference" => Ok(Phase::Inference),
            _ => Err(format!("unknown phase {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub algorithm: Algorithm,
    pub phase: Phase,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub median_seconds: f64,
    pub reps: usize,
    pub seed: u64,
}

/// `n` points uniform in the unit cube, a pure function of `(n, seed)`.
pub fn synthetic_points(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut s = Stream::new(seed, n as u64);
    (0..n).map(|_| [s.uniform(), s.uniform(), s.uniform()]).collect()
}

fn query_points(m: usize, n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut s = Stream::new(seed, (1u64 << 40) + n as u64);
    (0..m).map(|_| [s.uniform(), s.uniform(), s.uniform()]).collect()
}

/// Mean occupancy of the hash benchmark's voxels, in the range of indoor
/// scans voxelized at a few centimeters.
pub const POINTS_PER_VOXEL: f64 = 8.0;

fn hash_voxel_size(n: usize) -> f64 {
    (POINTS_PER_VOXEL / n as f64).cbrt()
}

fn cell_of(p: &[f64; 3], voxel_size: f64) -> VoxelCoord {
    VoxelCoord([
        quantize(p[0], voxel_size).expect("unit-cube point"),
        quantize(p[1], voxel_size).expect("unit-cube point"),
        quantize(p[2], voxel_size).expect("unit-cube point"),
    ])
}

/// Inserts every point's cell into a fresh table (one insert per new cell).
pub fn hash_prepare(points: &[[f64; 3]], voxel_size: f64) -> SpatialHashTable {
    let mut table = SpatialHashTable::new();
    for p in points {
        let c = cell_of(p, voxel_size);
        if table.lookup(c).is_none() {
            let idx = table.len();
            table.insert(c, idx).expect("checked absent");
        }
    }
    table
}

fn hash_query(table: &SpatialHashTable, queries: &[[f64; 3]], voxel_size: f64, win: &WindowOffsets) -> usize {
    let mut found = 0;
    for q in queries {
        let c = cell_of(q, voxel_size);
        for &d in &win.offsets {
            if let Some(j) = c.offset(d).and_then(|c| table.lookup(c)) {
                found += j & 1 | 1;
            }
        }
    }
    found
}

fn window_for(k: usize) -> WindowOffsets {
    let mut w = 1;
    while w * w * w < k {
        w += 2;
    }
    WindowOffsets::new(w).expect("odd window")
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn time<F: FnMut()>(mut f: F) -> f64 {
    let start = Instant::now();
    f();
    start.elapsed().as_secs_f64()
}

/// Minimum time spent in discarded warm-up runs (at least one run always).
const WARMUP_SECONDS: f64 = 0.2;
const MIN_SAMPLED_SECONDS: f64 = 0.1;
const MAX_REPS: usize = 1001;

/// Median wall-clock time over at least `max(reps, 5)` runs after discarded
/// warm-up runs. The record's `reps` is the number of samples taken.
pub fn measure_latency(
    algorithm: Algorithm,
    phase: Phase,
    n: usize,
    m: usize,
    k: usize,
    reps: usize,
    seed: u64,
) -> LatencyRecord {
    let reps = reps.max(5);
    let points = synthetic_points(n, seed);
    let queries = query_points(m, n, seed);
    let voxel_size = hash_voxel_size(n);
    let win = window_for(k);

    let mut run: Box<dyn FnMut()> = match (algorithm, phase) {
        (Algorithm::Hash, Phase::Preparation) => Box::new(|| {
            black_box(hash_prepare(black_box(&points), voxel_size));
        }),
        (Algorithm::Hash, Phase::Inference) => {
            let table = hash_prepare(&points, voxel_size);
            Box::new(move || {
                black_box(hash_query(&table, black_box(&queries), voxel_size, &win));
            })
        }
        (Algorithm::KdTree, Phase::Preparation) => Box::new(|| {
            black_box(KdTree::build(black_box(&points)).expect("non-empty"));
        }),
        (Algorithm::KdTree, Phase::Inference) => {
            let tree = KdTree::build(&points).expect("non-empty");
            Box::new(move || {
                for q in &queries {
                    black_box(tree.knn(black_box(q), k).expect("k <= n"));
                }
            })
        }
        // no preparation step: the timed region only hands over the points
        (Algorithm::BruteForce | Algorithm::Heap, Phase::Preparation) => Box::new(|| {
            black_box(black_box(&points).as_slice());
        }),
        (Algorithm::BruteForce, Phase::Inference) => Box::new(|| {
            for q in &queries {
                black_box(bruteforce_knn(black_box(&points), q, k).expect("k <= n"));
            }
        }),
        (Algorithm::Heap, Phase::Inference) => Box::new(|| {
            for q in &queries {
                black_box(heap_knn(black_box(&points), q, k).expect("k <= n"));
            }
        }),
    };
    let warm = Instant::now();
    loop {
        time(&mut run);
        if warm.elapsed().as_secs_f64() >= WARMUP_SECONDS {
            break;
        }
    }
    // short workloads get extra samples until the sampled time is meaningful
    let mut samples: Vec<f64> = (0..reps).map(|_| time(&mut run)).collect();
    while samples.len() < MAX_REPS && samples.iter().sum::<f64>() < MIN_SAMPLED_SECONDS {
        samples.push(time(&mut run));
    }
    LatencyRecord { algorithm, phase, n, m, k, median_seconds: median(samples.clone()), reps: samples.len(), seed }
}

/// Least-squares slope of `ln t` against `ln n`; `None` with fewer than three
/// distinct sizes or non-positive values.
pub fn fit_loglog_slope(samples: &[(f64, f64)]) -> Option<f64> {
    let mut sizes: Vec<f64> = samples.iter().map(|s| s.0).collect();
    sizes.sort_by(f64::total_cmp);
    sizes.dedup();
    if sizes.len() < 3 || samples.iter().any(|&(n, t)| !(n > 0.0) || !(t > 0.0)) {
        return None;
    }
    let pts: Vec<(f64, f64)> = samples.iter().map(|&(n, t)| (n.ln(), t.ln())).collect();
    let count = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / count;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / count;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Some(sxy / sxx)
}
