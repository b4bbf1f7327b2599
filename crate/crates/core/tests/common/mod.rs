//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use fpt_core::cloud::PointCloud;
use fpt_core::lsa::{AttentionType, LsaParams};
use fpt_core::neighbor::WindowOffsets;
use fpt_core::nn::{Activation, Affine};
use fpt_core::rng::Stream;
use fpt_core::voxel::{SparseVoxelSet, VoxelGrid};

/// `n_voxels` distinct cells drawn from `[0, span)^3`, one to three points
/// each, with random features of width `dim`.
pub fn random_voxel_set(s: &mut Stream, n_voxels: usize, span: i32, voxel_size: f64, dim: usize) -> SparseVoxelSet {
    let mut cells = std::collections::BTreeSet::new();
    while cells.len() < n_voxels {
        let c = [0, 1, 2].map(|_| s.below(span as u64) as i32);
        cells.insert(c);
    }
    let mut points = Vec::new();
    for c in &cells {
        for _ in 0..1 + s.below(3) {
            points.push([0, 1, 2].map(|a| (c[a] as f64 + s.range(0.05, 0.95)) * voxel_size));
        }
    }
    let cloud = PointCloud::new(points, Vec::new(), 0, None).unwrap();
    let grid = VoxelGrid::from_cloud(&cloud, voxel_size).unwrap();
    let features = (0..grid.len() * dim).map(|_| s.normal()).collect();
    SparseVoxelSet { grid, features, feature_dim: dim }
}

pub fn affine(a: &Affine, x: &[f64]) -> Vec<f64> {
    (0..a.out)
        .map(|o| a.bias[o] + (0..a.inp).map(|c| a.weight[o * a.inp + c] * x[c]).sum::<f64>())
        .collect()
}

pub fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Identity => x,
        Activation::Tanh => x.tanh(),
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    d / (na * nb)
}

/// Per-pair reference: every voxel pair is tested for window membership by
/// coordinate difference, and every projection is re-evaluated per pair.
pub fn naive_lsa(voxels: &SparseVoxelSet, p: &LsaParams, win: &WindowOffsets) -> Vec<f64> {
    let g = &voxels.grid;
    let d = voxels.feature_dim;
    let r = (win.k / 2) as i32;
    let k = win.k as i32;
    let feat = |i: usize| -> Vec<f64> {
        let off = g.centroid_offsets[i];
        let enc = affine(&p.abs.affine, &off);
        (0..d).map(|x| voxels.features[i * d + x] + act(p.abs.activation, enc[x])).collect()
    };
    let mut out = vec![0.0; g.len() * d];
    for i in 0..g.len() {
        let gi = feat(i);
        let q = affine(&p.psi, &gi);
        let mut pairs = Vec::new();
        for j in 0..g.len() {
            let diff = [0, 1, 2].map(|a| g.coords[j].0[a] - g.coords[i].0[a]);
            if diff.iter().all(|&x| x.abs() <= r) {
                let slot = (((diff[0] + r) * k + diff[1] + r) * k + diff[2] + r) as usize;
                pairs.push((j, slot));
            }
        }
        let rel = |s: usize| &p.rel.rows[s * d..(s + 1) * d];
        let weights: Vec<f64> = match p.attention {
            AttentionType::Cosine => pairs.iter().map(|&(_, s)| cosine(&q, rel(s))).collect(),
            AttentionType::CosineWithKey => pairs
                .iter()
                .map(|&(j, s)| {
                    let key = affine(p.xi.as_ref().unwrap(), &feat(j));
                    let t: Vec<f64> = key.iter().zip(rel(s)).map(|(a, b)| a + b).collect();
                    cosine(&q, &t)
                })
                .collect(),
            AttentionType::Softmax => {
                let sc: Vec<f64> =
                    pairs.iter().map(|&(_, s)| q.iter().zip(rel(s)).map(|(a, b)| a * b).sum()).collect();
                let m = sc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = sc.iter().map(|v| (v - m).exp()).collect();
                let z: f64 = e.iter().sum();
                e.iter().map(|v| v / z).collect()
            }
        };
        for (&(j, _), w) in pairs.iter().zip(weights) {
            let v = affine(&p.phi, &feat(j));
            for x in 0..d {
                out[i * d + x] += w * v[x];
            }
        }
    }
    out
}

/// Largest relative error between `analytic` and central differences of `f`
/// around `x0`. Entries whose magnitudes are both below `floor` are compared
/// against `floor` instead.
pub fn fd_max_rel_error(analytic: &[f64], x0: &[f64], h: f64, floor: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(analytic.len(), x0.len());
    let mut x = x0.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        x[i] = x0[i] + h;
        let up = f(&x);
        x[i] = x0[i] - h;
        let down = f(&x);
        x[i] = x0[i];
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(floor);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}
