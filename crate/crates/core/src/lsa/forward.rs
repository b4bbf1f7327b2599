use crate::error::{shape_err, Result};
use crate::neighbor::{NeighborTable, WindowOffsets};
use crate::nn::{dot, norm};
use crate::voxel::{SparseVoxelSet, VoxelGrid};

use super::{AttentionType, LsaParams};

/// Lower bound applied to both norms in the cosine denominator.
pub const COSINE_EPS: f64 = 1e-12;

/// Intermediate values kept for the backward pass. All per-voxel buffers are
/// row-major `I x D`; `weights` has one entry per neighbor pair, laid out like
/// the neighbor table.
#[derive(Debug, Clone)]
pub struct LsaTrace {
    pub abs_out: Vec<f64>,
    pub g: Vec<f64>,
    pub query: Vec<f64>,
    pub value: Vec<f64>,
    pub key: Option<Vec<f64>>,
    pub weights: Vec<f64>,
}

pub fn lsa_forward(voxels: &SparseVoxelSet, params: &LsaParams, win: &WindowOffsets) -> Result<Vec<f64>> {
    params.validate(win)?;
    if voxels.feature_dim != params.dim() {
        return Err(shape_err(format!("feature width {} != layer width {}", voxels.feature_dim, params.dim())));
    }
    let table = NeighborTable::build(&voxels.grid, win);
    Ok(lsa_forward_traced(&voxels.grid, &voxels.features, &table, params)?.0)
}

pub(super) fn check_inputs(grid: &VoxelGrid, features: &[f64], table: &NeighborTable, params: &LsaParams) -> Result<()> {
    let d = params.dim();
    let n = grid.len();
    if features.len() != n * d {
        return Err(shape_err(format!("expected {n} x {d} features, got {} values", features.len())));
    }
    if table.start.len() != n + 1 || table.slots.iter().any(|&s| s >= params.rel.len()) {
        return Err(shape_err("neighbor table does not match the voxel set or window"));
    }
    Ok(())
}

/// Forward pass over a prebuilt neighbor table.
pub fn lsa_forward_traced(
    grid: &VoxelGrid,
    features: &[f64],
    table: &NeighborTable,
    params: &LsaParams,
) -> Result<(Vec<f64>, LsaTrace)> {
    check_inputs(grid, features, table, params)?;
    let d = params.dim();
    let n = grid.len();

    let mut abs_out = vec![0.0; n * d];
    for (i, row) in abs_out.chunks_exact_mut(d.max(1)).enumerate().take(n) {
        params.abs.encode_into(&grid.centroid_offsets[i], row);
    }
    let g: Vec<f64> = features.iter().zip(&abs_out).map(|(f, a)| f + a).collect();
    let query = params.psi.forward_rows(&g);
    let value = params.phi.forward_rows(&g);
    let key = params.xi.as_ref().map(|xi| xi.forward_rows(&g));

    let mut weights = vec![0.0; table.total()];
    let mut out = vec![0.0; n * d];
    let mut t = vec![0.0; d];
    for i in 0..n {
        let q = &query[i * d..(i + 1) * d];
        let range = table.range(i);
        match params.attention {
            AttentionType::Cosine | AttentionType::CosineWithKey => {
                let qn = norm(q).max(COSINE_EPS);
                for p in range.clone() {
                    let rel = params.rel.row(table.slots[p]);
                    let tv: &[f64] = match &key {
                        Some(key) => {
                            let j = table.neighbors[p];
                            for (x, tx) in t.iter_mut().enumerate() {
                                *tx = key[j * d + x] + rel[x];
                            }
                            &t
                        }
                        None => rel,
                    };
                    weights[p] = (dot(q, tv) / (qn * norm(tv).max(COSINE_EPS))).clamp(-1.0, 1.0);
                }
            }
            AttentionType::Softmax => {
                let mut max = f64::NEG_INFINITY;
                for p in range.clone() {
                    weights[p] = dot(q, params.rel.row(table.slots[p]));
                    max = max.max(weights[p]);
                }
                let mut sum = 0.0;
                for p in range.clone() {
                    weights[p] = (weights[p] - max).exp();
                    sum += weights[p];
                }
                for p in range.clone() {
                    weights[p] /= sum;
                }
            }
        }
        let oi = &mut out[i * d..(i + 1) * d];
        for p in range {
            let a = weights[p];
            let j = table.neighbors[p];
            for (o, v) in oi.iter_mut().zip(&value[j * d..(j + 1) * d]) {
                *o += a * v;
            }
        }
    }
    Ok((out, LsaTrace { abs_out, g, query, value, key, weights }))
}
