use crate::error::{shape_err, Result};
use crate::neighbor::{NeighborTable, WindowOffsets};
use crate::nn::{dot, norm};
use crate::voxel::{SparseVoxelSet, VoxelGrid};

use super::forward::{check_inputs, lsa_forward_traced, LsaTrace, COSINE_EPS};
use super::{AttentionType, LsaParams};

/// Gradients of `sum <upstream, f'>`.
#[derive(Debug, Clone)]
pub struct LsaGrads {
    pub params: LsaParams,
    /// Row-major `I x D`, with respect to the input features.
    pub input: Vec<f64>,
}

pub fn lsa_backward(
    voxels: &SparseVoxelSet,
    params: &LsaParams,
    win: &WindowOffsets,
    upstream: &[f64],
) -> Result<LsaGrads> {
    params.validate(win)?;
    if voxels.feature_dim != params.dim() {
        return Err(shape_err(format!("feature width {} != layer width {}", voxels.feature_dim, params.dim())));
    }
    let table = NeighborTable::build(&voxels.grid, win);
    let (_, trace) = lsa_forward_traced(&voxels.grid, &voxels.features, &table, params)?;
    let mut grad = params.zeros_like();
    let input = lsa_backward_with(&voxels.grid, &table, params, &trace, upstream, &mut grad)?;
    Ok(LsaGrads { params: grad, input })
}

/// Accumulates parameter gradients into `grad` and returns the gradient with
/// respect to the input features.
pub fn lsa_backward_with(
    grid: &VoxelGrid,
    table: &NeighborTable,
    params: &LsaParams,
    trace: &LsaTrace,
    upstream: &[f64],
    grad: &mut LsaParams,
) -> Result<Vec<f64>> {
    check_inputs(grid, &trace.g, table, params)?;
    let d = params.dim();
    let n = grid.len();
    if upstream.len() != n * d {
        return Err(shape_err(format!("expected {n} x {d} upstream values, got {}", upstream.len())));
    }
    let (query, value, weights) = (&trace.query, &trace.value, &trace.weights);

    let mut dquery = vec![0.0; n * d];
    let mut dvalue = vec![0.0; n * d];
    let mut dkey = trace.key.as_ref().map(|_| vec![0.0; n * d]);
    let mut da = Vec::new();
    let mut t = vec![0.0; d];

    for i in 0..n {
        let u = &upstream[i * d..(i + 1) * d];
        let range = table.range(i);
        da.clear();
        for p in range.clone() {
            let j = table.neighbors[p];
            da.push(dot(u, &value[j * d..(j + 1) * d]));
            for (dv, ux) in dvalue[j * d..(j + 1) * d].iter_mut().zip(u) {
                *dv += weights[p] * ux;
            }
        }
        let q = &query[i * d..(i + 1) * d];
        match params.attention {
            AttentionType::Cosine | AttentionType::CosineWithKey => {
                let qn = norm(q);
                let qden = qn.max(COSINE_EPS);
                for (p, &dap) in range.zip(&da) {
                    if dap == 0.0 {
                        continue;
                    }
                    let s = table.slots[p];
                    let j = table.neighbors[p];
                    let rel = params.rel.row(s);
                    match &trace.key {
                        Some(key) => {
                            for (x, tx) in t.iter_mut().enumerate() {
                                *tx = key[j * d + x] + rel[x];
                            }
                        }
                        None => t.copy_from_slice(rel),
                    }
                    let tn = norm(&t);
                    let tden = tn.max(COSINE_EPS);
                    let a = weights[p];
                    let inv = 1.0 / (qden * tden);
                    let qcoef = if qn > COSINE_EPS { a / (qn * qn) } else { 0.0 };
                    let tcoef = if tn > COSINE_EPS { a / (tn * tn) } else { 0.0 };
                    let dq = &mut dquery[i * d..(i + 1) * d];
                    for x in 0..d {
                        dq[x] += dap * (t[x] * inv - qcoef * q[x]);
                    }
                    let drel = &mut grad.rel.rows[s * d..(s + 1) * d];
                    for x in 0..d {
                        let dt = dap * (q[x] * inv - tcoef * t[x]);
                        drel[x] += dt;
                        if let Some(dkey) = dkey.as_mut() {
                            dkey[j * d + x] += dt;
                        }
                    }
                }
            }
            AttentionType::Softmax => {
                let mean: f64 = range.clone().zip(&da).map(|(p, &dap)| weights[p] * dap).sum();
                for (p, &dap) in range.zip(&da) {
                    let ds = weights[p] * (dap - mean);
                    if ds == 0.0 {
                        continue;
                    }
                    let s = table.slots[p];
                    let rel = params.rel.row(s);
                    let dq = &mut dquery[i * d..(i + 1) * d];
                    for x in 0..d {
                        dq[x] += ds * rel[x];
                    }
                    let drel = &mut grad.rel.rows[s * d..(s + 1) * d];
                    for x in 0..d {
                        drel[x] += ds * q[x];
                    }
                }
            }
        }
    }

    let mut dg = vec![0.0; n * d];
    for i in 0..n {
        let rows = i * d..(i + 1) * d;
        let gi = &trace.g[rows.clone()];
        let dgi = &mut dg[rows.clone()];
        params.psi.backward_accumulate(gi, &dquery[rows.clone()], &mut grad.psi, Some(&mut *dgi));
        params.phi.backward_accumulate(gi, &dvalue[rows.clone()], &mut grad.phi, Some(&mut *dgi));
        if let (Some(xi), Some(gxi), Some(dkey)) = (&params.xi, grad.xi.as_mut(), &dkey) {
            xi.backward_accumulate(gi, &dkey[rows.clone()], gxi, Some(&mut *dgi));
        }
        params.abs.backward_accumulate(&grid.centroid_offsets[i], &trace.abs_out[rows], dgi, &mut grad.abs);
    }
    Ok(dg)
}
