//! Centroid-aware voxelization and devoxelization.
//!
//! Voxels are indexed in lexicographic order of their integer coordinates, so
//! voxel numbering does not depend on point order. All continuous positions
//! are kept relative to the voxel's minimum corner `v * L`: a translation by
//! an integer number of voxels leaves every stored offset bit-identical.

use std::cmp::Ordering;

use crate::cloud::PointCloud;
use crate::encoding::{CentroidEncoderParams, DevoxMlp, DevoxTrace};
use crate::error::{shape_err, Error, Result};
use crate::hash::{SpatialHashTable, VoxelCoord};

/// Occupied cells of one resolution level and how members map onto them.
///
/// At the finest level the members are input points; after pooling they are
/// the voxels of the finer level.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    pub voxel_size: f64,
    pub coords: Vec<VoxelCoord>,
    /// `c_i - v_i * L`, in `[0, L)^3`.
    pub centroid_offsets: Vec<[f64; 3]>,
    pub centroids: Vec<[f64; 3]>,
    /// Number of input points under each voxel.
    pub point_counts: Vec<usize>,
    /// Member indices of each voxel, ascending.
    pub members: Vec<Vec<usize>>,
    /// Member indices in the order used for every reduction over a voxel.
    pub reduce_order: Vec<Vec<usize>>,
    pub member_to_voxel: Vec<usize>,
    /// Offset of each member from its voxel centroid.
    pub member_offsets: Vec<[f64; 3]>,
    pub table: SpatialHashTable,
}

/// Voxel structure plus per-voxel features.
#[derive(Debug, Clone)]
pub struct SparseVoxelSet {
    pub grid: VoxelGrid,
    /// Row-major `I x feature_dim`.
    pub features: Vec<f64>,
    pub feature_dim: usize,
}

/// Per-point centroid-to-point encodings, row-major `N x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidEncoding {
    pub data: Vec<f64>,
    pub dim: usize,
}

impl CentroidEncoding {
    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.data[n * self.dim..(n + 1) * self.dim]
    }
}

impl SparseVoxelSet {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }
}

/// Metric position of an integer grid line.
#[inline]
pub fn anchor(v: i32, voxel_size: f64) -> f64 {
    v as f64 * voxel_size
}

/// `floor(p / L)`, corrected so that `anchor(v) <= p < anchor(v + 1)` holds in
/// floating point. A point on a boundary belongs to the higher cell.
pub fn quantize(p: f64, voxel_size: f64) -> Result<i32> {
    let mut v = (p / voxel_size).floor();
    if v * voxel_size > p {
        v -= 1.0;
    } else if (v + 1.0) * voxel_size <= p {
        v += 1.0;
    }
    if !(v >= i32::MIN as f64 && v < i32::MAX as f64) {
        return Err(Error::Domain(format!("coordinate {p} overflows the voxel grid at L={voxel_size}")));
    }
    Ok(v as i32)
}

fn check_voxel_size(voxel_size: f64) -> Result<()> {
    if !(voxel_size > 0.0) || !voxel_size.is_finite() {
        return Err(Error::Domain(format!("voxel size must be positive, got {voxel_size}")));
    }
    Ok(())
}

fn cmp_f64_slices(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// Keeps a mean offset inside `[0, L)` despite rounding.
fn clamp_offset(off: f64, lo: f64, hi_exclusive: f64) -> f64 {
    if off < lo {
        lo
    } else if off >= hi_exclusive {
        hi_exclusive.next_down()
    } else {
        off
    }
}

impl VoxelGrid {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn num_members(&self) -> usize {
        self.member_to_voxel.len()
    }

    /// Quantizes the cloud at voxel size `L`.
    ///
    /// Reductions over a voxel visit its points in order of content
    /// (intra-voxel offset, then features), so reordering the input cloud
    /// cannot change any rounded sum.
    pub fn from_cloud(cloud: &PointCloud, voxel_size: f64) -> Result<Self> {
        check_voxel_size(voxel_size)?;
        if cloud.is_empty() {
            return Err(Error::EmptyInput);
        }
        cloud.validate()?;
        let n = cloud.len();
        let mut cells = Vec::with_capacity(n);
        let mut local = Vec::with_capacity(n);
        for p in &cloud.points {
            let v = [quantize(p[0], voxel_size)?, quantize(p[1], voxel_size)?, quantize(p[2], voxel_size)?];
            local.push([
                p[0] - anchor(v[0], voxel_size),
                p[1] - anchor(v[1], voxel_size),
                p[2] - anchor(v[2], voxel_size),
            ]);
            cells.push(VoxelCoord(v));
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| cells[a].cmp(&cells[b]).then(a.cmp(&b)));

        let mut coords = Vec::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut member_to_voxel = vec![0; n];
        for &idx in &order {
            if coords.last() != Some(&cells[idx]) {
                coords.push(cells[idx]);
                members.push(Vec::new());
            }
            member_to_voxel[idx] = coords.len() - 1;
            members.last_mut().unwrap().push(idx);
        }

        let reduce_order: Vec<Vec<usize>> = members
            .iter()
            .map(|m| {
                let mut m = m.clone();
                m.sort_by(|&a, &b| {
                    cmp_f64_slices(&local[a], &local[b])
                        .then_with(|| cmp_f64_slices(cloud.feature(a), cloud.feature(b)))
                        .then(a.cmp(&b))
                });
                m
            })
            .collect();

        let mut centroid_offsets = Vec::with_capacity(coords.len());
        let mut centroids = Vec::with_capacity(coords.len());
        for (i, order) in reduce_order.iter().enumerate() {
            let mut sum = [0.0; 3];
            for &m in order {
                for a in 0..3 {
                    sum[a] += local[m][a];
                }
            }
            let count = order.len() as f64;
            let v = coords[i].0;
            let mut off = [0.0; 3];
            let mut c = [0.0; 3];
            for a in 0..3 {
                let lo = anchor(v[a], voxel_size);
                let hi = anchor(v[a] + 1, voxel_size);
                off[a] = clamp_offset(sum[a] / count, 0.0, hi - lo);
                c[a] = lo + off[a];
                if c[a] >= hi {
                    c[a] = hi.next_down();
                }
            }
            centroid_offsets.push(off);
            centroids.push(c);
        }

        let member_offsets = (0..n)
            .map(|m| {
                let off = centroid_offsets[member_to_voxel[m]];
                [local[m][0] - off[0], local[m][1] - off[1], local[m][2] - off[2]]
            })
            .collect();

        let mut table = SpatialHashTable::with_capacity(coords.len());
        for (i, &c) in coords.iter().enumerate() {
            table.insert(c, i)?;
        }
        let point_counts = members.iter().map(Vec::len).collect();
        Ok(Self {
            voxel_size,
            coords,
            centroid_offsets,
            centroids,
            point_counts,
            members,
            reduce_order,
            member_to_voxel,
            member_offsets,
            table,
        })
    }

    /// Stride-2 coarsening: parent coordinate `floor(v / 2)`, parent centroid
    /// the point-count-weighted mean of child centroids. Children are the
    /// members of the new grid.
    pub fn coarsen(&self) -> Result<VoxelGrid> {
        self.coarsen_from([0; 3])
    }

    /// Stride-2 coarsening on a lattice whose cell boundaries pass through the
    /// grid's smallest occupied coordinate on each axis. Shifting the input by
    /// any whole number of voxels leaves the parent grouping unchanged.
    pub fn coarsen_anchored(&self) -> Result<VoxelGrid> {
        let mut origin = [i32::MAX; 3];
        for c in &self.coords {
            for a in 0..3 {
                origin[a] = origin[a].min(c.0[a]);
            }
        }
        if self.is_empty() {
            origin = [0; 3];
        }
        self.coarsen_from(origin)
    }

    /// Parent coordinate `floor((v - origin) / 2)`; parent cell `P` covers
    /// child coordinates `origin + 2P` and `origin + 2P + 1`.
    pub fn coarsen_from(&self, origin: [i32; 3]) -> Result<VoxelGrid> {
        let voxel_size = 2.0 * self.voxel_size;
        let rel = |c: &VoxelCoord, a: usize| -> Result<i32> {
            c.0[a].checked_sub(origin[a]).ok_or_else(|| Error::Domain("voxel coordinate overflow".into()))
        };
        let cells = self
            .coords
            .iter()
            .map(|c| Ok(VoxelCoord([rel(c, 0)?.div_euclid(2), rel(c, 1)?.div_euclid(2), rel(c, 2)?.div_euclid(2)])))
            .collect::<Result<Vec<_>>>()?;
        let n = self.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| cells[a].cmp(&cells[b]).then(a.cmp(&b)));

        let mut coords = Vec::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut member_to_voxel = vec![0; n];
        for &idx in &order {
            if coords.last() != Some(&cells[idx]) {
                coords.push(cells[idx]);
                members.push(Vec::new());
            }
            member_to_voxel[idx] = coords.len() - 1;
            members.last_mut().unwrap().push(idx);
        }

        // child offset expressed in the parent's frame
        let child_local: Vec<[f64; 3]> = (0..n)
            .map(|c| {
                let parent = cells[c].0;
                let child = self.coords[c].0;
                let mut out = [0.0; 3];
                for a in 0..3 {
                    out[a] = (child[a] - origin[a] - 2 * parent[a]) as f64 * self.voxel_size + self.centroid_offsets[c][a];
                }
                out
            })
            .collect();

        let mut centroid_offsets = Vec::with_capacity(coords.len());
        let mut centroids = Vec::with_capacity(coords.len());
        let mut point_counts = Vec::with_capacity(coords.len());
        for (i, kids) in members.iter().enumerate() {
            let mut sum = [0.0; 3];
            let mut weight = 0usize;
            for &k in kids {
                let w = self.point_counts[k];
                weight += w;
                for a in 0..3 {
                    sum[a] += w as f64 * child_local[k][a];
                }
            }
            let v = coords[i].0;
            let mut off = [0.0; 3];
            let mut c = [0.0; 3];
            for a in 0..3 {
                let base = anchor(origin[a], self.voxel_size);
                let lo = base + anchor(v[a], voxel_size);
                let hi = base + anchor(v[a] + 1, voxel_size);
                off[a] = clamp_offset(sum[a] / weight as f64, 0.0, anchor(v[a] + 1, voxel_size) - anchor(v[a], voxel_size));
                c[a] = lo + off[a];
                if c[a] >= hi {
                    c[a] = hi.next_down();
                }
            }
            centroid_offsets.push(off);
            centroids.push(c);
            point_counts.push(weight);
        }
        let member_offsets = (0..n)
            .map(|k| {
                let off = centroid_offsets[member_to_voxel[k]];
                [child_local[k][0] - off[0], child_local[k][1] - off[1], child_local[k][2] - off[2]]
            })
            .collect();
        let mut table = SpatialHashTable::with_capacity(coords.len());
        for (i, &c) in coords.iter().enumerate() {
            table.insert(c, i)?;
        }
        Ok(VoxelGrid {
            voxel_size,
            coords,
            centroid_offsets,
            centroids,
            point_counts,
            reduce_order: members.clone(),
            members,
            member_to_voxel,
            member_offsets,
            table,
        })
    }
}

/// Computes `e_n = enc(p_n - c_mu(n))` for every point.
pub fn centroid_encoding(grid: &VoxelGrid, enc: &CentroidEncoderParams) -> CentroidEncoding {
    let dim = enc.dim();
    let mut data = vec![0.0; grid.num_members() * dim];
    for (n, off) in grid.member_offsets.iter().enumerate() {
        enc.encode_into(off, &mut data[n * dim..(n + 1) * dim]);
    }
    CentroidEncoding { data, dim }
}

/// Averages `i_n (+) e_n` over each voxel.
pub fn aggregate_features(grid: &VoxelGrid, cloud: &PointCloud, enc: &CentroidEncoding) -> Vec<f64> {
    let d_in = cloud.feature_dim;
    let width = d_in + enc.dim;
    let mut features = vec![0.0; grid.len() * width];
    for (i, order) in grid.reduce_order.iter().enumerate() {
        let row = &mut features[i * width..(i + 1) * width];
        for &n in order {
            for (r, v) in row.iter_mut().zip(cloud.feature(n).iter().chain(enc.row(n))) {
                *r += v;
            }
        }
        let count = order.len() as f64;
        for r in row.iter_mut() {
            *r /= count;
        }
    }
    features
}

/// Quantizes the cloud, encodes each point's offset from its voxel centroid
/// and averages `i_n (+) e_n` into voxel features of width `D_in + D_enc`.
pub fn voxelize(
    cloud: &PointCloud,
    voxel_size: f64,
    enc: &CentroidEncoderParams,
) -> Result<(SparseVoxelSet, CentroidEncoding)> {
    let grid = VoxelGrid::from_cloud(cloud, voxel_size)?;
    let encoding = centroid_encoding(&grid, enc);
    let features = aggregate_features(&grid, cloud, &encoding);
    let feature_dim = cloud.feature_dim + encoding.dim;
    Ok((SparseVoxelSet { grid, features, feature_dim }, encoding))
}

/// Per-point traces from [`devoxelize_traced`].
pub type DevoxTraces = Vec<DevoxTrace>;

fn check_devox_shapes(grid: &VoxelGrid, out_features: &[f64], d_out: usize, enc: &CentroidEncoding, mlp: &DevoxMlp) -> Result<()> {
    if d_out == 0 || out_features.len() != grid.len() * d_out {
        return Err(shape_err(format!(
            "{} voxel output values for {} voxels of width {d_out}",
            out_features.len(),
            grid.len()
        )));
    }
    if enc.len() != grid.num_members() && !(enc.dim == 0 && enc.data.is_empty()) {
        return Err(shape_err(format!("{} encodings for {} points", enc.len(), grid.num_members())));
    }
    if mlp.first.inp != d_out + enc.dim || mlp.first.out != mlp.second.inp {
        return Err(shape_err(format!(
            "devoxelization MLP expects {} inputs, got {} + {}",
            mlp.first.inp, d_out, enc.dim
        )));
    }
    Ok(())
}

/// `o_n = MLP(f'_mu(n) (+) e_n)`, also returning the per-point traces needed
/// for backpropagation.
pub fn devoxelize_traced(
    grid: &VoxelGrid,
    out_features: &[f64],
    d_out: usize,
    enc: &CentroidEncoding,
    mlp: &DevoxMlp,
) -> Result<(Vec<f64>, DevoxTraces)> {
    check_devox_shapes(grid, out_features, d_out, enc, mlp)?;
    let width = mlp.out_dim();
    let n = grid.num_members();
    let mut out = Vec::with_capacity(n * width);
    let mut traces = Vec::with_capacity(n);
    for p in 0..n {
        let i = grid.member_to_voxel[p];
        let mut input = Vec::with_capacity(d_out + enc.dim);
        input.extend_from_slice(&out_features[i * d_out..(i + 1) * d_out]);
        if enc.dim > 0 {
            input.extend_from_slice(enc.row(p));
        }
        let (o, trace) = mlp.forward_traced(input);
        out.extend_from_slice(&o);
        traces.push(trace);
    }
    Ok((out, traces))
}

/// Maps per-voxel outputs back onto points; returns row-major `N x D_out`.
pub fn devoxelize(
    voxels: &SparseVoxelSet,
    out_features: &[f64],
    d_out: usize,
    enc: &CentroidEncoding,
    mlp: &DevoxMlp,
) -> Result<Vec<f64>> {
    Ok(devoxelize_traced(&voxels.grid, out_features, d_out, enc, mlp)?.0)
}
