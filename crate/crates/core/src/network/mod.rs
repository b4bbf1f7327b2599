//! Two-level U-shaped segmentation network built from LSA blocks.
//!
//! Dataflow per cloud:
//! voxelize -> stem -> block (level 0) -> stride-2 pool -> block (level 1)
//! -> unpool + skip -> block (level 0) -> devoxelize -> classifier.
//! Each block computes `tanh(x + LSA(x))`.

mod checkpoint;
mod toy;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use toy::{moving_average, ToyOutcome, ToyTask, TEST_SEED_OFFSET};
pub use train::{accuracy, loss_and_gradient, train, train_with, TrainReport};

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::encoding::{CentroidEncoderParams, DevoxMlp, DevoxTrace};
use crate::error::{shape_err, Error, Result};
use crate::lsa::{lsa_backward_with, lsa_forward_traced, AttentionType, LsaParams, LsaTrace};
use crate::neighbor::{NeighborTable, WindowOffsets};
use crate::nn::{join, Affine, Parameters};
use crate::rng::Stream;
use crate::voxel::{aggregate_features, centroid_encoding, devoxelize_traced, CentroidEncoding, SparseVoxelSet, VoxelGrid};

/// Network hyperparameters. Serialized as JSON for the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Finest voxel edge length in metres.
    pub voxel_size: f64,
    /// Attention window edge `k` (odd).
    pub window: usize,
    /// Widths of the two encoder levels `[w0, w1]`.
    pub encoder_widths: [usize; 2],
    /// Widths of the decoder: `[d1, d0]`, the unpool projection and the
    /// final level-0 block.
    pub decoder_widths: [usize; 2],
    /// Width of the centroid-to-point encoding.
    pub d_enc: usize,
    /// Per-point input feature width.
    pub in_features: usize,
    pub n_classes: usize,
    #[serde(default)]
    pub attention: AttentionType,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.125,
            window: 3,
            encoder_widths: [16, 16],
            decoder_widths: [16, 16],
            d_enc: 8,
            in_features: 3,
            n_classes: 3,
            attention: AttentionType::Cosine,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size.is_finite() && self.voxel_size > 0.0) {
            return Err(Error::Config(format!("voxel_size must be positive, got {}", self.voxel_size)));
        }
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::Config(format!("window must be odd, got {}", self.window)));
        }
        let widths = self.encoder_widths.iter().chain(&self.decoder_widths);
        if widths.chain([&self.d_enc, &self.n_classes]).any(|&w| w == 0) {
            return Err(Error::Config("widths, d_enc and n_classes must be at least 1".into()));
        }
        Ok(())
    }

    pub fn window_offsets(&self) -> Result<WindowOffsets> {
        WindowOffsets::new(self.window).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub config: NetworkConfig,
    pub centroid_encoder: CentroidEncoderParams,
    /// `(D_in + D_enc) -> w0`, followed by tanh.
    pub stem: Affine,
    pub enc0: LsaParams,
    /// `w0 -> w1`, applied to each child before averaging.
    pub pool: Affine,
    pub enc1: LsaParams,
    /// `w1 -> d1`, applied to the parent feature handed to each child.
    pub unpool: Affine,
    /// `(d1 + w0) -> d0` over the unpooled feature and the skip.
    pub merge: Affine,
    pub dec0: LsaParams,
    pub devox: DevoxMlp,
    /// `d0 -> n_classes`.
    pub classifier: Affine,
}

pub fn init_network(config: &NetworkConfig) -> Result<NetworkParams> {
    config.validate()?;
    let win = config.window_offsets()?;
    let [w0, w1] = config.encoder_widths;
    let [d1, d0] = config.decoder_widths;
    let mut s = Stream::new(config.seed, 0);
    let s = &mut s;
    let att = config.attention;
    Ok(NetworkParams {
        config: config.clone(),
        centroid_encoder: CentroidEncoderParams::init(config.d_enc, s),
        stem: Affine::init(config.in_features + config.d_enc, w0, s),
        enc0: LsaParams::init(w0, &win, att, s),
        pool: Affine::init(w0, w1, s),
        enc1: LsaParams::init(w1, &win, att, s),
        unpool: Affine::init(w1, d1, s),
        merge: Affine::init(d1 + w0, d0, s),
        dec0: LsaParams::init(d0, &win, att, s),
        devox: DevoxMlp::init(d0, config.d_enc, s),
        classifier: Affine::init(d0, config.n_classes, s),
    })
}

impl NetworkParams {
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut("", &mut |_, data| data.fill(0.0));
        z
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, _, data| ok &= data.iter().all(|v| v.is_finite()));
        ok
    }
}

impl Parameters for NetworkParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.centroid_encoder.visit(&join(prefix, "centroid_encoder"), f);
        self.stem.visit(&join(prefix, "stem"), f);
        self.enc0.visit(&join(prefix, "enc0"), f);
        self.pool.visit(&join(prefix, "pool"), f);
        self.enc1.visit(&join(prefix, "enc1"), f);
        self.unpool.visit(&join(prefix, "unpool"), f);
        self.merge.visit(&join(prefix, "merge"), f);
        self.dec0.visit(&join(prefix, "dec0"), f);
        self.devox.visit(&join(prefix, "devox"), f);
        self.classifier.visit(&join(prefix, "classifier"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.centroid_encoder.visit_mut(&join(prefix, "centroid_encoder"), f);
        self.stem.visit_mut(&join(prefix, "stem"), f);
        self.enc0.visit_mut(&join(prefix, "enc0"), f);
        self.pool.visit_mut(&join(prefix, "pool"), f);
        self.enc1.visit_mut(&join(prefix, "enc1"), f);
        self.unpool.visit_mut(&join(prefix, "unpool"), f);
        self.merge.visit_mut(&join(prefix, "merge"), f);
        self.dec0.visit_mut(&join(prefix, "dec0"), f);
        self.devox.visit_mut(&join(prefix, "devox"), f);
        self.classifier.visit_mut(&join(prefix, "classifier"), f);
    }
}

/// Voxel structure of one cloud at both levels. Depends only on geometry, so
/// it is built once per cloud and reused across training epochs.
#[derive(Debug, Clone)]
pub struct SceneGeometry {
    pub level0: VoxelGrid,
    pub level1: VoxelGrid,
    pub table0: NeighborTable,
    pub table1: NeighborTable,
}

impl SceneGeometry {
    pub fn build(config: &NetworkConfig, cloud: &PointCloud) -> Result<Self> {
        let win = config.window_offsets()?;
        let level0 = VoxelGrid::from_cloud(cloud, config.voxel_size)?;
        let level1 = level0.coarsen_anchored()?;
        let table0 = NeighborTable::build(&level0, &win);
        let table1 = NeighborTable::build(&level1, &win);
        Ok(Self { level0, level1, table0, table1 })
    }
}

/// Stride-2 pooling on the lattice anchored at the grid's smallest occupied
/// coordinate: parent coordinate `floor((v - v_min) / 2)`, parent centroid the
/// point-count-weighted mean of child centroids, parent feature the mean of
/// `proj` over the children. The parent grid keeps the child-to-parent map
/// used by [`unpool`].
pub fn strided_pool(voxels: &SparseVoxelSet, proj: &Affine) -> Result<SparseVoxelSet> {
    if voxels.feature_dim != proj.inp {
        return Err(shape_err(format!("feature width {} != projection input {}", voxels.feature_dim, proj.inp)));
    }
    let grid = voxels.grid.coarsen_anchored()?;
    let features = pool_features(&grid, &voxels.features, proj)?;
    Ok(SparseVoxelSet { grid, features, feature_dim: proj.out })
}

/// `x_parent = mean_c proj(x_c)` over the children of each parent.
pub fn pool_features(parent: &VoxelGrid, child_features: &[f64], proj: &Affine) -> Result<Vec<f64>> {
    if child_features.len() != parent.num_members() * proj.inp {
        return Err(shape_err(format!(
            "{} child values for {} children of width {}",
            child_features.len(),
            parent.num_members(),
            proj.inp
        )));
    }
    let (din, dout) = (proj.inp, proj.out);
    let mut out = vec![0.0; parent.len() * dout];
    let mut tmp = vec![0.0; dout];
    for (i, children) in parent.reduce_order.iter().enumerate() {
        let row = &mut out[i * dout..(i + 1) * dout];
        for &c in children {
            proj.forward_into(&child_features[c * din..(c + 1) * din], &mut tmp);
            for (r, t) in row.iter_mut().zip(&tmp) {
                *r += t;
            }
        }
        let n = children.len() as f64;
        for r in row.iter_mut() {
            *r /= n;
        }
    }
    Ok(out)
}

/// Each child receives `merge(proj(parent) (+) skip)`.
pub fn unpool(
    parent: &VoxelGrid,
    parent_features: &[f64],
    skip: &[f64],
    proj: &Affine,
    merge: &Affine,
) -> Result<Vec<f64>> {
    Ok(unpool_traced(parent, parent_features, skip, proj, merge)?.1)
}

fn unpool_traced(
    parent: &VoxelGrid,
    parent_features: &[f64],
    skip: &[f64],
    proj: &Affine,
    merge: &Affine,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = parent.num_members();
    let ws = merge.inp.checked_sub(proj.out).ok_or_else(|| shape_err("merge narrower than unpool projection"))?;
    if parent_features.len() != parent.len() * proj.inp || skip.len() != n * ws {
        return Err(shape_err(format!(
            "unpool expects {} x {} parent and {n} x {ws} skip values",
            parent.len(),
            proj.inp
        )));
    }
    let (dp, du, dm) = (proj.inp, proj.out, merge.out);
    let mut up = vec![0.0; n * du];
    let mut out = vec![0.0; n * dm];
    let mut cat = vec![0.0; du + ws];
    for c in 0..n {
        let p = parent.member_to_voxel[c];
        proj.forward_into(&parent_features[p * dp..(p + 1) * dp], &mut up[c * du..(c + 1) * du]);
        cat[..du].copy_from_slice(&up[c * du..(c + 1) * du]);
        cat[du..].copy_from_slice(&skip[c * ws..(c + 1) * ws]);
        merge.forward_into(&cat, &mut out[c * dm..(c + 1) * dm]);
    }
    Ok((up, out))
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub encoding: CentroidEncoding,
    /// Voxelized input features, `I0 x (D_in + D_enc)`.
    pub x0: Vec<f64>,
    pub h0: Vec<f64>,
    pub lsa0: LsaTrace,
    pub b0: Vec<f64>,
    pub x1: Vec<f64>,
    pub lsa1: LsaTrace,
    pub b1: Vec<f64>,
    pub up: Vec<f64>,
    pub m: Vec<f64>,
    pub lsa2: LsaTrace,
    pub b2: Vec<f64>,
    pub devox: Vec<DevoxTrace>,
    pub point_features: Vec<f64>,
    /// `N x n_classes`.
    pub logits: Vec<f64>,
}

fn block_forward(grid: &VoxelGrid, table: &NeighborTable, p: &LsaParams, x: &[f64]) -> Result<(Vec<f64>, LsaTrace)> {
    let (att, trace) = lsa_forward_traced(grid, x, table, p)?;
    Ok((x.iter().zip(att).map(|(a, b)| (a + b).tanh()).collect(), trace))
}

fn block_backward(
    grid: &VoxelGrid,
    table: &NeighborTable,
    p: &LsaParams,
    trace: &LsaTrace,
    out: &[f64],
    dout: &[f64],
    grad: &mut LsaParams,
) -> Result<Vec<f64>> {
    let dpre: Vec<f64> = out.iter().zip(dout).map(|(y, g)| g * (1.0 - y * y)).collect();
    let mut dx = lsa_backward_with(grid, table, p, trace, &dpre, grad)?;
    for (d, g) in dx.iter_mut().zip(&dpre) {
        *d += g;
    }
    Ok(dx)
}

fn check_cloud(params: &NetworkParams, cloud: &PointCloud) -> Result<()> {
    cloud.validate()?;
    if cloud.feature_dim != params.config.in_features {
        return Err(shape_err(format!(
            "cloud has {} features per point, network expects {}",
            cloud.feature_dim, params.config.in_features
        )));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

pub fn forward_traced(params: &NetworkParams, cloud: &PointCloud, geo: &SceneGeometry) -> Result<ForwardTrace> {
    check_cloud(params, cloud)?;
    let (g0, g1) = (&geo.level0, &geo.level1);
    let encoding = centroid_encoding(g0, &params.centroid_encoder);
    let x0 = aggregate_features(g0, cloud, &encoding);
    let mut h0 = params.stem.forward_rows(&x0);
    for v in &mut h0 {
        *v = v.tanh();
    }
    let (b0, lsa0) = block_forward(g0, &geo.table0, &params.enc0, &h0)?;
    let x1 = pool_features(g1, &b0, &params.pool)?;
    let (b1, lsa1) = block_forward(g1, &geo.table1, &params.enc1, &x1)?;
    let (up, m) = unpool_traced(g1, &b1, &b0, &params.unpool, &params.merge)?;
    let (b2, lsa2) = block_forward(g0, &geo.table0, &params.dec0, &m)?;
    let d0 = params.config.decoder_widths[1];
    let (point_features, devox) = devoxelize_traced(g0, &b2, d0, &encoding, &params.devox)?;
    let logits = params.classifier.forward_rows(&point_features);
    Ok(ForwardTrace { encoding, x0, h0, lsa0, b0, x1, lsa1, b1, up, m, lsa2, b2, devox, point_features, logits })
}

/// Per-point class logits, row-major `N x n_classes`.
pub fn forward(params: &NetworkParams, cloud: &PointCloud) -> Result<Vec<f64>> {
    check_cloud(params, cloud)?;
    let geo = SceneGeometry::build(&params.config, cloud)?;
    Ok(forward_traced(params, cloud, &geo)?.logits)
}

/// Argmax of the logits; ties go to the lowest class index.
pub fn predict(params: &NetworkParams, cloud: &PointCloud) -> Result<Vec<u32>> {
    let logits = forward(params, cloud)?;
    Ok(argmax_rows(&logits, params.config.n_classes))
}

pub fn argmax_rows(logits: &[f64], classes: usize) -> Vec<u32> {
    logits
        .chunks_exact(classes)
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best as u32
        })
        .collect()
}

/// Accumulates into `grad` the gradient of `sum <dlogits, logits>`.
pub fn backward(
    params: &NetworkParams,
    cloud: &PointCloud,
    geo: &SceneGeometry,
    trace: &ForwardTrace,
    dlogits: &[f64],
    grad: &mut NetworkParams,
) -> Result<()> {
    let cfg = &params.config;
    let (g0, g1) = (&geo.level0, &geo.level1);
    let n = cloud.len();
    let (c, din, de) = (cfg.n_classes, cfg.in_features, cfg.d_enc);
    let [w0, w1] = cfg.encoder_widths;
    let [d1, d0] = cfg.decoder_widths;
    if dlogits.len() != n * c {
        return Err(shape_err(format!("expected {n} x {c} logit gradients, got {}", dlogits.len())));
    }

    // classifier and devoxelization
    let mut db2 = vec![0.0; g0.len() * d0];
    let mut de_n = vec![0.0; n * de];
    let mut dfeat = vec![0.0; d0];
    for p in 0..n {
        dfeat.fill(0.0);
        params.classifier.backward_accumulate(
            &trace.point_features[p * d0..(p + 1) * d0],
            &dlogits[p * c..(p + 1) * c],
            &mut grad.classifier,
            Some(&mut dfeat),
        );
        let din_p = params.devox.backward_accumulate(&trace.devox[p], &dfeat, &mut grad.devox);
        let v = g0.member_to_voxel[p];
        for (a, b) in db2[v * d0..(v + 1) * d0].iter_mut().zip(&din_p[..d0]) {
            *a += b;
        }
        for (a, b) in de_n[p * de..(p + 1) * de].iter_mut().zip(&din_p[d0..]) {
            *a += b;
        }
    }

    // decoder block, unpool and merge
    let dm = block_backward(g0, &geo.table0, &params.dec0, &trace.lsa2, &trace.b2, &db2, &mut grad.dec0)?;
    let mut db0 = vec![0.0; g0.len() * w0];
    let mut db1 = vec![0.0; g1.len() * w1];
    let mut cat = vec![0.0; d1 + w0];
    let mut dcat = vec![0.0; d1 + w0];
    let mut dup = vec![0.0; d1];
    for k in 0..g0.len() {
        cat[..d1].copy_from_slice(&trace.up[k * d1..(k + 1) * d1]);
        cat[d1..].copy_from_slice(&trace.b0[k * w0..(k + 1) * w0]);
        dcat.fill(0.0);
        params.merge.backward_accumulate(&cat, &dm[k * d0..(k + 1) * d0], &mut grad.merge, Some(&mut dcat));
        for (a, b) in db0[k * w0..(k + 1) * w0].iter_mut().zip(&dcat[d1..]) {
            *a += b;
        }
        let parent = g1.member_to_voxel[k];
        dup.copy_from_slice(&dcat[..d1]);
        params.unpool.backward_accumulate(
            &trace.b1[parent * w1..(parent + 1) * w1],
            &dup,
            &mut grad.unpool,
            Some(&mut db1[parent * w1..(parent + 1) * w1]),
        );
    }

    // coarse block and pooling
    let dx1 = block_backward(g1, &geo.table1, &params.enc1, &trace.lsa1, &trace.b1, &db1, &mut grad.enc1)?;
    let mut dchild = vec![0.0; w1];
    for (i, children) in g1.reduce_order.iter().enumerate() {
        let inv = 1.0 / children.len() as f64;
        for (d, g) in dchild.iter_mut().zip(&dx1[i * w1..(i + 1) * w1]) {
            *d = g * inv;
        }
        for &k in children {
            params.pool.backward_accumulate(
                &trace.b0[k * w0..(k + 1) * w0],
                &dchild,
                &mut grad.pool,
                Some(&mut db0[k * w0..(k + 1) * w0]),
            );
        }
    }

    // fine block, stem and voxelization
    let dh0 = block_backward(g0, &geo.table0, &params.enc0, &trace.lsa0, &trace.b0, &db0, &mut grad.enc0)?;
    let wx = din + de;
    let mut dx = vec![0.0; wx];
    for i in 0..g0.len() {
        let h = &trace.h0[i * w0..(i + 1) * w0];
        let dpre: Vec<f64> = h.iter().zip(&dh0[i * w0..(i + 1) * w0]).map(|(y, g)| g * (1.0 - y * y)).collect();
        dx.fill(0.0);
        params.stem.backward_accumulate(&trace.x0[i * wx..(i + 1) * wx], &dpre, &mut grad.stem, Some(&mut dx));
        let inv = 1.0 / g0.members[i].len() as f64;
        for &p in &g0.members[i] {
            for (a, b) in de_n[p * de..(p + 1) * de].iter_mut().zip(&dx[din..]) {
                *a += b * inv;
            }
        }
    }
    for p in 0..n {
        params.centroid_encoder.backward_accumulate(
            &g0.member_offsets[p],
            trace.encoding.row(p),
            &de_n[p * de..(p + 1) * de],
            &mut grad.centroid_encoder,
        );
    }
    Ok(())
}

/// Mean cross-entropy over points and its gradient with respect to the
/// logits, scaled by `scale`.
pub fn cross_entropy(logits: &[f64], labels: &[u32], classes: usize, scale: f64) -> Result<(f64, Vec<f64>)> {
    let n = labels.len();
    if logits.len() != n * classes {
        return Err(shape_err("logits and labels disagree in length"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(shape_err(format!("label {bad} out of range for {classes} classes")));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (p, &label) in labels.iter().enumerate() {
        let row = &logits[p * classes..(p + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + z.ln();
        loss += lse - row[label as usize];
        for (k, &v) in row.iter().enumerate() {
            let prob = (v - lse).exp();
            grad[p * classes + k] = scale * (prob - f64::from(u8::from(k == label as usize))) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}
