//! Lightweight self-attention over voxel windows.
//!
//! The continuous pairwise offset `c_i - c_j` is split into two per-voxel
//! terms `c - v` and one discrete per-offset term `v_i - v_j`. The per-voxel
//! terms enter through `g_i = f_i + abs(c_i - v_i)`; the discrete term is a
//! learned token per window slot. Attention weights are the cosine between
//! the projected query `psi(g_i)` and the slot token; values are `phi(g_j)`.

mod backward;
mod forward;
mod memory;

pub use backward::{lsa_backward, lsa_backward_with, LsaGrads};
pub use forward::{lsa_forward, lsa_forward_traced, LsaTrace, COSINE_EPS};
pub use memory::{memory_ledger, MemoryLedger};

use serde::{Deserialize, Serialize};

use crate::encoding::AbsEncoderParams;
use crate::error::{shape_err, Result};
use crate::neighbor::WindowOffsets;
use crate::nn::{join, Affine, Parameters};
use crate::rng::Stream;

/// How the attention weight `a(g_i, g_j, slot)` is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttentionType {
    /// `cos(psi(g_i), rel[slot])`
    #[default]
    Cosine,
    /// `softmax_j(psi(g_i) . rel[slot])`
    Softmax,
    /// `cos(psi(g_i), xi(g_j) + rel[slot])`
    CosineWithKey,
}

impl AttentionType {
    pub fn code(self) -> f64 {
        match self {
            AttentionType::Cosine => 0.0,
            AttentionType::Softmax => 1.0,
            AttentionType::CosineWithKey => 2.0,
        }
    }

    pub fn from_code(code: f64) -> Option<Self> {
        match code as i64 {
            0 => Some(AttentionType::Cosine),
            1 => Some(AttentionType::Softmax),
            2 => Some(AttentionType::CosineWithKey),
            _ => None,
        }
    }
}

/// One learnable `D`-vector per window slot.
#[derive(Debug, Clone, PartialEq)]
pub struct RelEncodingTable {
    pub window: usize,
    pub dim: usize,
    /// Row-major `K x dim`, rows in window-offset order.
    pub rows: Vec<f64>,
}

impl RelEncodingTable {
    /// Unit-norm random rows.
    pub fn init(window: &WindowOffsets, dim: usize, s: &mut Stream) -> Self {
        let rows = (0..window.len()).flat_map(|_| s.unit_vector(dim)).collect();
        Self { window: window.k, dim, rows }
    }

    pub fn zeros(window: &WindowOffsets, dim: usize) -> Self {
        Self { window: window.k, dim, rows: vec![0.0; window.len() * dim] }
    }

    pub fn len(&self) -> usize {
        self.window * self.window * self.window
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, slot: usize) -> &[f64] {
        &self.rows[slot * self.dim..(slot + 1) * self.dim]
    }
}

impl Parameters for RelEncodingTable {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&join(prefix, "rows"), &[self.len(), self.dim], &self.rows);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&join(prefix, "rows"), &mut self.rows);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsaParams {
    /// Query projection.
    pub psi: Affine,
    /// Value projection.
    pub phi: Affine,
    /// Key projection; present iff `attention == CosineWithKey`.
    pub xi: Option<Affine>,
    pub rel: RelEncodingTable,
    pub abs: AbsEncoderParams,
    pub attention: AttentionType,
}

impl LsaParams {
    pub fn init(dim: usize, window: &WindowOffsets, attention: AttentionType, s: &mut Stream) -> Self {
        let psi = Affine::init(dim, dim, s);
        let phi = Affine::init(dim, dim, s);
        let xi = (attention == AttentionType::CosineWithKey).then(|| Affine::init(dim, dim, s));
        let rel = RelEncodingTable::init(window, dim, s);
        let abs = AbsEncoderParams::init(dim, s);
        Self { psi, phi, xi, rel, abs, attention }
    }

    pub fn dim(&self) -> usize {
        self.psi.out
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            psi: self.psi.zeros_like(),
            phi: self.phi.zeros_like(),
            xi: self.xi.as_ref().map(Affine::zeros_like),
            rel: RelEncodingTable { rows: vec![0.0; self.rel.rows.len()], ..self.rel.clone() },
            abs: self.abs.zeros_like(),
            attention: self.attention,
        }
    }

    pub fn validate(&self, window: &WindowOffsets) -> Result<()> {
        let d = self.dim();
        let square = |a: &Affine| a.inp == d && a.out == d;
        if !square(&self.psi) || !square(&self.phi) || self.xi.as_ref().is_some_and(|x| !square(x)) {
            return Err(shape_err(format!("projections must all be {d} x {d}")));
        }
        if (self.attention == AttentionType::CosineWithKey) != self.xi.is_some() {
            return Err(shape_err("key projection must be present exactly for cosine_with_key"));
        }
        if self.rel.dim != d || self.rel.window != window.k || self.rel.rows.len() != window.len() * d {
            return Err(shape_err(format!(
                "relative table is {}^3 x {}, window is {}^3 x {d}",
                self.rel.window, self.rel.dim, window.k
            )));
        }
        if self.abs.dim() != d {
            return Err(shape_err(format!("absolute encoder width {} != {d}", self.abs.dim())));
        }
        Ok(())
    }
}

impl Parameters for LsaParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.psi.visit(&join(prefix, "psi"), f);
        self.phi.visit(&join(prefix, "phi"), f);
        self.xi.visit(&join(prefix, "xi"), f);
        self.rel.visit(&join(prefix, "rel"), f);
        self.abs.visit(&join(prefix, "abs"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.psi.visit_mut(&join(prefix, "psi"), f);
        self.phi.visit_mut(&join(prefix, "phi"), f);
        self.xi.visit_mut(&join(prefix, "xi"), f);
        self.rel.visit_mut(&join(prefix, "rel"), f);
        self.abs.visit_mut(&join(prefix, "abs"), f);
    }
}

/// `|(c_i - c_j) - [(c_i - v_i) - (c_j - v_j) + (v_i - v_j)]|_inf`.
pub fn check_decomposition(ci: [f64; 3], vi: [f64; 3], cj: [f64; 3], vj: [f64; 3]) -> f64 {
    (0..3)
        .map(|a| ((ci[a] - cj[a]) - ((ci[a] - vi[a]) - (cj[a] - vj[a]) + (vi[a] - vj[a]))).abs())
        .fold(0.0, f64::max)
}

/// `g_i = f_i + abs(c_i - v_i)`, where `v_i` is the voxel's metric minimum
/// corner.
pub fn centroid_aware_feature(
    f: &[f64],
    centroid: [f64; 3],
    voxel_anchor: [f64; 3],
    abs: &AbsEncoderParams,
) -> Result<Vec<f64>> {
    if f.len() != abs.dim() {
        return Err(shape_err(format!("feature width {} != encoder width {}", f.len(), abs.dim())));
    }
    let off = [centroid[0] - voxel_anchor[0], centroid[1] - voxel_anchor[1], centroid[2] - voxel_anchor[2]];
    Ok(f.iter().zip(abs.encode(&off)).map(|(a, b)| a + b).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    #[test]
    fn decomposition_residual_is_tiny() {
        let mut s = Stream::new(71, 0);
        let mut worst: f64 = 0.0;
        for _ in 0..100_000 {
            let mut v = || [s.range(-100.0, 100.0), s.range(-100.0, 100.0), s.range(-100.0, 100.0)];
            let (ci, vi, cj, vj) = (v(), v(), v(), v());
            worst = worst.max(check_decomposition(ci, vi, cj, vj));
        }
        assert!(worst < 1e-9, "{worst}");
        let c = [1.5, -2.0, 0.25];
        let d = [0.5, 3.0, -1.0];
        assert_eq!(check_decomposition(c, c, d, d), 0.0);
    }

    #[test]
    fn centroid_aware_feature_cases() {
        let mut s = Stream::new(72, 0);
        let f = vec![0.5, -1.0, 2.0];
        // zero weights: adds act(bias)
        let mut abs = AbsEncoderParams::zeros(3);
        abs.affine.bias = vec![0.1, 0.2, -0.3];
        let g = centroid_aware_feature(&f, [0.3, 0.1, 0.2], [0.0; 3], &abs).unwrap();
        for d in 0..3 {
            assert_eq!(g[d], f[d] + abs.affine.bias[d].tanh());
        }
        // centroid at the anchor, zero bias, odd activation: identity
        let abs = AbsEncoderParams::init(3, &mut s);
        assert_eq!(centroid_aware_feature(&f, [1.0, 2.0, 3.0], [1.0, 2.0, 3.0], &abs).unwrap(), f);
        // direct recomputation
        let abs = AbsEncoderParams { activation: Activation::Tanh, ..AbsEncoderParams::init(3, &mut s) };
        let (c, v) = ([0.31, 0.72, 0.05], [0.25, 0.5, 0.0]);
        let g = centroid_aware_feature(&f, c, v, &abs).unwrap();
        let off = [c[0] - v[0], c[1] - v[1], c[2] - v[2]];
        for d in 0..3 {
            let w = &abs.affine.weight[3 * d..3 * d + 3];
            let pre = w[0] * off[0] + w[1] * off[1] + w[2] * off[2] + abs.affine.bias[d];
            assert!((g[d] - (f[d] + pre.tanh())).abs() < 1e-15);
        }
        assert!(centroid_aware_feature(&[1.0], c, v, &abs).is_err());
    }

    #[test]
    fn rel_rows_are_unit_norm() {
        let w = WindowOffsets::new(3).unwrap();
        let t = RelEncodingTable::init(&w, 8, &mut Stream::new(73, 0));
        for s in 0..t.len() {
            let n = crate::nn::norm(t.row(s));
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn validate_catches_mismatches() {
        let w = WindowOffsets::new(3).unwrap();
        let mut s = Stream::new(74, 0);
        let p = LsaParams::init(4, &w, AttentionType::Cosine, &mut s);
        p.validate(&w).unwrap();
        assert!(p.validate(&WindowOffsets::new(5).unwrap()).is_err());
        let mut q = p.clone();
        q.attention = AttentionType::CosineWithKey;
        assert!(q.validate(&w).is_err());
        let k = LsaParams::init(4, &w, AttentionType::CosineWithKey, &mut s);
        k.validate(&w).unwrap();
        assert!(k.xi.is_some());
    }
}
