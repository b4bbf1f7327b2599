//! Rigid transforms and the 41-element consistency suite.

use std::f64::consts::PI;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];

const ORTHONORMAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: [f64; 3],
}

/// Which part of a transform is non-trivial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TransformKind {
    Identity,
    Translation,
    Rotation,
    Both,
}

const IDENTITY3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl RigidTransform {
    pub fn new(rotation: Mat3, translation: [f64; 3]) -> Result<Self> {
        let t = Self { rotation, translation };
        t.check()?;
        Ok(t)
    }

    pub fn identity() -> Self {
        Self { rotation: IDENTITY3, translation: [0.0; 3] }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Self { rotation: IDENTITY3, translation: t }
    }

    /// Rotation by `angle` radians about the +z (gravity) axis.
    pub fn rotation_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            rotation: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    /// Verifies `R^T R = I` and `det R = +1` to 1e-12.
    pub fn check(&self) -> Result<()> {
        let r = &self.rotation;
        if r.iter().flatten().chain(self.translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite transform entry".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > ORTHONORMAL_TOL {
                    return Err(Error::Domain(format!("rotation is not orthonormal at ({i},{j})")));
                }
            }
        }
        if (det3(r) - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::Domain("rotation determinant is not +1".into()));
        }
        Ok(())
    }

    pub fn apply_point(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let mut out = [0.0; 3];
        for (a, o) in out.iter_mut().enumerate() {
            *o = r[a][0] * p[0] + r[a][1] * p[1] + r[a][2] * p[2] + self.translation[a];
        }
        out
    }

    /// `self` after `inner`: `p -> self(inner(p))`.
    pub fn compose(&self, inner: &RigidTransform) -> Self {
        let mut rotation = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rotation[i][j] = (0..3).map(|k| self.rotation[i][k] * inner.rotation[k][j]).sum();
            }
        }
        Self { rotation, translation: self.apply_point(inner.translation) }
    }

    pub fn inverse(&self) -> Self {
        let mut rotation = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rotation[i][j] = self.rotation[j][i];
            }
        }
        let mut translation = [0.0; 3];
        for (i, t) in translation.iter_mut().enumerate() {
            *t = -(0..3).map(|k| rotation[i][k] * self.translation[k]).sum::<f64>();
        }
        Self { rotation, translation }
    }

    pub fn is_identity_rotation(&self) -> bool {
        self.rotation == IDENTITY3
    }

    pub fn kind(&self) -> TransformKind {
        match (self.is_identity_rotation(), self.translation == [0.0; 3]) {
            (true, true) => TransformKind::Identity,
            (true, false) => TransformKind::Translation,
            (false, true) => TransformKind::Rotation,
            (false, false) => TransformKind::Both,
        }
    }

    /// The same rotation applied about `center` instead of the origin.
    pub fn about(&self, center: [f64; 3]) -> Self {
        let to_origin = Self::translation([-center[0], -center[1], -center[2]]);
        let back = Self::translation(center);
        back.compose(&self.compose(&to_origin))
    }
}

fn det3(r: &Mat3) -> f64 {
    r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
}

/// Transforms coordinates; features and labels are copied unchanged.
pub fn apply_rigid(cloud: &PointCloud, t: &RigidTransform) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|&p| t.apply_point(p)).collect(),
        features: cloud.features.clone(),
        feature_dim: cloud.feature_dim,
        labels: cloud.labels.clone(),
    }
}

/// 26 translations from `{0, L/3, 2L/3}^3` minus the zero offset, then 15
/// rotations about +z at `k * pi/8` for `k = 1..=15`.
pub fn make_transform_suite(voxel_size: f64) -> Result<Vec<RigidTransform>> {
    if !(voxel_size > 0.0) || !voxel_size.is_finite() {
        return Err(Error::Domain(format!("voxel size must be positive, got {voxel_size}")));
    }
    let steps = [0.0, voxel_size / 3.0, 2.0 * voxel_size / 3.0];
    let mut suite = Vec::with_capacity(41);
    for (ix, &x) in steps.iter().enumerate() {
        for (iy, &y) in steps.iter().enumerate() {
            for (iz, &z) in steps.iter().enumerate() {
                if ix + iy + iz == 0 {
                    continue;
                }
                suite.push(RigidTransform::translation([x, y, z]));
            }
        }
    }
    for k in 1..=15 {
        suite.push(RigidTransform::rotation_z(k as f64 * 0.125 * PI));
    }
    Ok(suite)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn random_transform(s: &mut Stream) -> RigidTransform {
        let rz = RigidTransform::rotation_z(s.range(0.0, 6.0));
        // tilt about x to leave the z-only subgroup
        let (sn, c) = s.range(-1.0, 1.0).sin_cos();
        let rx = RigidTransform { rotation: [[1.0, 0.0, 0.0], [0.0, c, -sn], [0.0, sn, c]], translation: [0.0; 3] };
        let t = RigidTransform::translation([s.range(-5.0, 5.0), s.range(-5.0, 5.0), s.range(-5.0, 5.0)]);
        t.compose(&rx.compose(&rz))
    }

    #[test]
    fn identity_is_exact() {
        let cloud = PointCloud::new(vec![[0.1, -2.5, 3.75], [1e-9, 7.0, -0.3]], vec![1.0, 2.0], 1, Some(vec![0, 1]))
            .unwrap();
        assert_eq!(apply_rigid(&cloud, &RigidTransform::identity()), cloud);
    }

    #[test]
    fn translation_moves_origin() {
        let t = RigidTransform::translation([1.0, 0.0, 0.0]);
        assert_eq!(t.apply_point([0.0; 3]), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn inverse_recovers_input() {
        let mut s = Stream::new(11, 0);
        for _ in 0..100 {
            let t = random_transform(&mut s);
            t.check().unwrap();
            let round = t.inverse().compose(&t);
            let p = [s.range(-10.0, 10.0), s.range(-10.0, 10.0), s.range(-10.0, 10.0)];
            let q = round.apply_point(p);
            for a in 0..3 {
                assert!((p[a] - q[a]).abs() < 1e-12 * 20.0, "{p:?} vs {q:?}");
            }
        }
    }

    #[test]
    fn rejects_reflection_and_skew() {
        let refl = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]];
        assert!(RigidTransform::new(refl, [0.0; 3]).is_err());
        let skew = [[1.0, 1e-6, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(RigidTransform::new(skew, [0.0; 3]).is_err());
    }

    #[test]
    fn suite_partition_and_no_identity() {
        let suite = make_transform_suite(0.10).unwrap();
        assert_eq!(suite.len(), 41);
        let translations = suite.iter().filter(|t| t.kind() == TransformKind::Translation).count();
        let rotations = suite.iter().filter(|t| t.kind() == TransformKind::Rotation).count();
        assert_eq!((translations, rotations), (26, 15));
        assert!(suite.iter().all(|t| t.kind() != TransformKind::Identity));
        for t in &suite {
            t.check().unwrap();
        }
    }

    #[test]
    fn suite_rotation_traces() {
        let suite = make_transform_suite(0.05).unwrap();
        for (k, t) in suite[26..].iter().enumerate() {
            let theta = (k + 1) as f64 * 0.125 * PI;
            let trace = t.rotation[0][0] + t.rotation[1][1] + t.rotation[2][2];
            assert!((trace - (1.0 + 2.0 * theta.cos())).abs() < 1e-12);
            assert_eq!(t.rotation[2], [0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn suite_rejects_bad_voxel_size() {
        assert!(make_transform_suite(0.0).is_err());
        assert!(make_transform_suite(-1.0).is_err());
        assert!(make_transform_suite(f64::NAN).is_err());
    }

    #[test]
    fn rotation_about_center_fixes_center() {
        let c = [1.0, 2.0, 3.0];
        let t = RigidTransform::rotation_z(0.7).about(c);
        let q = t.apply_point(c);
        for a in 0..3 {
            assert!((q[a] - c[a]).abs() < 1e-12);
        }
    }
}
