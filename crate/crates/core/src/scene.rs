//! Deterministic synthetic labeled scenes.
//!
//! Each primitive samples its points from its own random stream, so adding
//! points to one primitive never perturbs another. Coordinates are snapped to
//! a grid of [`COORD_QUANTUM`] meters; translations by multiples of a
//! power-of-two voxel size are then exact in `f64`.

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::rng::Stream;

/// 2^-20 m, about one micrometer.
pub const COORD_QUANTUM: f64 = 1.0 / 1_048_576.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    /// Horizontal rectangle at height `z`.
    Plane { min: [f64; 2], max: [f64; 2], z: f64, class: u32 },
    /// Surface of an axis-aligned box.
    Box { center: [f64; 3], half: [f64; 3], class: u32 },
    /// Surface of a sphere.
    Sphere { center: [f64; 3], radius: f64, class: u32 },
}

impl Primitive {
    pub fn class(&self) -> u32 {
        match *self {
            Primitive::Plane { class, .. } | Primitive::Box { class, .. } | Primitive::Sphere { class, .. } => class,
        }
    }

    fn sample(&self, s: &mut Stream) -> [f64; 3] {
        match *self {
            Primitive::Plane { min, max, z, .. } => [s.range(min[0], max[0]), s.range(min[1], max[1]), z],
            Primitive::Box { center, half, .. } => {
                // pick a face with probability proportional to its area
                let areas = [half[1] * half[2], half[0] * half[2], half[0] * half[1]];
                let total = areas.iter().sum::<f64>();
                let mut pick = s.uniform() * total;
                let mut axis = 2;
                for (a, &area) in areas.iter().enumerate() {
                    if pick < area {
                        axis = a;
                        break;
                    }
                    pick -= area;
                }
                let sign = if s.uniform() < 0.5 { -1.0 } else { 1.0 };
                let mut p = [0.0; 3];
                for a in 0..3 {
                    p[a] = if a == axis { center[a] + sign * half[a] } else { center[a] + s.range(-half[a], half[a]) };
                }
                p
            }
            Primitive::Sphere { center, radius, .. } => {
                let d = s.unit_vector(3);
                [center[0] + radius * d[0], center[1] + radius * d[1], center[2] + radius * d[2]]
            }
        }
    }

    fn is_valid(&self) -> bool {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Primitive::Plane { min, max, z, .. } => {
                finite(min) && finite(max) && z.is_finite() && min[0] <= max[0] && min[1] <= max[1]
            }
            Primitive::Box { center, half, .. } => finite(center) && finite(half) && half.iter().all(|&h| h > 0.0),
            Primitive::Sphere { center, radius, .. } => finite(center) && radius.is_finite() && *radius > 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub n_points: usize,
    pub n_classes: u32,
    pub extent: [f64; 3],
    pub primitives: Vec<Primitive>,
    /// Standard deviation of the per-channel color noise.
    pub color_noise: f64,
    /// Standard deviation of the positional jitter, meters.
    pub position_noise: f64,
    pub seed: u64,
}

impl SceneSpec {
    /// A random room-like layout inside `extent`: a floor of class 0, then
    /// boxes and spheres cycling through the remaining classes.
    pub fn random_layout(n_points: usize, n_classes: u32, extent: [f64; 3], seed: u64) -> Self {
        let mut s = Stream::new(seed, u64::MAX);
        let mut primitives = vec![Primitive::Plane { min: [0.0, 0.0], max: [extent[0], extent[1]], z: 0.0, class: 0 }];
        let n_objects = (2 * n_classes.saturating_sub(1)).max(1);
        for o in 0..n_objects {
            let class = 1 + o % n_classes.saturating_sub(1).max(1);
            let size = s.range(0.15, 0.3) * extent[0].min(extent[1]).min(2.0 * extent[2]);
            let cx = s.range(size, (extent[0] - size).max(size));
            let cy = s.range(size, (extent[1] - size).max(size));
            if class % 2 == 1 {
                let half = [size * s.range(0.5, 1.0), size * s.range(0.5, 1.0), size * s.range(0.5, 1.0)];
                primitives.push(Primitive::Box { center: [cx, cy, half[2]], half, class });
            } else {
                let radius = 0.6 * size;
                let cz = radius + s.range(0.0, (extent[2] - 2.0 * radius).max(0.0));
                primitives.push(Primitive::Sphere { center: [cx, cy, cz], radius, class });
            }
        }
        Self { n_points, n_classes, extent, primitives, color_noise: 0.15, position_noise: 0.005, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Spec(format!("need at least 2 classes, got {}", self.n_classes)));
        }
        if self.extent.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(Error::Spec(format!("extent must be positive, got {:?}", self.extent)));
        }
        if self.primitives.is_empty() {
            return Err(Error::Spec("scene has no primitives".into()));
        }
        if self.n_points == 0 {
            return Err(Error::Spec("scene needs at least one point".into()));
        }
        for (i, p) in self.primitives.iter().enumerate() {
            if p.class() >= self.n_classes {
                return Err(Error::Spec(format!("primitive {i} has class {} >= {}", p.class(), self.n_classes)));
            }
            if !p.is_valid() {
                return Err(Error::Spec(format!("primitive {i} is degenerate")));
            }
        }
        if !(self.color_noise >= 0.0) || !(self.position_noise >= 0.0) {
            return Err(Error::Spec("noise levels must be non-negative".into()));
        }
        Ok(())
    }
}

/// Base RGB color of a class, spread around the hue circle.
pub fn class_color(class: u32, n_classes: u32) -> [f64; 3] {
    let h = class as f64 / n_classes as f64;
    let channel = |offset: f64| 0.5 + 0.4 * (std::f64::consts::TAU * (h + offset)).cos();
    [channel(0.0), channel(1.0 / 3.0), channel(2.0 / 3.0)]
}

fn snap(v: f64) -> f64 {
    (v / COORD_QUANTUM).round() * COORD_QUANTUM
}

/// Samples `n_points` split evenly across primitives (earlier primitives take
/// the remainder), then shuffles the point order with a dedicated stream.
pub fn generate_scene(spec: &SceneSpec) -> Result<PointCloud> {
    spec.validate()?;
    let n_prims = spec.primitives.len();
    let mut points = Vec::with_capacity(spec.n_points);
    let mut features = Vec::with_capacity(spec.n_points * 3);
    let mut labels = Vec::with_capacity(spec.n_points);
    for (i, prim) in spec.primitives.iter().enumerate() {
        let count = spec.n_points / n_prims + usize::from(i < spec.n_points % n_prims);
        let mut s = Stream::new(spec.seed, i as u64 + 1);
        let base = class_color(prim.class(), spec.n_classes);
        for _ in 0..count {
            let p = prim.sample(&mut s);
            let mut q = [0.0; 3];
            for a in 0..3 {
                q[a] = snap(p[a] + spec.position_noise * s.normal());
            }
            points.push(q);
            for c in base {
                features.push(c + spec.color_noise * s.normal());
            }
            labels.push(prim.class());
        }
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    Stream::new(spec.seed, 0).shuffle(&mut order);
    let cloud = PointCloud {
        points: order.iter().map(|&n| points[n]).collect(),
        features: order.iter().flat_map(|&n| features[3 * n..3 * n + 3].iter().copied()).collect(),
        feature_dim: 3,
        labels: Some(order.iter().map(|&n| labels[n]).collect()),
    };
    cloud.validate()?;
    Ok(cloud)
}
