use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{shape_err, Error, Result};
use crate::transform::{apply_rigid, RigidTransform, TransformKind};

use super::report::REPORT_SCHEMA_VERSION;

/// Scores restricted to one class of transform; `None` when the suite has
/// no transform of that class.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KindScores {
    pub identity: Option<f64>,
    pub translation: Option<f64>,
    pub rotation: Option<f64>,
    pub both: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CScoreReport {
    pub schema_version: u32,
    /// Mean over clouds of the per-cloud score.
    pub overall: f64,
    /// Fraction of (point, transform) pairs with unchanged prediction.
    pub per_cloud: Vec<f64>,
    pub per_kind: KindScores,
    pub n_transforms: usize,
    /// Per cloud, per point: fraction of transforms that keep its class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_point: Option<Vec<Vec<f64>>>,
}

fn kind_slot(kind: TransformKind) -> usize {
    match kind {
        TransformKind::Identity => 0,
        TransformKind::Translation => 1,
        TransformKind::Rotation => 2,
        TransformKind::Both => 3,
    }
}

/// Agreement between predictions on each cloud and on its rigidly
/// transformed copies. Rotations act about the cloud's bounding-box center;
/// the transform class is that of the transform as given.
pub fn cscore(
    mut model: impl FnMut(&PointCloud) -> Result<Vec<u32>>,
    clouds: &[PointCloud],
    transforms: &[RigidTransform],
    per_point: bool,
) -> Result<CScoreReport> {
    if transforms.is_empty() {
        return Err(Error::EmptyTransformSet);
    }
    let kinds: Vec<usize> = transforms.iter().map(|t| kind_slot(t.kind())).collect();
    let mut kind_counts = [0usize; 4];
    for &k in &kinds {
        kind_counts[k] += 1;
    }
    // per kind: sum over clouds of that cloud's score on the kind
    let mut kind_sums = [0.0f64; 4];
    let mut per_cloud = Vec::with_capacity(clouds.len());
    let mut points_out = per_point.then(Vec::new);

    for cloud in clouds {
        let n = cloud.len();
        let base = model(cloud)?;
        if base.len() != n {
            return Err(shape_err(format!("model returned {} labels for {n} points", base.len())));
        }
        let center = match cloud.bounds() {
            Some((lo, hi)) => [0, 1, 2].map(|a| 0.5 * (lo[a] + hi[a])),
            None => [0.0; 3],
        };
        let mut point_hits = vec![0usize; n];
        let mut kind_hits = [0usize; 4];
        for (t, &kind) in transforms.iter().zip(&kinds) {
            let moved = apply_rigid(cloud, &t.about(center));
            let pred = model(&moved)?;
            if pred.len() != n {
                return Err(shape_err(format!("model returned {} labels for {n} points", pred.len())));
            }
            for (p, (a, b)) in base.iter().zip(&pred).enumerate() {
                if a == b {
                    point_hits[p] += 1;
                    kind_hits[kind] += 1;
                }
            }
        }
        let total: usize = kind_hits.iter().sum();
        let pairs = n * transforms.len();
        per_cloud.push(if pairs == 0 { 1.0 } else { total as f64 / pairs as f64 });
        for k in 0..4 {
            if kind_counts[k] > 0 {
                let pairs = n * kind_counts[k];
                kind_sums[k] += if pairs == 0 { 1.0 } else { kind_hits[k] as f64 / pairs as f64 };
            }
        }
        if let Some(out) = points_out.as_mut() {
            out.push(point_hits.iter().map(|&h| h as f64 / transforms.len() as f64).collect());
        }
    }

    let clouds_n = clouds.len();
    let mean = |sum: f64| if clouds_n == 0 { 1.0 } else { sum / clouds_n as f64 };
    let kind_score = |k: usize| (kind_counts[k] > 0).then(|| mean(kind_sums[k]));
    Ok(CScoreReport {
        schema_version: REPORT_SCHEMA_VERSION,
        overall: mean(per_cloud.iter().sum()),
        per_cloud,
        per_kind: KindScores {
            identity: kind_score(0),
            translation: kind_score(1),
            rotation: kind_score(2),
            both: kind_score(3),
        },
        n_transforms: transforms.len(),
        per_point: points_out,
    })
}
