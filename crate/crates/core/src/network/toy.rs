use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::scene::{generate_scene, SceneSpec};

use super::{accuracy, init_network, train_with, NetworkConfig, TrainReport};

/// Synthetic segmentation benchmark: random room layouts, training on one
/// set of scenes and scoring point accuracy on another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyTask {
    pub network: NetworkConfig,
    pub epochs: usize,
    pub lr: f64,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub points_per_scene: usize,
    /// Scene bounding box in metres.
    pub extent: [f64; 3],
    /// Training scene `i` uses seed `scene_seed + i`; test scene `i` uses
    /// `scene_seed + TEST_SEED_OFFSET + i`.
    pub scene_seed: u64,
}

pub const TEST_SEED_OFFSET: u64 = 1000;

impl Default for ToyTask {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            epochs: 200,
            lr: 0.05,
            train_scenes: 10,
            test_scenes: 5,
            points_per_scene: 2000,
            extent: [4.0, 4.0, 2.0],
            scene_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyOutcome {
    pub train: TrainReport,
    /// Mean over test scenes of the point accuracy.
    pub test_accuracy: f64,
}

impl ToyTask {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.train_scenes == 0 || self.points_per_scene == 0 {
            return Err(Error::Config("need at least one training scene and one point per scene".into()));
        }
        if self.network.in_features != 3 {
            return Err(Error::Config("synthetic scenes carry 3 color features".into()));
        }
        Ok(())
    }

    pub fn scene_spec(&self, seed: u64) -> SceneSpec {
        SceneSpec::random_layout(self.points_per_scene, self.network.n_classes as u32, self.extent, seed)
    }

    pub fn train_set(&self) -> Result<Vec<PointCloud>> {
        (0..self.train_scenes as u64).map(|i| generate_scene(&self.scene_spec(self.scene_seed + i))).collect()
    }

    pub fn test_set(&self) -> Result<Vec<PointCloud>> {
        (0..self.test_scenes as u64)
            .map(|i| generate_scene(&self.scene_spec(self.scene_seed + TEST_SEED_OFFSET + i)))
            .collect()
    }

    pub fn run(&self) -> Result<ToyOutcome> {
        self.run_with(|_, _| {})
    }

    /// Runs the task, calling `on_epoch(epoch, loss)` after each loss
    /// evaluation.
    pub fn run_with(&self, mut on_epoch: impl FnMut(usize, f64)) -> Result<ToyOutcome> {
        self.validate()?;
        let train_set = self.train_set()?;
        let test_set = self.test_set()?;
        let params = init_network(&self.network)?;
        let train = train_with(&params, &train_set, self.epochs, self.lr, |e, loss, _| {
            on_epoch(e, loss);
            true
        })?;
        let test_accuracy = if test_set.is_empty() {
            f64::NAN
        } else {
            let total: f64 = test_set.iter().map(|c| accuracy(&train.params, c)).sum::<Result<f64>>()?;
            total / test_set.len() as f64
        };
        Ok(ToyOutcome { train, test_accuracy })
    }
}

/// Trailing moving average of `values` over `window` entries.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 {
        return Vec::new();
    }
    values.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}
