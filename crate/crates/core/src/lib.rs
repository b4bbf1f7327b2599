//! Point-cloud machinery for voxel-hashed local self-attention: centroid-aware
//! voxelization, the lightweight self-attention layer with decomposed
//! positional encodings, neighbor-search algorithms with a complexity bench,
//! a small U-shaped segmentation network and the prediction-consistency
//! score.

pub mod cloud;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod hash;
pub mod lsa;
pub mod neighbor;
pub mod network;
pub mod nn;
pub mod rng;
pub mod scene;
pub mod transform;
pub mod voxel;

pub use error::{Error, Result};
