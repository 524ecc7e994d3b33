//! Class-agnostic point-cloud instance segmentation by learned iterative
//! region growth.
//!
//! A dual-branch point-transformer network with local vector self-attention
//! decides, at every growth step, which neighborhood points join the region
//! and which inliers get ejected. The crate bundles the point-cloud
//! substrate (PLY I/O, kd-tree, PCA features), a from-scratch trainable
//! network, a training-data simulator, the iterative segmentation engine
//! with a classic region-growing baseline, and the clustering-metric
//! evaluation suite.

pub mod cloud;
pub mod error;
pub mod features;
pub mod index;
pub mod infer;
pub mod metrics;
pub mod net;
pub mod nn;
pub mod ply;
pub mod sim;
pub mod train;

pub use cloud::{FeatureCloud, RawCloud, FEATURE_DIM};
pub use error::{Error, Result};
pub use index::SpatialIndex;
