//! The region-growth network: vector self-attention, transformer blocks,
//! the dual-branch model, and fixed-size set resampling.

pub mod attention;
pub mod block;
pub mod network;
pub mod resample;

pub use attention::{attention_neighbors, neighbor_diffs, PointTransformerLayer};
pub use block::TransformerBlock;
pub use network::{NetworkConfig, RegionNetwork};
pub use resample::{aggregate_masks, resample_set};
