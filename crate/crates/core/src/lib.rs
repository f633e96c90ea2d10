//! Lossless coding of voxelized point-cloud geometry.
//!
//! A cloud is split by a shallow octree into occupied 64³ blocks. Each block
//! is recursively partitioned by measured rate, and every coded sub-block has
//! its voxels arithmetic-coded with probabilities from a causal masked 3D
//! convolutional network, optionally conditioned on already decoded
//! neighbouring voxels.

pub mod error;
pub mod geometry;
pub mod nn;
pub mod model;
pub mod coder;
pub mod octree;
pub mod partition;
pub mod bitstream;
pub mod codec;
pub mod par;

pub use error::{Error, Result};
