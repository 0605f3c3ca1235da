//! Point cloud denoising with a learned, feature-preserving displacement
//! regressor.
//!
//! Each noisy point is filtered independently: its neighborhood is
//! normalized into a canonical principal frame, an encoder-decoder network
//! predicts a displacement toward the underlying surface, and the
//! displacement is mapped back to world space.

// `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cloud;
pub mod error;
pub mod index;
pub mod inference;
pub mod loss;
pub mod mesh;
pub mod metrics;
pub mod nn;
pub mod patch;
pub mod rng;
pub mod synth;

pub use cloud::{bbox_diagonal, load_cloud, save_cloud, PointCloud, Vec3};
pub use error::{Error, Result};
pub use index::NeighborIndex;
pub use mesh::{load_off, point_triangle_distance, save_off, TriangleMesh};
