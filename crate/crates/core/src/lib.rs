//! Data pipeline for depth-based hand pose estimation: loading MSRA-format
//! depth frames, segmenting the hand, projecting pixels to world coordinates,
//! discretizing point clouds into binary voxel grids and applying 3D
//! augmentations.
//!
//! Everything here is pure and immutable after construction; per-frame
//! parallelism is safe throughout.

pub mod augment;
pub mod error;
pub mod geometry;
pub mod ingest;
pub mod voxelize;

pub use augment::AugmentParams;
pub use error::{Error, Result};
pub use geometry::{PointCloud, ReferencePoint, ReferenceRefiner};
pub use ingest::{CameraIntrinsics, DepthFrame, JointSet};
pub use voxelize::{CropMode, VoxelGrid};
