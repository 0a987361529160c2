//! 3D augmentations on voxel coordinates: uniform scaling, translation and
//! rotation in the XY plane, applied about the grid center. Grids are
//! resampled by inverse mapping with nearest-voxel occupancy; point clouds
//! and joints use the exact forward map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::geometry::PointCloud;
use crate::ingest::JointSet;
use crate::voxelize::VoxelGrid;

pub const SCALE_RANGE: (f64, f64) = (0.7, 1.2);
pub const TRANSLATION_RANGE: (f64, f64) = (-7.0, 7.0);
pub const ANGLE_RANGE_DEG: (f64, f64) = (-40.0, 40.0);

/// Augmentation parameters: scale factor, per-axis translation in voxels and
/// XY rotation angle in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub scale: f64,
    pub translation: [f64; 3],
    pub angle_deg: f64,
}

impl AugmentParams {
    pub const IDENTITY: Self = Self {
        scale: 1.0,
        translation: [0.0; 3],
        angle_deg: 0.0,
    };

    pub fn in_range(&self) -> bool {
        self.scale >= SCALE_RANGE.0
            && self.scale <= SCALE_RANGE.1
            && self
                .translation
                .iter()
                .all(|t| *t >= TRANSLATION_RANGE.0 && *t <= TRANSLATION_RANGE.1)
            && self.angle_deg >= ANGLE_RANGE_DEG.0
            && self.angle_deg <= ANGLE_RANGE_DEG.1
    }
}

/// Draws parameters uniformly from the three ranges; deterministic per seed.
pub fn sample_params(seed: u64) -> AugmentParams {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let scale = rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1);
    let translation = [
        rng.random_range(TRANSLATION_RANGE.0..=TRANSLATION_RANGE.1),
        rng.random_range(TRANSLATION_RANGE.0..=TRANSLATION_RANGE.1),
        rng.random_range(TRANSLATION_RANGE.0..=TRANSLATION_RANGE.1),
    ];
    let angle_deg = rng.random_range(ANGLE_RANGE_DEG.0..=ANGLE_RANGE_DEG.1);
    AugmentParams {
        scale,
        translation,
        angle_deg,
    }
}

/// Applies scale, then translation, then XY rotation to a center-relative
/// continuous voxel coordinate. Callers supply coordinates relative to the
/// rotation/scaling center (the grid center).
pub fn apply(offset: [f64; 3], params: &AugmentParams) -> [f64; 3] {
    let s = params.scale;
    let t = params.translation;
    let v = [
        offset[0] * s + t[0],
        offset[1] * s + t[1],
        offset[2] * s + t[2],
    ];
    let rad = params.angle_deg.to_radians();
    let (sin, cos) = rad.sin_cos();
    [cos * v[0] - sin * v[1], sin * v[0] + cos * v[1], v[2]]
}

/// Exact inverse of [`apply`].
pub fn apply_inverse(offset: [f64; 3], params: &AugmentParams) -> [f64; 3] {
    let rad = params.angle_deg.to_radians();
    let (sin, cos) = rad.sin_cos();
    let v = [cos * offset[0] + sin * offset[1], -sin * offset[0] + cos * offset[1], offset[2]];
    let s = params.scale;
    let t = params.translation;
    [(v[0] - t[0]) / s, (v[1] - t[1]) / s, (v[2] - t[2]) / s]
}

fn grid_center_voxels(grid: &VoxelGrid) -> [f64; 3] {
    let s = grid.size();
    [s[0] as f64 / 2.0, s[1] as f64 / 2.0, s[2] as f64 / 2.0]
}

fn mm_to_voxel(p: [f64; 3], grid: &VoxelGrid) -> [f64; 3] {
    let o = grid.origin();
    let pitch = grid.pitch();
    [
        (p[0] - o[0]) / pitch,
        (p[1] - o[1]) / pitch,
        (p[2] - o[2]) / pitch,
    ]
}

fn voxel_to_mm(v: [f64; 3], grid: &VoxelGrid) -> [f64; 3] {
    let o = grid.origin();
    let pitch = grid.pitch();
    [
        o[0] + v[0] * pitch,
        o[1] + v[1] * pitch,
        o[2] + v[2] * pitch,
    ]
}

/// Resamples a grid under the transform: every output voxel center is mapped
/// through the inverse transform and the nearest source voxel's occupancy is
/// taken; samples outside the grid are 0.
pub fn augment_grid(grid: &VoxelGrid, params: &AugmentParams) -> VoxelGrid {
    let size = grid.size();
    let center = grid_center_voxels(grid);
    let mut out = VoxelGrid::new_empty(size, grid.pitch(), grid.origin());
    for z in 0..size[2] {
        for y in 0..size[1] {
            for x in 0..size[0] {
                let rel = [
                    x as f64 + 0.5 - center[0],
                    y as f64 + 0.5 - center[1],
                    z as f64 + 0.5 - center[2],
                ];
                let src_rel = apply_inverse(rel, params);
                let sx = (src_rel[0] + center[0]).floor();
                let sy = (src_rel[1] + center[1]).floor();
                let sz = (src_rel[2] + center[2]).floor();
                let inside = |v: f64, s: usize| v >= 0.0 && v < s as f64;
                if inside(sx, size[0])
                    && inside(sy, size[1])
                    && inside(sz, size[2])
                    && grid.get(sx as usize, sy as usize, sz as usize)
                {
                    out.set(x, y, z, true);
                }
            }
        }
    }
    out
}

/// Transforms a point cloud (mm) by the exact forward map expressed in the
/// given grid's voxel frame.
pub fn augment_cloud(cloud: &PointCloud, params: &AugmentParams, grid_frame: &VoxelGrid) -> PointCloud {
    let center = grid_center_voxels(grid_frame);
    PointCloud::new(
        cloud
            .points
            .iter()
            .map(|p| {
                let v = mm_to_voxel(*p, grid_frame);
                let rel = [v[0] - center[0], v[1] - center[1], v[2] - center[2]];
                let out = apply(rel, params);
                voxel_to_mm(
                    [out[0] + center[0], out[1] + center[1], out[2] + center[2]],
                    grid_frame,
                )
            })
            .collect(),
    )
}

/// Transforms ground-truth joints with the same forward map as the cloud so
/// labels follow the augmented geometry. No resampling involved.
pub fn augment_joints(joints: &JointSet, params: &AugmentParams, grid_frame: &VoxelGrid) -> JointSet {
    let center = grid_center_voxels(grid_frame);
    JointSet::new(
        joints
            .joints()
            .iter()
            .map(|j| {
                let v = mm_to_voxel(*j, grid_frame);
                let rel = [v[0] - center[0], v[1] - center[1], v[2] - center[2]];
                let out = apply(rel, params);
                voxel_to_mm(
                    [out[0] + center[0], out[1] + center[1], out[2] + center[2]],
                    grid_frame,
                )
            })
            .collect(),
    )
}
