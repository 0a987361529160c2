//! The per-frame preparation path shared by training, evaluation, prediction
//! and the voxelize command: segment -> project -> center of mass -> refined
//! reference point -> (augment) -> voxelize into the full grid -> crop to
//! the network input size.

use handvox_core::augment::{augment_cloud, augment_joints, AugmentParams};
use handvox_core::geometry::{
    center_of_mass, crop_cube, project_frame, refine_reference, segment_hand, ReferenceRefiner,
};
use handvox_core::ingest::{DepthFrame, JointSet};
use handvox_core::voxelize::{crop_grid, voxelize, CropMode, VoxelGrid};
use handvox_nn::{NnError, Tensor};

use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PitchMode {
    /// Pitch sized so the full grid spans the crop cube.
    Fit,
    /// Fixed pitch in mm (the documented 10 mm full-scene alternative).
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub band_mm: f64,
    pub cube_half_extent_mm: f64,
    pub grid_size: usize,
    pub crop_size: usize,
    pub pitch: PitchMode,
    pub refine_clamp_mm: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            band_mm: 400.0,
            cube_half_extent_mm: 150.0,
            grid_size: 96,
            crop_size: 88,
            pitch: PitchMode::Fit,
            refine_clamp_mm: 150.0,
        }
    }
}

impl PipelineConfig {
    pub fn pitch_mm(&self) -> f64 {
        match self.pitch {
            PitchMode::Fit => 2.0 * self.cube_half_extent_mm / self.grid_size as f64,
            PitchMode::Fixed(p) => p,
        }
    }
}

pub struct PreparedFrame {
    /// Cropped occupancy grid, `crop_size^3`.
    pub grid: VoxelGrid,
    /// Physical center of the cropped grid: predictions are regressed
    /// relative to this and shifted back to absolute coordinates.
    pub center_mm: [f64; 3],
    /// The refined reference point the full grid was centered on.
    pub ref_point: [f64; 3],
    /// Ground-truth joints relative to `center_mm`, when available
    /// (augmented with the same transform as the cloud).
    pub target_rel: Option<Vec<[f64; 3]>>,
    /// Absolute ground-truth joints after augmentation.
    pub truth_abs: Option<JointSet>,
}

pub fn prepare_frame(
    frame: &DepthFrame,
    joints: Option<&JointSet>,
    cfg: &PipelineConfig,
    refiner: &dyn ReferenceRefiner,
    aug: Option<&AugmentParams>,
    crop: CropMode,
) -> Result<PreparedFrame> {
    let seg = segment_hand(frame, cfg.band_mm)?;
    let cloud = project_frame(&seg);
    let com = center_of_mass(&cloud)?;
    let rp = refine_reference(&seg, com, refiner, cfg.refine_clamp_mm);
    let cube = crop_cube(&cloud, rp.position, cfg.cube_half_extent_mm);

    let pitch = cfg.pitch_mm();
    let size = cfg.grid_size;
    let origin = [
        rp.position[0] - size as f64 * pitch / 2.0,
        rp.position[1] - size as f64 * pitch / 2.0,
        rp.position[2] - size as f64 * pitch / 2.0,
    ];

    let (cloud_final, joints_final) = match aug {
        Some(params) => {
            // Augment points (and their labels) in the full grid's frame
            // before voxelization.
            let grid_frame = VoxelGrid::new_empty([size; 3], pitch, origin);
            (
                augment_cloud(&cube, params, &grid_frame),
                joints.map(|j| augment_joints(j, params, &grid_frame)),
            )
        }
        None => (cube, joints.cloned()),
    };

    let full = voxelize(&cloud_final, rp.position, size, pitch);
    let grid = crop_grid(&full, cfg.crop_size, crop)?;
    let center_mm = grid.center();
    let target_rel = joints_final.as_ref().map(|j| {
        j.joints()
            .iter()
            .map(|p| [p[0] - center_mm[0], p[1] - center_mm[1], p[2] - center_mm[2]])
            .collect()
    });

    Ok(PreparedFrame {
        grid,
        center_mm,
        ref_point: rp.position,
        target_rel,
        truth_abs: joints_final,
    })
}

/// Stacks grids into an (N, 1, D, D, D) occupancy tensor of 0.0/1.0.
pub fn grids_to_tensor(grids: &[&VoxelGrid]) -> Result<Tensor<f32>> {
    let first = grids
        .first()
        .ok_or_else(|| NnError::ShapeMismatch("empty grid batch".into()))?;
    let size = first.size();
    let mut data = Vec::with_capacity(grids.len() * size[0] * size[1] * size[2]);
    for g in grids {
        if g.size() != size {
            return Err(NnError::ShapeMismatch("mixed grid sizes in batch".into()).into());
        }
        data.extend(g.occupancy().iter().map(|v| *v as f32));
    }
    Ok(Tensor::new(
        vec![grids.len(), 1, size[0], size[1], size[2]],
        data,
    )
    .map_err(crate::Error::Nn)?)
}

/// Stacks relative joint targets into an (N, F*3) tensor.
pub fn targets_to_tensor(targets: &[&Vec<[f64; 3]>]) -> Result<Tensor<f32>> {
    let f = targets
        .first()
        .map(|t| t.len())
        .ok_or_else(|| NnError::ShapeMismatch("empty target batch".into()))?;
    let mut data = Vec::with_capacity(targets.len() * f * 3);
    for t in targets {
        if t.len() != f {
            return Err(NnError::ShapeMismatch("mixed joint counts in batch".into()).into());
        }
        for j in *t {
            data.extend(j.iter().map(|c| *c as f32));
        }
    }
    Ok(Tensor::new(vec![targets.len(), f * 3], data).map_err(crate::Error::Nn)?)
}
