//! Hand segmentation, pinhole projection into world coordinates, center of
//! mass and reference-point refinement.

use crate::error::{Error, Result};
use crate::ingest::{CameraIntrinsics, DepthFrame};

/// 3D points in mm, camera/world frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn translated(&self, t: [f64; 3]) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]])
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefSource {
    CenterOfMass,
    Refined,
}

/// The point the voxel grid is centered on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePoint {
    pub position: [f64; 3],
    pub source: RefSource,
}

/// Projects one pixel with its depth into world coordinates:
/// `((p-cp)/fp * d, (q-cq)/fq * d, d)`. With a zero principal point this is
/// the plain `p/fp * d` pinhole form. Total: depth 0 maps to the origin.
pub fn project_pixel_to_world(p: f64, q: f64, depth: f64, intr: &CameraIntrinsics) -> [f64; 3] {
    [
        (p - intr.cp) / intr.fp * depth,
        (q - intr.cq) / intr.fq * depth,
        depth,
    ]
}

/// Inverse of [`project_pixel_to_world`] for z > 0.
pub fn pixel_from_world(point: [f64; 3], intr: &CameraIntrinsics) -> (f64, f64) {
    (
        point[0] / point[2] * intr.fp + intr.cp,
        point[1] / point[2] * intr.fq + intr.cq,
    )
}

/// Projects every pixel with positive depth. Pixel coordinates are absolute
/// image coordinates, i.e. the bbox offset is applied.
pub fn project_frame(frame: &DepthFrame) -> PointCloud {
    let bw = frame.bbox.width();
    let bh = frame.bbox.height();
    let mut points = Vec::new();
    for v in 0..bh {
        for u in 0..bw {
            let d = frame.depth[v * bw + u] as f64;
            if d > 0.0 {
                let p = (frame.bbox.left as usize + u) as f64;
                let q = (frame.bbox.top as usize + v) as f64;
                points.push(project_pixel_to_world(p, q, d, &frame.intrinsics));
            }
        }
    }
    PointCloud::new(points)
}

/// Depth-thresholding segmentation: keeps the band `[z_min, z_min + band_mm]`
/// measured from the nearest surface and zeroes everything else. Idempotent.
pub fn segment_hand(frame: &DepthFrame, band_mm: f64) -> Result<DepthFrame> {
    let z_min = frame.min_positive_depth().ok_or(Error::EmptyFrame)? as f64;
    let hi = z_min + band_mm;
    let mut out = frame.clone();
    for d in &mut out.depth {
        let dv = *d as f64;
        if dv > 0.0 && dv > hi {
            *d = 0.0;
        }
    }
    Ok(out)
}

/// Arithmetic mean of the cloud.
pub fn center_of_mass(cloud: &PointCloud) -> Result<[f64; 3]> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let n = cloud.len() as f64;
    let mut c = [0.0; 3];
    for p in &cloud.points {
        for a in 0..3 {
            c[a] += p[a];
        }
    }
    Ok([c[0] / n, c[1] / n, c[2] / n])
}

/// Keeps points within `half_extent` of `center` on all three axes
/// (inclusive bounds).
pub fn crop_cube(cloud: &PointCloud, center: [f64; 3], half_extent: f64) -> PointCloud {
    PointCloud::new(
        cloud
            .points
            .iter()
            .copied()
            .filter(|p| {
                (0..3).all(|a| (p[a] - center[a]).abs() <= half_extent)
            })
            .collect(),
    )
}

/// Predicts a correction offset (mm) for an initial hand localization.
/// Implemented by the 2D localization network; [`NullRefiner`] stands in for
/// an untrained one.
pub trait ReferenceRefiner: Sync {
    fn predict_offset(&self, frame: &DepthFrame, com: [f64; 3]) -> [f64; 3];
}

/// Always predicts a zero offset.
pub struct NullRefiner;

impl ReferenceRefiner for NullRefiner {
    fn predict_offset(&self, _frame: &DepthFrame, _com: [f64; 3]) -> [f64; 3] {
        [0.0; 3]
    }
}

/// Refines the center of mass by the predicted offset, clamped to
/// `clamp_mm` so an untrained predictor cannot eject the crop off-hand.
pub fn refine_reference(
    frame: &DepthFrame,
    com: [f64; 3],
    refiner: &dyn ReferenceRefiner,
    clamp_mm: f64,
) -> ReferencePoint {
    let mut off = refiner.predict_offset(frame, com);
    let norm = (off[0] * off[0] + off[1] * off[1] + off[2] * off[2]).sqrt();
    if norm > clamp_mm && norm > 0.0 {
        let s = clamp_mm / norm;
        for c in &mut off {
            *c *= s;
        }
    }
    ReferencePoint {
        position: [com[0] + off[0], com[1] + off[1], com[2] + off[2]],
        source: RefSource::Refined,
    }
}

/// Extracts a square depth crop centered on the given pixel and normalizes it
/// to [-1, 1] over the segmentation band: the nearest surface maps to -1, the
/// far edge of the band to +1. No-return pixels and pixels outside the frame
/// map to +1.
pub fn extract_normalized_crop(
    frame: &DepthFrame,
    center_px: (f64, f64),
    size: usize,
    band_mm: f64,
) -> Vec<f32> {
    let z_min = frame.min_positive_depth().unwrap_or(0.0) as f64;
    let bw = frame.bbox.width() as i64;
    let bh = frame.bbox.height() as i64;
    let u_start = center_px.0.round() as i64 - size as i64 / 2;
    let v_start = center_px.1.round() as i64 - size as i64 / 2;
    let mut out = vec![1.0f32; size * size];
    for r in 0..size as i64 {
        for c in 0..size as i64 {
            let u = u_start + c - frame.bbox.left as i64;
            let v = v_start + r - frame.bbox.top as i64;
            if u >= 0 && u < bw && v >= 0 && v < bh {
                let d = frame.depth[(v * bw + u) as usize] as f64;
                if d > 0.0 {
                    let norm = (2.0 * (d - z_min) / band_mm - 1.0).clamp(-1.0, 1.0);
                    out[(r * size as i64 + c) as usize] = norm as f32;
                }
            }
        }
    }
    out
}
