//! Binary voxel occupancy grids: discretization of point clouds around a
//! reference point and window cropping to the network input size.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Dense binary occupancy grid with a physical placement: `origin` is the mm
/// position of the (0,0,0) voxel corner and `pitch` the edge length of one
/// voxel. Storage is one byte per voxel (0/1), x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    size: [usize; 3],
    pitch: f64,
    origin: [f64; 3],
    occupancy: Vec<u8>,
}

impl VoxelGrid {
    pub fn new_empty(size: [usize; 3], pitch: f64, origin: [f64; 3]) -> Self {
        assert!(pitch > 0.0, "voxel pitch must be positive");
        let len = size[0] * size[1] * size[2];
        Self {
            size,
            pitch,
            origin,
            occupancy: vec![0; len],
        }
    }

    pub fn size(&self) -> [usize; 3] {
        self.size
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    /// Physical center of the grid in mm.
    pub fn center(&self) -> [f64; 3] {
        [
            self.origin[0] + self.size[0] as f64 * self.pitch / 2.0,
            self.origin[1] + self.size[1] as f64 * self.pitch / 2.0,
            self.origin[2] + self.size[2] as f64 * self.pitch / 2.0,
        ]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.size[0] * (y + self.size[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.occupancy[self.index(x, y, z)] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.index(x, y, z);
        self.occupancy[i] = value as u8;
    }

    pub fn occupancy(&self) -> &[u8] {
        &self.occupancy
    }

    /// Occupancy as 0.0/1.0 floats for the conv input path.
    pub fn to_f32(&self) -> Vec<f32> {
        self.occupancy.iter().map(|v| *v as f32).collect()
    }
}

/// Discretizes a cloud into a cubic grid of `size` voxels per axis centered
/// on `center`. A point maps to `floor((p - origin) / pitch)`; indices
/// outside the grid are discarded.
pub fn voxelize(cloud: &PointCloud, center: [f64; 3], size: usize, pitch: f64) -> VoxelGrid {
    let origin = [
        center[0] - size as f64 * pitch / 2.0,
        center[1] - size as f64 * pitch / 2.0,
        center[2] - size as f64 * pitch / 2.0,
    ];
    let mut grid = VoxelGrid::new_empty([size; 3], pitch, origin);
    for p in &cloud.points {
        let ix = ((p[0] - origin[0]) / pitch).floor();
        let iy = ((p[1] - origin[1]) / pitch).floor();
        let iz = ((p[2] - origin[2]) / pitch).floor();
        let inside = |v: f64| v >= 0.0 && v < size as f64;
        if inside(ix) && inside(iy) && inside(iz) {
            grid.set(ix as usize, iy as usize, iz as usize, true);
        }
    }
    grid
}

/// How the crop window is placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropMode {
    /// Centered window (evaluation).
    Center,
    /// Per-axis offsets drawn uniformly from the valid range (training).
    RandomOffset(u64),
}

/// Extracts a contiguous cubic sub-grid of `target` voxels per axis.
pub fn crop_grid(grid: &VoxelGrid, target: usize, mode: CropMode) -> Result<VoxelGrid> {
    let size = grid.size();
    let offsets = match mode {
        CropMode::Center => {
            let mut o = [0usize; 3];
            for a in 0..3 {
                if target > size[a] {
                    return Err(Error::TargetTooLarge { target, size });
                }
                o[a] = (size[a] - target) / 2;
            }
            o
        }
        CropMode::RandomOffset(seed) => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut o = [0usize; 3];
            for a in 0..3 {
                if target > size[a] {
                    return Err(Error::TargetTooLarge { target, size });
                }
                o[a] = rng.random_range(0..=size[a] - target);
            }
            o
        }
    };
    crop_grid_at(grid, [target; 3], offsets)
}

/// Crop with explicit per-axis offsets; `crop_grid` delegates here.
pub fn crop_grid_at(grid: &VoxelGrid, target: [usize; 3], offsets: [usize; 3]) -> Result<VoxelGrid> {
    let size = grid.size();
    for a in 0..3 {
        if offsets[a] + target[a] > size[a] {
            return Err(Error::TargetTooLarge {
                target: target[a],
                size,
            });
        }
    }
    let origin = [
        grid.origin()[0] + offsets[0] as f64 * grid.pitch(),
        grid.origin()[1] + offsets[1] as f64 * grid.pitch(),
        grid.origin()[2] + offsets[2] as f64 * grid.pitch(),
    ];
    let mut out = VoxelGrid::new_empty(target, grid.pitch(), origin);
    for z in 0..target[2] {
        for y in 0..target[1] {
            let src_base = grid.index(offsets[0], y + offsets[1], z + offsets[2]);
            let dst_base = out.index(0, y, z);
            out.occupancy[dst_base..dst_base + target[0]]
                .copy_from_slice(&grid.occupancy[src_base..src_base + target[0]]);
        }
    }
    Ok(out)
}

/// Number of occupied voxels.
pub fn occupancy_count(grid: &VoxelGrid) -> usize {
    grid.occupancy.iter().filter(|v| **v != 0).count()
}

/// Writes the debug dump format: little-endian header of 3 x i32 size,
/// f64 pitch, 3 x f64 origin, then the occupancy bit-packed 8 voxels per
/// byte in index order, LSB first.
pub fn write_grid_dump<W: Write>(mut w: W, grid: &VoxelGrid) -> Result<()> {
    for s in grid.size {
        w.write_all(&(s as i32).to_le_bytes())?;
    }
    w.write_all(&grid.pitch.to_le_bytes())?;
    for o in grid.origin {
        w.write_all(&o.to_le_bytes())?;
    }
    let mut packed = vec![0u8; grid.occupancy.len().div_ceil(8)];
    for (i, v) in grid.occupancy.iter().enumerate() {
        if *v != 0 {
            packed[i / 8] |= 1 << (i % 8);
        }
    }
    w.write_all(&packed)?;
    Ok(())
}

/// Reads the dump format written by [`write_grid_dump`].
pub fn read_grid_dump<R: Read>(mut r: R) -> Result<VoxelGrid> {
    let mut i32buf = [0u8; 4];
    let mut f64buf = [0u8; 8];
    let mut size = [0usize; 3];
    for s in &mut size {
        r.read_exact(&mut i32buf)?;
        let v = i32::from_le_bytes(i32buf);
        if v <= 0 {
            return Err(Error::MalformedGridDump("non-positive size".into()));
        }
        *s = v as usize;
    }
    r.read_exact(&mut f64buf)?;
    let pitch = f64::from_le_bytes(f64buf);
    if !(pitch > 0.0) {
        return Err(Error::MalformedGridDump("non-positive pitch".into()));
    }
    let mut origin = [0.0f64; 3];
    for o in &mut origin {
        r.read_exact(&mut f64buf)?;
        *o = f64::from_le_bytes(f64buf);
    }
    let len = size[0] * size[1] * size[2];
    let mut packed = vec![0u8; len.div_ceil(8)];
    r.read_exact(&mut packed)?;
    let mut grid = VoxelGrid::new_empty(size, pitch, origin);
    for i in 0..len {
        grid.occupancy[i] = (packed[i / 8] >> (i % 8)) & 1;
    }
    Ok(grid)
}
