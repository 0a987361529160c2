//! Loading MSRA-format depth frames and ground-truth joints, plus a
//! deterministic synthetic frame generator for desk-scale tests.
//!
//! Per-frame binary layout (little-endian): six `i32` header fields
//! `width, height, left, top, right, bottom`, then
//! `f32[(right-left)*(bottom-top)]` depth values in mm (0 = no return).
//! `joint.txt` is ASCII: line 1 is the frame count, then one line per frame
//! with 63 reals (x y z for each of 21 joints).

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

/// Number of hand joints per MSRA frame.
pub const MSRA_JOINT_COUNT: usize = 21;

/// Default joint naming, in dataset order: wrist, then four joints per finger
/// from the knuckle outward. The dataset itself only fixes the order; the
/// names are configuration and can be overridden downstream.
pub const MSRA_JOINT_NAMES: [&str; MSRA_JOINT_COUNT] = [
    "wrist",
    "index_mcp",
    "index_pip",
    "index_dip",
    "index_tip",
    "middle_mcp",
    "middle_pip",
    "middle_dip",
    "middle_tip",
    "ring_mcp",
    "ring_pip",
    "ring_dip",
    "ring_tip",
    "little_mcp",
    "little_pip",
    "little_dip",
    "little_tip",
    "thumb_mcp",
    "thumb_pip",
    "thumb_dip",
    "thumb_tip",
];

/// Pinhole camera intrinsics in pixels. With `cp = cq = 0` projection reduces
/// to the plain `p/fp * depth` form; real datasets supply a principal point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fp: f64,
    pub fq: f64,
    pub cp: f64,
    pub cq: f64,
}

impl CameraIntrinsics {
    pub fn new(fp: f64, fq: f64) -> Self {
        Self {
            fp,
            fq,
            cp: 0.0,
            cq: 0.0,
        }
    }

    pub fn with_principal(fp: f64, fq: f64, cp: f64, cq: f64) -> Self {
        Self { fp, fq, cp, cq }
    }

    pub fn is_valid(&self) -> bool {
        self.fp > 0.0 && self.fq > 0.0 && self.fp.is_finite() && self.fq.is_finite()
    }
}

/// Bounding box of the stored depth region, in absolute image pixels.
/// Half-open on the right/bottom: pixels `[left, right) x [top, bottom)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub left: u32,
    pub top: u32,
    pub right: u32,
    pub bottom: u32,
}

impl BBox {
    pub fn width(&self) -> usize {
        (self.right - self.left) as usize
    }

    pub fn height(&self) -> usize {
        (self.bottom - self.top) as usize
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }
}

/// A single depth frame: the bbox-cropped depth map plus camera intrinsics
/// and provenance. Depth values are mm, 0 meaning no return.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub width: u32,
    pub height: u32,
    pub bbox: BBox,
    /// Row-major depth for the bbox region, length `bbox.area()`.
    pub depth: Vec<f32>,
    pub intrinsics: CameraIntrinsics,
    pub subject_id: String,
    pub gesture_id: String,
    pub frame_index: u32,
}

impl DepthFrame {
    /// Depth value at bbox-local coordinates (u across, v down).
    pub fn depth_at(&self, u: usize, v: usize) -> f32 {
        self.depth[v * self.bbox.width() + u]
    }

    /// Checks the structural invariants: depth length matches the bbox area,
    /// the bbox sits inside the image and all depth values are finite and
    /// non-negative.
    pub fn check_invariants(&self) -> bool {
        self.bbox.left <= self.bbox.right
            && self.bbox.top <= self.bbox.bottom
            && self.bbox.right <= self.width
            && self.bbox.bottom <= self.height
            && self.depth.len() == self.bbox.area()
            && self.depth.iter().all(|d| d.is_finite() && *d >= 0.0)
    }

    /// Smallest positive depth, if any pixel has a return.
    pub fn min_positive_depth(&self) -> Option<f32> {
        self.depth
            .iter()
            .copied()
            .filter(|d| *d > 0.0)
            .fold(None, |acc, d| match acc {
                None => Some(d),
                Some(m) => Some(m.min(d)),
            })
    }
}

/// F x 3 joint coordinates in mm, camera frame (positive z into the scene).
#[derive(Debug, Clone, PartialEq)]
pub struct JointSet {
    joints: Vec<[f64; 3]>,
}

impl JointSet {
    pub fn new(joints: Vec<[f64; 3]>) -> Self {
        Self { joints }
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[[f64; 3]] {
        &self.joints
    }

    pub fn joint(&self, i: usize) -> [f64; 3] {
        self.joints[i]
    }

    pub fn is_finite(&self) -> bool {
        self.joints
            .iter()
            .all(|j| j.iter().all(|c| c.is_finite()))
    }

    /// Arithmetic mean of the joints.
    pub fn centroid(&self) -> [f64; 3] {
        let n = self.joints.len().max(1) as f64;
        let mut c = [0.0; 3];
        for j in &self.joints {
            for a in 0..3 {
                c[a] += j[a];
            }
        }
        [c[0] / n, c[1] / n, c[2] / n]
    }
}

/// Sign normalization applied when reading/writing the dataset's joint files.
/// The MSRA release stores y up and z toward the viewer; internally we use a
/// right-handed frame with y down and positive z into the scene, matching the
/// depth values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JointConvention {
    pub flip_y: bool,
    pub flip_z: bool,
}

impl JointConvention {
    /// The MSRA release convention.
    pub const MSRA: Self = Self {
        flip_y: true,
        flip_z: true,
    };

    /// No sign changes; used for data written in the internal frame.
    pub const IDENTITY: Self = Self {
        flip_y: false,
        flip_z: false,
    };

    fn apply(&self, mut j: [f64; 3]) -> [f64; 3] {
        if self.flip_y {
            j[1] = -j[1];
        }
        if self.flip_z {
            j[2] = -j[2];
        }
        j
    }
}

fn read_i32_le(bytes: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(bytes[off..off + 4].try_into().unwrap())
}

/// Loads one MSRA-format depth frame. Subject/gesture ids and the frame index
/// are recovered from the path layout `<subject>/<gesture>/NNNNNN_depth.bin`
/// when present.
pub fn load_msra_frame(path: &Path, intrinsics: CameraIntrinsics) -> Result<DepthFrame> {
    let bytes = fs::read(path)?;
    parse_msra_frame(&bytes, path, intrinsics)
}

/// Parses the binary frame format from an in-memory buffer.
pub fn parse_msra_frame(
    bytes: &[u8],
    path: &Path,
    intrinsics: CameraIntrinsics,
) -> Result<DepthFrame> {
    if bytes.len() < 24 {
        return Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            expected: 6,
            found: bytes.len() / 4,
        });
    }
    let width = read_i32_le(bytes, 0);
    let height = read_i32_le(bytes, 4);
    let left = read_i32_le(bytes, 8);
    let top = read_i32_le(bytes, 12);
    let right = read_i32_le(bytes, 16);
    let bottom = read_i32_le(bytes, 20);

    let malformed = |reason: &str| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if width <= 0 || height <= 0 {
        return Err(malformed("non-positive image dimensions"));
    }
    if left < 0 || top < 0 || right < left || bottom < top {
        return Err(malformed("negative bbox extents"));
    }
    if right > width || bottom > height {
        return Err(malformed("bbox outside image"));
    }

    let bbox = BBox {
        left: left as u32,
        top: top as u32,
        right: right as u32,
        bottom: bottom as u32,
    };
    let expected = bbox.area();
    let payload = &bytes[24..];
    if payload.len() != expected * 4 {
        return Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            expected,
            found: payload.len() / 4,
        });
    }
    let mut depth = Vec::with_capacity(expected);
    for chunk in payload.chunks_exact(4) {
        let d = f32::from_le_bytes(chunk.try_into().unwrap());
        if !d.is_finite() || d < 0.0 {
            return Err(malformed("depth value out of range"));
        }
        depth.push(d);
    }

    let file_stem = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default();
    let frame_index = file_stem
        .chars()
        .take_while(|c| c.is_ascii_digit())
        .collect::<String>()
        .parse()
        .unwrap_or(0);
    let gesture_id = path
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|n| n.to_str())
        .unwrap_or_default()
        .to_string();
    let subject_id = path
        .parent()
        .and_then(|p| p.parent())
        .and_then(|p| p.file_name())
        .and_then(|n| n.to_str())
        .unwrap_or_default()
        .to_string();

    Ok(DepthFrame {
        width: width as u32,
        height: height as u32,
        bbox,
        depth,
        intrinsics,
        subject_id,
        gesture_id,
        frame_index,
    })
}

/// Serializes a frame back to the binary format. `load -> write -> load` is
/// the identity on header and depth values.
pub fn write_depth_bin(path: &Path, frame: &DepthFrame) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + frame.depth.len() * 4);
    for v in [
        frame.width as i32,
        frame.height as i32,
        frame.bbox.left as i32,
        frame.bbox.top as i32,
        frame.bbox.right as i32,
        frame.bbox.bottom as i32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for d in &frame.depth {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Loads a `joint.txt` ground-truth file using the MSRA sign convention.
pub fn load_msra_joints(path: &Path) -> Result<Vec<JointSet>> {
    load_msra_joints_with(path, JointConvention::MSRA)
}

/// Loads a `joint.txt` file, normalizing signs into the internal frame.
pub fn load_msra_joints_with(path: &Path, conv: JointConvention) -> Result<Vec<JointSet>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| Error::ParseError {
        path: path.to_path_buf(),
        line: 1,
        token: String::new(),
    })?;
    let declared: usize = first.trim().parse().map_err(|_| Error::ParseError {
        path: path.to_path_buf(),
        line: 1,
        token: first.trim().to_string(),
    })?;

    let mut sets = Vec::with_capacity(declared);
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let mut joints = Vec::with_capacity(MSRA_JOINT_COUNT);
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != MSRA_JOINT_COUNT * 3 {
            return Err(Error::ParseError {
                path: path.to_path_buf(),
                line: line_no,
                token: format!("expected 63 values, found {}", tokens.len()),
            });
        }
        for triple in tokens.chunks_exact(3) {
            let mut j = [0.0; 3];
            for (a, tok) in triple.iter().enumerate() {
                j[a] = tok.parse().map_err(|_| Error::ParseError {
                    path: path.to_path_buf(),
                    line: line_no,
                    token: tok.to_string(),
                })?;
            }
            joints.push(conv.apply(j));
        }
        sets.push(JointSet::new(joints));
    }
    if sets.len() != declared {
        return Err(Error::CountMismatch {
            path: path.to_path_buf(),
            declared,
            found: sets.len(),
        });
    }
    Ok(sets)
}

/// Writes joints in the `joint.txt` layout, converting from the internal
/// frame back to the given file convention (the flips are involutive, so
/// write -> load round-trips).
pub fn write_msra_joints(path: &Path, sets: &[JointSet], conv: JointConvention) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("{}\n", sets.len()));
    for set in sets {
        let mut fields = Vec::with_capacity(set.joint_count() * 3);
        for j in set.joints() {
            let fj = conv.apply(*j);
            for c in fj {
                // Shortest round-trip formatting reloads exactly.
                fields.push(format!("{c}"));
            }
        }
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

const SYNTH_WIDTH: u32 = 320;
const SYNTH_HEIGHT: u32 = 240;
const SYNTH_DEPTH_MIN: f64 = 405.0;
const SYNTH_DEPTH_MAX: f64 = 795.0;

struct FingerLayout {
    angle_deg: f64,
    len_range: (f64, f64),
    radius_range: (f64, f64),
}

// Finger order matches the joint list: index, middle, ring, little, thumb.
const FINGERS: [FingerLayout; 5] = [
    FingerLayout {
        angle_deg: -125.0,
        len_range: (28.0, 40.0),
        radius_range: (2.4, 3.2),
    },
    FingerLayout {
        angle_deg: -97.0,
        len_range: (32.0, 44.0),
        radius_range: (2.4, 3.2),
    },
    FingerLayout {
        angle_deg: -70.0,
        len_range: (28.0, 40.0),
        radius_range: (2.4, 3.2),
    },
    FingerLayout {
        angle_deg: -44.0,
        len_range: (22.0, 32.0),
        radius_range: (2.0, 2.8),
    },
    FingerLayout {
        angle_deg: -172.0,
        len_range: (18.0, 26.0),
        radius_range: (3.0, 4.0),
    },
];

fn paint_disk(buf: &mut [f32], cx: f64, cy: f64, radius: f64, depth: f64) {
    let w = SYNTH_WIDTH as i64;
    let h = SYNTH_HEIGHT as i64;
    let d = depth.clamp(SYNTH_DEPTH_MIN, SYNTH_DEPTH_MAX) as f32;
    let r2 = radius * radius;
    let u0 = (cx - radius).floor().max(0.0) as i64;
    let u1 = (cx + radius).ceil().min((w - 1) as f64) as i64;
    let v0 = (cy - radius).floor().max(0.0) as i64;
    let v1 = (cy + radius).ceil().min((h - 1) as f64) as i64;
    for v in v0..=v1 {
        for u in u0..=u1 {
            let du = u as f64 - cx;
            let dv = v as f64 - cy;
            if du * du + dv * dv <= r2 {
                let px = &mut buf[(v * w + u) as usize];
                if *px == 0.0 || d < *px {
                    *px = d;
                }
            }
        }
    }
}

/// Generates a deterministic hand-like depth frame (a palm blob plus five
/// finger protrusions, 400-800 mm deep) and a consistent 21-joint ground
/// truth placed on the pattern. Same seed, bit-identical output.
pub fn synth_frame(seed: u64, intrinsics: CameraIntrinsics) -> (DepthFrame, JointSet) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let cx: f64 = rng.random_range(140.0..180.0);
    let cy: f64 = rng.random_range(105.0..135.0);
    let z0: f64 = rng.random_range(450.0..650.0);
    let rx: f64 = rng.random_range(16.0..24.0);
    let ry: f64 = rng.random_range(20.0..28.0);
    let tilt_x: f64 = rng.random_range(-0.25..0.25);
    let tilt_y: f64 = rng.random_range(-0.25..0.25);

    let palm_depth = |u: f64, v: f64| -> f64 {
        (z0 + tilt_x * (u - cx) + tilt_y * (v - cy)).clamp(SYNTH_DEPTH_MIN, SYNTH_DEPTH_MAX)
    };

    let mut buf = vec![0.0f32; (SYNTH_WIDTH * SYNTH_HEIGHT) as usize];

    // Palm ellipse.
    let u0 = (cx - rx).floor() as i64;
    let u1 = (cx + rx).ceil() as i64;
    let v0 = (cy - ry).floor() as i64;
    let v1 = (cy + ry).ceil() as i64;
    for v in v0..=v1 {
        for u in u0..=u1 {
            let nx = (u as f64 - cx) / rx;
            let ny = (v as f64 - cy) / ry;
            if nx * nx + ny * ny <= 1.0 {
                buf[(v * SYNTH_WIDTH as i64 + u) as usize] = palm_depth(u as f64, v as f64) as f32;
            }
        }
    }

    // Fingers, each a chain of disks leaving the palm boundary.
    let mut joints: Vec<[f64; 3]> = Vec::with_capacity(MSRA_JOINT_COUNT);
    let wrist_px = (cx - 0.15 * rx, cy + 0.8 * ry);
    let wrist_d = palm_depth(wrist_px.0, wrist_px.1);
    joints.push(project_synth(wrist_px.0, wrist_px.1, wrist_d, &intrinsics));

    for layout in &FINGERS {
        let jitter: f64 = rng.random_range(-6.0..6.0);
        let angle = (layout.angle_deg + jitter) * PI / 180.0;
        let len: f64 = rng.random_range(layout.len_range.0..layout.len_range.1);
        let radius: f64 = rng.random_range(layout.radius_range.0..layout.radius_range.1);
        let dz: f64 = rng.random_range(-25.0..35.0);
        let (dir_u, dir_v) = (angle.cos(), angle.sin());
        let base = (cx + 0.92 * rx * dir_u, cy + 0.92 * ry * dir_v);

        let steps = (len * 2.0).ceil() as usize;
        for k in 0..=steps {
            let t = len * k as f64 / steps as f64;
            let pu = base.0 + t * dir_u;
            let pv = base.1 + t * dir_v;
            let d = palm_depth(base.0, base.1) + dz * t / len;
            paint_disk(&mut buf, pu, pv, radius, d);
        }
        for frac in [0.12, 0.45, 0.75, 1.0] {
            let t = len * frac;
            let pu = base.0 + t * dir_u;
            let pv = base.1 + t * dir_v;
            let d = (palm_depth(base.0, base.1) + dz * frac)
                .clamp(SYNTH_DEPTH_MIN, SYNTH_DEPTH_MAX);
            joints.push(project_synth(pu, pv, d, &intrinsics));
        }
    }

    // Tight bbox around the rendered pattern with a 2-pixel margin.
    let mut min_u = SYNTH_WIDTH as i64;
    let mut max_u = -1i64;
    let mut min_v = SYNTH_HEIGHT as i64;
    let mut max_v = -1i64;
    for v in 0..SYNTH_HEIGHT as i64 {
        for u in 0..SYNTH_WIDTH as i64 {
            if buf[(v * SYNTH_WIDTH as i64 + u) as usize] > 0.0 {
                min_u = min_u.min(u);
                max_u = max_u.max(u);
                min_v = min_v.min(v);
                max_v = max_v.max(v);
            }
        }
    }
    let bbox = BBox {
        left: (min_u - 2).max(0) as u32,
        top: (min_v - 2).max(0) as u32,
        right: (max_u + 3).min(SYNTH_WIDTH as i64) as u32,
        bottom: (max_v + 3).min(SYNTH_HEIGHT as i64) as u32,
    };
    let mut depth = Vec::with_capacity(bbox.area());
    for v in bbox.top..bbox.bottom {
        for u in bbox.left..bbox.right {
            depth.push(buf[(v * SYNTH_WIDTH + u) as usize]);
        }
    }

    let frame = DepthFrame {
        width: SYNTH_WIDTH,
        height: SYNTH_HEIGHT,
        bbox,
        depth,
        intrinsics,
        subject_id: String::new(),
        gesture_id: String::new(),
        frame_index: seed as u32,
    };
    (frame, JointSet::new(joints))
}

fn project_synth(p: f64, q: f64, depth: f64, intr: &CameraIntrinsics) -> [f64; 3] {
    [
        (p - intr.cp) / intr.fp * depth,
        (q - intr.cq) / intr.fq * depth,
        depth,
    ]
}
