//! Property tests for the data pipeline invariants.

use handvox_core::augment::{self, AugmentParams};
use handvox_core::geometry::{
    center_of_mass, crop_cube, pixel_from_world, project_frame, segment_hand,
};
use handvox_core::ingest::{synth_frame, CameraIntrinsics};
use handvox_core::voxelize::{crop_grid, crop_grid_at, occupancy_count, voxelize, CropMode};
use handvox_core::PointCloud;
use proptest::prelude::*;

fn intr() -> CameraIntrinsics {
    CameraIntrinsics::with_principal(241.42, 241.42, 160.0, 120.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Projecting a frame and inverting the projection recovers the original
    /// pixel coordinates for every positive-depth pixel.
    #[test]
    fn projection_round_trip(seed in 0u64..500) {
        let (frame, _) = synth_frame(seed, intr());
        let cloud = project_frame(&frame);
        let bw = frame.bbox.width();
        let mut k = 0;
        for v in 0..frame.bbox.height() {
            for u in 0..bw {
                let d = frame.depth[v * bw + u];
                if d > 0.0 {
                    let (p, q) = pixel_from_world(cloud.points[k], &frame.intrinsics);
                    let want_p = (frame.bbox.left as usize + u) as f64;
                    let want_q = (frame.bbox.top as usize + v) as f64;
                    prop_assert!((p - want_p).abs() < 1e-6);
                    prop_assert!((q - want_q).abs() < 1e-6);
                    k += 1;
                }
            }
        }
    }

    #[test]
    fn segmentation_is_idempotent(seed in 0u64..500, band in 50.0f64..600.0) {
        let (frame, _) = synth_frame(seed, intr());
        let once = segment_hand(&frame, band).unwrap();
        let twice = segment_hand(&once, band).unwrap();
        prop_assert_eq!(once.depth, twice.depth);
    }

    #[test]
    fn com_is_translation_equivariant(
        seed in 0u64..200,
        tx in -300.0f64..300.0,
        ty in -300.0f64..300.0,
        tz in -300.0f64..300.0,
    ) {
        let (frame, _) = synth_frame(seed, intr());
        let cloud = project_frame(&frame);
        let com = center_of_mass(&cloud).unwrap();
        let shifted = center_of_mass(&cloud.translated([tx, ty, tz])).unwrap();
        let scale = com.iter().map(|c| c.abs()).fold(1.0, f64::max);
        prop_assert!((shifted[0] - (com[0] + tx)).abs() < 1e-8 * scale.max(tx.abs()));
        prop_assert!((shifted[1] - (com[1] + ty)).abs() < 1e-8 * scale.max(ty.abs()));
        prop_assert!((shifted[2] - (com[2] + tz)).abs() < 1e-8 * scale.max(tz.abs()));
    }

    #[test]
    fn crop_cube_output_is_subset(seed in 0u64..200, half in 10.0f64..200.0) {
        let (frame, _) = synth_frame(seed, intr());
        let cloud = project_frame(&frame);
        let com = center_of_mass(&cloud).unwrap();
        let cropped = crop_cube(&cloud, com, half);
        for p in &cropped.points {
            prop_assert!(cloud.points.contains(p));
        }
    }

    /// Adding a constant offset to every point and the center produces an
    /// identical occupancy pattern. Points are kept away from voxel
    /// boundaries so floating-point rounding cannot flip an index.
    #[test]
    fn voxelization_is_translation_consistent(
        case in 0u64..200,
        tx in -500.0f64..500.0,
        ty in -500.0f64..500.0,
        tz in -500.0f64..500.0,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(case);
        let size = 16usize;
        let pitch = 5.0;
        let center = [30.0, -20.0, 550.0];
        let origin = |c: f64| c - size as f64 * pitch / 2.0;
        let points: Vec<[f64;3]> = (0..100).map(|_| {
            // Compose each coordinate as (index + interior fraction) * pitch.
            let f = |o: f64, rng: &mut rand_chacha::ChaCha20Rng| {
                let idx = rng.random_range(-3i32..(size as i32 + 3)) as f64;
                let frac = rng.random_range(0.2..0.8);
                o + (idx + frac) * pitch
            };
            [f(origin(center[0]), &mut rng), f(origin(center[1]), &mut rng), f(origin(center[2]), &mut rng)]
        }).collect();
        let base = voxelize(&PointCloud::new(points.clone()), center, size, pitch);
        let moved: Vec<[f64;3]> = points.iter().map(|p| [p[0]+tx, p[1]+ty, p[2]+tz]).collect();
        let shifted = voxelize(
            &PointCloud::new(moved),
            [center[0]+tx, center[1]+ty, center[2]+tz],
            size,
            pitch,
        );
        prop_assert_eq!(base.occupancy(), shifted.occupancy());
    }

    /// Adding points never clears a voxel.
    #[test]
    fn occupancy_is_monotone_in_points(case in 0u64..200) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(case);
        let center = [0.0, 0.0, 600.0];
        let gen = |rng: &mut rand_chacha::ChaCha20Rng, n: usize| -> Vec<[f64;3]> {
            (0..n).map(|_| [
                center[0] + rng.random_range(-60.0..60.0),
                center[1] + rng.random_range(-60.0..60.0),
                center[2] + rng.random_range(-60.0..60.0),
            ]).collect()
        };
        let small = gen(&mut rng, 40);
        let mut large = small.clone();
        large.extend(gen(&mut rng, 40));
        let g_small = voxelize(&PointCloud::new(small), center, 24, 6.0);
        let g_large = voxelize(&PointCloud::new(large), center, 24, 6.0);
        for (a, b) in g_small.occupancy().iter().zip(g_large.occupancy()) {
            prop_assert!(*a <= *b);
        }
        prop_assert!(occupancy_count(&g_large) >= occupancy_count(&g_small));
    }

    /// At 10 mm pitch two points separated by more than 10*sqrt(3) mm can
    /// never land in the same voxel.
    #[test]
    fn distant_points_never_share_a_voxel(case in 0u64..300) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(case);
        let center = [0.0, 0.0, 500.0];
        let a = [
            rng.random_range(-200.0..200.0),
            rng.random_range(-200.0..200.0),
            center[2] + rng.random_range(-200.0..200.0),
        ];
        // Direction scaled to a length just above the diagonal bound.
        let dir: [f64; 3] = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let norm = (dir[0]*dir[0] + dir[1]*dir[1] + dir[2]*dir[2]).sqrt().max(1e-6);
        let dist = 10.0 * 3.0f64.sqrt() + rng.random_range(0.001..100.0);
        let b = [
            a[0] + dir[0] / norm * dist,
            a[1] + dir[1] / norm * dist,
            a[2] + dir[2] / norm * dist,
        ];
        let grid = voxelize(&PointCloud::new(vec![a, b]), center, 96, 10.0);
        // Either one fell outside, or they occupy two distinct voxels.
        let in_range = |p: &[f64;3]| {
            (0..3).all(|i| {
                let rel = p[i] - (center[i] - 480.0);
                rel >= 0.0 && rel < 960.0
            })
        };
        let exactly_one_outside = in_range(&a) != in_range(&b);
        prop_assert!(occupancy_count(&grid) != 1 || exactly_one_outside);
    }

    /// Double-crop composes to a single crop at the summed offsets.
    #[test]
    fn double_crop_composes(case in 0u64..100) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(case);
        let mut grid = handvox_core::VoxelGrid::new_empty([24; 3], 2.0, [0.0; 3]);
        for _ in 0..100 {
            grid.set(
                rng.random_range(0..24),
                rng.random_range(0..24),
                rng.random_range(0..24),
                true,
            );
        }
        let o1 = [
            rng.random_range(0..=6usize),
            rng.random_range(0..=6usize),
            rng.random_range(0..=6usize),
        ];
        let o2 = [
            rng.random_range(0..=4usize),
            rng.random_range(0..=4usize),
            rng.random_range(0..=4usize),
        ];
        let step1 = crop_grid_at(&grid, [18; 3], o1).unwrap();
        let step2 = crop_grid_at(&step1, [14; 3], o2).unwrap();
        let composed = crop_grid_at(
            &grid,
            [14; 3],
            [o1[0] + o2[0], o1[1] + o2[1], o1[2] + o2[2]],
        )
        .unwrap();
        prop_assert_eq!(step2, composed);
    }

    /// Rigid motions (s = 1, t = 0) preserve all pairwise distances.
    #[test]
    fn rigid_augment_preserves_distances(case in 0u64..200, angle in -40.0f64..40.0) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(case);
        let params = AugmentParams { scale: 1.0, translation: [0.0; 3], angle_deg: angle };
        let pts: Vec<[f64;3]> = (0..8).map(|_| [
            rng.random_range(-20.0..20.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(-20.0..20.0),
        ]).collect();
        let moved: Vec<[f64;3]> = pts.iter().map(|p| augment::apply(*p, &params)).collect();
        for i in 0..pts.len() {
            for j in (i+1)..pts.len() {
                let d0 = dist(pts[i], pts[j]);
                let d1 = dist(moved[i], moved[j]);
                prop_assert!((d1 - d0).abs() <= 1e-9 * d0.max(1.0));
            }
        }
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[test]
fn crop_identity_mode_round_trip() {
    let (frame, _) = synth_frame(3, intr());
    let cloud = project_frame(&frame);
    let com = center_of_mass(&cloud).unwrap();
    let grid = voxelize(&cloud, com, 96, 3.125);
    let same = crop_grid(&grid, 96, CropMode::Center).unwrap();
    assert_eq!(same, grid);
}
