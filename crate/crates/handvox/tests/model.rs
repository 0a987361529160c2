//! Architecture contracts for the pose network.

use handvox::model::{HandPoseConfig, HandPoseNet, ModelManifest, FC_FACTORS};
use handvox_nn::layers::TraceShape;
use handvox_nn::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn small_cfg(input_size: usize) -> HandPoseConfig {
    HandPoseConfig {
        input_size,
        base_channels: 4,
        ..Default::default()
    }
}

#[test]
fn default_model_has_eleven_conv_layers() {
    let model = HandPoseNet::build(HandPoseConfig::default(), 0.005, 0).unwrap();
    assert_eq!(model.conv3d_layer_count(), 11);
}

#[test]
fn spatial_trace_is_88_44_22_11_22() {
    let model = HandPoseNet::build(HandPoseConfig::default(), 0.005, 0).unwrap();
    let mut sizes: Vec<usize> = model
        .net
        .shape_trace()
        .iter()
        .filter_map(|s| match s.shape {
            TraceShape::Spatial { dims, .. } => Some(dims[0]),
            _ => None,
        })
        .collect();
    sizes.dedup();
    // 88 -> (pools) 44 -> 22 -> 11 -> (transpose) 22 -> (adaptive pool) 4
    assert_eq!(sizes, vec![88, 44, 22, 11, 22, 4]);
}

#[test]
fn fc_widths_follow_factor_44_11_3() {
    let f = 21;
    let model = HandPoseNet::build(HandPoseConfig::default(), 0.005, 0).unwrap();
    let mut fc_outs = Vec::new();
    for p in model.net.store.iter() {
        if p.name.ends_with(".weight") && p.value.shape().len() == 2 {
            fc_outs.push(p.value.shape()[1]);
        }
    }
    assert_eq!(
        fc_outs,
        vec![f * FC_FACTORS[0], f * FC_FACTORS[1], f * FC_FACTORS[2]]
    );
}

#[test]
fn parameter_count_fits_checkpoint_budget() {
    let dir = tempfile::tempdir().unwrap();
    let model = HandPoseNet::build(HandPoseConfig::default(), 0.005, 0).unwrap();
    let params = model.trainable_parameter_count();
    assert!(params < 11_000_000, "parameter count {params}");
    let ckpt = dir.path().join("model.ckpt");
    model
        .save(&ckpt, &ModelManifest::new(model.cfg.clone(), 0))
        .unwrap();
    let bytes = std::fs::metadata(&ckpt).unwrap().len();
    assert!(
        bytes < 42 * 1024 * 1024,
        "checkpoint is {bytes} bytes, expected under 42 MB"
    );
}

#[test]
fn output_shape_holds_across_input_sizes() {
    for size in [32usize, 40, 48, 88] {
        let cfg = small_cfg(size);
        let f = cfg.joint_count;
        let model = HandPoseNet::build(cfg, 0.005, 1).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let len = size * size * size;
        let x = Tensor::new(
            vec![1, 1, size, size, size],
            (0..len)
                .map(|_| if rng.random_range(0.0..1.0) < 0.05 { 1.0 } else { 0.0 })
                .collect(),
        )
        .unwrap();
        let out = model.infer_relative(x).unwrap();
        assert_eq!(out.shape(), &[1, f * 3], "input size {size}");
    }
}

#[test]
fn eval_forward_is_deterministic() {
    let model = HandPoseNet::build(small_cfg(32), 0.005, 3).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let len = 32 * 32 * 32;
    let data: Vec<f32> = (0..len)
        .map(|_| if rng.random_range(0.0..1.0) < 0.05 { 1.0 } else { 0.0 })
        .collect();
    let mut batch = data.clone();
    batch.extend(&data);
    let x = Tensor::new(vec![2, 1, 32, 32, 32], batch).unwrap();
    let out = model.infer_relative(x).unwrap();
    let (a, b) = out.data().split_at(out.len() / 2);
    assert_eq!(a, b, "identical inputs in one batch must agree");
}

#[test]
fn checkpoint_round_trip_reproduces_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let model = HandPoseNet::build(small_cfg(32), 0.005, 5).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    model
        .save(&ckpt, &ModelManifest::new(model.cfg.clone(), 5))
        .unwrap();
    let restored = HandPoseNet::load(&ckpt).unwrap();

    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let len = 32 * 32 * 32;
    let x = Tensor::new(
        vec![1, 1, 32, 32, 32],
        (0..len)
            .map(|_| if rng.random_range(0.0..1.0) < 0.08 { 1.0 } else { 0.0 })
            .collect::<Vec<f32>>(),
    )
    .unwrap();
    let a = model.infer_relative(x.clone()).unwrap();
    let b = restored.infer_relative(x).unwrap();
    let abits: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
    let bbits: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
    assert_eq!(abits, bbits);
}

#[test]
fn gradient_reaches_every_parameter() {
    // Dropout off so no unit is silenced by chance.
    let cfg = HandPoseConfig {
        dropout: 0.0,
        ..small_cfg(32)
    };
    let f = cfg.joint_count;
    let mut model = HandPoseNet::build(cfg, 0.005, 7).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let len = 2 * 32 * 32 * 32;
    let x = Tensor::new(
        vec![2, 1, 32, 32, 32],
        (0..len)
            .map(|_| if rng.random_range(0.0..1.0) < 0.08 { 1.0 } else { 0.0 })
            .collect::<Vec<f32>>(),
    )
    .unwrap();
    let target = Tensor::new(
        vec![2, f * 3],
        (0..2 * f * 3)
            .map(|_| rng.random_range(-50.0f32..50.0))
            .collect::<Vec<f32>>(),
    )
    .unwrap();

    let mut tape = Tape::new();
    let xn = tape.input(x);
    let out = model.forward_training(&mut tape, xn, &mut rng).unwrap();
    let loss = tape.mse_joint_loss(out, target, f).unwrap();
    let mut store = std::mem::take(&mut model.net.store);
    tape.backward(loss, &mut store).unwrap();
    for p in store.iter() {
        if !p.trainable {
            continue;
        }
        let g = p
            .grad
            .as_ref()
            .unwrap_or_else(|| panic!("no gradient for {}", p.name));
        assert!(
            g.iter().any(|v| *v != 0.0),
            "gradient identically zero for {}",
            p.name
        );
    }
}

#[test]
fn zero_final_layer_predicts_the_grid_center() {
    // Zero-initialized weights make the relative regression exactly zero,
    // so every joint lands on the grid center.
    let model = HandPoseNet::build(small_cfg(32), 0.0, 0).unwrap();
    let grid = handvox_core::VoxelGrid::new_empty([32; 3], 4.0, [100.0, -60.0, 500.0]);
    let preds = model.predict(&[&grid]).unwrap();
    let center = grid.center();
    for j in preds[0].joints() {
        for a in 0..3 {
            assert!((j[a] - center[a]).abs() < 1e-3, "{j:?} vs {center:?}");
        }
    }
}
