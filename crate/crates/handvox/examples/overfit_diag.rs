//! Overfit convergence inspection (dev tool).
use handvox::config::Config;
use handvox::dataset::synth_refs;
use handvox::model::HandPoseNet;
use handvox::pipeline::{grids_to_tensor, prepare_frame};
use handvox::train::{train, TrainOptions};
use handvox_core::geometry::NullRefiner;
use handvox_core::voxelize::CropMode;

fn main() {
    let mut cfg = Config::default();
    cfg.pipeline.crop_size = 44;
    cfg.pipeline.grid_size = 48;
    cfg.train.augment = false;
    cfg.model.dropout = 0.0;
    cfg.train.epochs = 150;
    let frames = synth_refs(8, 2, 11);
    let opts = TrainOptions {
        seed: 5,
        max_steps: Some(80),
        ..Default::default()
    };
    let out = train(&cfg, &frames, None, &opts).unwrap();
    println!("loss: {:.1} -> {:.3}", out.losses[0], out.losses.last().unwrap());
    inspect(&out.model, &cfg, &frames);
}

fn inspect(model: &HandPoseNet, cfg: &Config, frames: &[handvox::dataset::FrameRef]) {
    let pipe = cfg.pipeline_config();
    let intr = cfg.intrinsics();
    let mut grids = Vec::new();
    let mut targets = Vec::new();
    for f in frames {
        let (frame, joints) = f.load(intr).unwrap();
        let p = prepare_frame(&frame, joints.as_ref(), &pipe, &NullRefiner, None, CropMode::Center).unwrap();
        grids.push(p.grid);
        targets.push(p.target_rel.unwrap());
    }
    let grefs: Vec<&handvox_core::VoxelGrid> = grids.iter().collect();
    let x = grids_to_tensor(&grefs).unwrap();
    let rel = model.infer_relative(x).unwrap();
    let k = 63;
    // Spread of predictions vs targets across frames (std per coordinate,
    // averaged).
    let spread = |rows: &dyn Fn(usize, usize) -> f64| -> f64 {
        let n = grids.len();
        let mut total = 0.0;
        for c in 0..k {
            let mean: f64 = (0..n).map(|i| rows(i, c)).sum::<f64>() / n as f64;
            let var: f64 = (0..n).map(|i| (rows(i, c) - mean).powi(2)).sum::<f64>() / n as f64;
            total += var.sqrt();
        }
        total / k as f64
    };
    let pred_spread = spread(&|i, c| rel.data()[i * k + c] as f64);
    let tgt_spread = spread(&|i, c| targets[i][c / 3][c % 3]);
    println!("prediction spread across frames: {pred_spread:.3} mm");
    println!("target     spread across frames: {tgt_spread:.3} mm");
    // Occupancy differences between frames prove the inputs differ.
    let occ: Vec<usize> = grids.iter().map(handvox_core::voxelize::occupancy_count).collect();
    println!("occupancies: {occ:?}");
}
