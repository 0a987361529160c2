//! Per-frame inference timing. The forward benchmark times exactly the
//! network forward pass (voxel-grid tensor in, joint coordinates out); the
//! end-to-end benchmark additionally includes segmentation, projection,
//! voxelization and cropping.

use std::time::Instant;

use handvox_core::geometry::NullRefiner;
use handvox_core::ingest::synth_frame;
use handvox_core::voxelize::CropMode;
use handvox_nn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::config::Config;
use crate::model::HandPoseNet;
use crate::pipeline::prepare_frame;
use crate::Result;

#[derive(Debug, Clone, Serialize)]
pub struct BenchStats {
    pub input_size: usize,
    pub frames: usize,
    pub warmup: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

fn stats(mut samples: Vec<f64>, input_size: usize, warmup: usize) -> BenchStats {
    let frames = samples.len();
    let mean = samples.iter().sum::<f64>() / frames as f64;
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    BenchStats {
        input_size,
        frames,
        warmup,
        mean_ms: mean,
        p50_ms: percentile(&samples, 0.50),
        p99_ms: percentile(&samples, 0.99),
    }
}

/// Times the network forward pass on a synthetic occupancy grid of the given
/// size, one frame per iteration, after warmup runs.
pub fn benchmark_forward(
    model: &HandPoseNet,
    frames: usize,
    input_size: usize,
    warmup: usize,
    seed: u64,
) -> Result<BenchStats> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let len = input_size * input_size * input_size;
    // ~5% fill, the typical occupancy of a hand crop.
    let data: Vec<f32> = (0..len)
        .map(|_| if rng.random_range(0.0..1.0) < 0.05 { 1.0 } else { 0.0 })
        .collect();
    let input = Tensor::new(vec![1, 1, input_size, input_size, input_size], data)
        .map_err(crate::Error::Nn)?;

    for _ in 0..warmup {
        let _ = model.infer_relative(input.clone())?;
    }
    let mut samples = Vec::with_capacity(frames);
    for _ in 0..frames {
        let t0 = Instant::now();
        let out = model.infer_relative(input.clone())?;
        let dt = t0.elapsed().as_secs_f64() * 1000.0;
        assert!(out.data()[0].is_finite());
        samples.push(dt);
    }
    Ok(stats(samples, input_size, warmup))
}

/// Times the whole pipeline (segment -> project -> voxelize -> crop ->
/// forward) on synthetic frames.
pub fn benchmark_end_to_end(
    model: &HandPoseNet,
    cfg: &Config,
    frames: usize,
    warmup: usize,
    seed: u64,
) -> Result<BenchStats> {
    let pipe = cfg.pipeline_config();
    let intr = cfg.intrinsics();
    let run = |i: u64| -> Result<f64> {
        let (frame, _) = synth_frame(seed.wrapping_add(i), intr);
        let t0 = Instant::now();
        let prepared = prepare_frame(&frame, None, &pipe, &NullRefiner, None, CropMode::Center)?;
        let joints = model.predict(&[&prepared.grid])?;
        let dt = t0.elapsed().as_secs_f64() * 1000.0;
        assert!(joints[0].joint(0)[0].is_finite());
        Ok(dt)
    };
    for i in 0..warmup {
        run(i as u64)?;
    }
    let mut samples = Vec::with_capacity(frames);
    for i in 0..frames {
        samples.push(run((warmup + i) as u64)?);
    }
    Ok(stats(samples, cfg.pipeline.crop_size, warmup))
}

pub fn hardware_string() -> String {
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|v| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let cores = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    format!("{model} ({cores} logical cores)")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles_are_nearest_rank() {
        let sorted: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(percentile(&sorted, 0.50), 51.0);
        assert_eq!(percentile(&sorted, 0.99), 99.0);
        assert_eq!(percentile(&sorted, 1.0), 100.0);
    }
}
