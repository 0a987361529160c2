//! Evaluation: 3D mean joint error per joint and overall, and the
//! success-frame curve (fraction of frames whose worst joint error is
//! strictly below each threshold). Reports are written as CSV and JSON with
//! stable formatting; the wall-clock figure is reported separately so the
//! serialized metrics stay bit-identical across runs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use handvox_core::geometry::{NullRefiner, ReferenceRefiner};
use handvox_core::ingest::JointSet;
use handvox_core::voxelize::CropMode;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::dataset::FrameRef;
use crate::model::{HandPoseNet, Localizer};
use crate::pipeline::prepare_frame;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub joint_names: Vec<String>,
    /// Mean Euclidean error (mm) per joint over all frames.
    pub per_joint_mean_error: Vec<f64>,
    /// Mean of the per-joint means.
    pub overall_mean_error: f64,
    /// (threshold mm, fraction of frames with every joint error < threshold).
    pub success_curve: Vec<(f64, f64)>,
    pub frames_evaluated: usize,
    /// Wall time per frame; excluded from the serialized report so repeated
    /// runs produce identical files.
    #[serde(skip)]
    pub wall_time_per_frame_ms: f64,
}

/// Per-joint and overall mean Euclidean error in mm.
pub fn mean_joint_error(preds: &[JointSet], truths: &[JointSet]) -> Result<(Vec<f64>, f64)> {
    if preds.len() != truths.len() || preds.is_empty() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions vs {} ground truths",
            preds.len(),
            truths.len()
        )));
    }
    let f = preds[0].joint_count();
    let mut per_joint = vec![0.0f64; f];
    for (p, t) in preds.iter().zip(truths) {
        if p.joint_count() != f || t.joint_count() != f {
            return Err(Error::LengthMismatch("joint count varies".into()));
        }
        for j in 0..f {
            per_joint[j] += dist(p.joint(j), t.joint(j));
        }
    }
    for v in &mut per_joint {
        *v /= preds.len() as f64;
    }
    let overall = per_joint.iter().sum::<f64>() / f as f64;
    Ok((per_joint, overall))
}

/// For each threshold, the fraction of frames whose worst joint error is
/// strictly below it. Monotone nondecreasing in the threshold.
pub fn success_fraction_curve(
    preds: &[JointSet],
    truths: &[JointSet],
    thresholds: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if preds.len() != truths.len() || preds.is_empty() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions vs {} ground truths",
            preds.len(),
            truths.len()
        )));
    }
    let worst: Vec<f64> = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| {
            (0..p.joint_count())
                .map(|j| dist(p.joint(j), t.joint(j)))
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(thresholds
        .iter()
        .map(|&d| {
            let ok = worst.iter().filter(|w| **w < d).count();
            (d, ok as f64 / worst.len() as f64)
        })
        .collect())
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Runs the full evaluation pipeline over the given frames. With
/// `oracle = true` the network is bypassed and predictions are forced to the
/// ground truth (exercises the reporting path end to end).
pub fn evaluate(
    model: &HandPoseNet,
    localizer: Option<&Localizer>,
    frames: &[FrameRef],
    cfg: &Config,
    oracle: bool,
) -> Result<EvalReport> {
    let refiner: &dyn ReferenceRefiner = match localizer {
        Some(l) => l,
        None => &NullRefiner,
    };
    let usable: Vec<&FrameRef> = frames.iter().filter(|f| f.has_joints()).collect();
    if usable.is_empty() {
        return Err(Error::LengthMismatch(
            "no frames with ground truth to evaluate".into(),
        ));
    }
    let pipe = cfg.pipeline_config();
    let intr = cfg.intrinsics();

    let started = Instant::now();
    let prepared: Vec<_> = usable
        .par_iter()
        .map(|f| {
            let (frame, joints) = f.load(intr)?;
            prepare_frame(
                &frame,
                joints.as_ref(),
                &pipe,
                refiner,
                None,
                CropMode::Center,
            )
        })
        .collect::<Result<_>>()?;

    let truths: Vec<JointSet> = prepared
        .iter()
        .map(|p| p.truth_abs.clone().expect("usable frames have joints"))
        .collect();

    let preds: Vec<JointSet> = if oracle {
        truths.clone()
    } else {
        let mut preds = Vec::with_capacity(prepared.len());
        for batch in prepared.chunks(cfg.eval.eval_batch.max(1)) {
            let grids: Vec<_> = batch.iter().map(|p| &p.grid).collect();
            preds.extend(model.predict(&grids)?);
        }
        preds
    };
    let wall = started.elapsed().as_secs_f64() * 1000.0 / usable.len() as f64;

    let (per_joint, overall) = mean_joint_error(&preds, &truths)?;
    let curve = success_fraction_curve(&preds, &truths, &cfg.thresholds())?;
    Ok(EvalReport {
        schema_version: 1,
        joint_names: cfg.model.joint_names.clone(),
        per_joint_mean_error: per_joint,
        overall_mean_error: overall,
        success_curve: curve,
        frames_evaluated: usable.len(),
        wall_time_per_frame_ms: wall,
    })
}

/// Writes `eval_report.json`, `per_joint_error.csv` (joint, mean_error_mm)
/// and `success_curve.csv` (threshold_mm, fraction). Returns the paths.
pub fn write_report(report: &EvalReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let json_path = out_dir.join("eval_report.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(report)?)?;

    let per_joint_path = out_dir.join("per_joint_error.csv");
    let mut pj = String::from("joint,mean_error_mm\n");
    for (name, err) in report.joint_names.iter().zip(&report.per_joint_mean_error) {
        pj.push_str(&format!("{name},{err}\n"));
    }
    std::fs::write(&per_joint_path, pj)?;

    let curve_path = out_dir.join("success_curve.csv");
    let mut sc = String::from("threshold_mm,fraction\n");
    for (t, fr) in &report.success_curve {
        sc.push_str(&format!("{t},{fr}\n"));
    }
    std::fs::write(&curve_path, sc)?;

    Ok(vec![json_path, per_joint_path, curve_path])
}
