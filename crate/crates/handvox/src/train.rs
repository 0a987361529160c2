//! Training loops for the pose network and the localizer, plus the
//! leave-one-subject-out split. Determinism contract: a fixed seed and
//! worker count reproduce loss histories bit-identically (all parallel
//! sections write disjoint outputs in a fixed order and every random draw
//! flows from the master seed on the main thread).

use handvox_core::augment::{sample_params, AugmentParams};
use handvox_core::geometry::{center_of_mass, project_frame, segment_hand, NullRefiner, ReferenceRefiner};
use handvox_core::voxelize::CropMode;
use handvox_nn::{adam_step, AdamConfig, Tape, Tensor};
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::config::Config;
use crate::dataset::FrameRef;
use crate::model::{HandPoseConfig, HandPoseNet, Localizer, LocalizerConfig};
use crate::pipeline::{grids_to_tensor, prepare_frame, targets_to_tensor, PreparedFrame};
use crate::{Error, Result};

/// Splits subjects into (train = all but one, test = the held-out one).
pub fn loso_split(subjects: &[String], held_out: &str) -> Result<(Vec<String>, Vec<String>)> {
    if !subjects.iter().any(|s| s == held_out) {
        return Err(Error::UnknownSubject(held_out.to_string()));
    }
    let train: Vec<String> = subjects
        .iter()
        .filter(|s| s.as_str() != held_out)
        .cloned()
        .collect();
    Ok((train, vec![held_out.to_string()]))
}

pub struct TrainOutput {
    pub model: HandPoseNet,
    pub losses: Vec<f64>,
}

/// Extra knobs that are not part of the config file.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub seed: u64,
    pub held_out: Option<String>,
    /// Stop after this many optimizer steps (for scaled experiments).
    pub max_steps: Option<usize>,
    /// Cap on frames drawn from the dataset (subsampling large sets).
    pub max_frames: Option<usize>,
}

/// Trains the pose network: per step, each batch frame runs the full
/// pipeline (segment, project, refine, optionally augment, voxelize, crop)
/// and the network regresses grid-center-relative joint coordinates under
/// the joint MSE loss with Adam updates.
pub fn train(
    cfg: &Config,
    frames: &[FrameRef],
    localizer: Option<&Localizer>,
    opts: &TrainOptions,
) -> Result<TrainOutput> {
    let refiner: &dyn ReferenceRefiner = match localizer {
        Some(l) => l,
        None => &NullRefiner,
    };
    let mut usable: Vec<&FrameRef> = frames
        .iter()
        .filter(|f| f.has_joints())
        .filter(|f| opts.held_out.as_deref() != Some(f.subject.as_str()))
        .collect();
    if let Some(cap) = opts.max_frames {
        usable.truncate(cap);
    }
    if usable.len() < cfg.train.batch_size {
        return Err(Error::Config(format!(
            "{} usable frames but batch size {}",
            usable.len(),
            cfg.train.batch_size
        )));
    }

    let model_cfg = HandPoseConfig {
        input_size: cfg.pipeline.crop_size,
        joint_count: cfg.model.joint_count,
        base_channels: cfg.model.base_channels,
        adaptive_pool: cfg.model.adaptive_pool,
        dropout: cfg.model.dropout,
    };
    let mut model = HandPoseNet::build(model_cfg, cfg.train.sigma_init, opts.seed)?;
    let adam = AdamConfig::with_lr(cfg.train.lr);
    let pipe = cfg.pipeline_config();
    let intr = cfg.intrinsics();

    let mut master = ChaCha20Rng::seed_from_u64(opts.seed);
    let mut losses = Vec::new();
    let mut step = 0usize;
    let batch = cfg.train.batch_size;

    'epochs: for _epoch in 0..cfg.train.epochs {
        let mut order: Vec<usize> = (0..usable.len()).collect();
        order.shuffle(&mut master);
        // Last partial batch is dropped (batch norm needs >= 2).
        for chunk in order.chunks_exact(batch) {
            // All per-sample randomness is drawn sequentially up front.
            // Crop jitter is part of augmentation: with augmentation off the
            // window is centered and the pipeline is deterministic per frame.
            let sample_seeds: Vec<(Option<u64>, u64)> = chunk
                .iter()
                .map(|_| {
                    let aug = cfg.train.augment.then(|| master.random::<u64>());
                    let crop = master.random::<u64>();
                    (aug, crop)
                })
                .collect();
            let dropout_seed = master.random::<u64>();

            let prepared: Vec<PreparedFrame> = chunk
                .par_iter()
                .zip(sample_seeds.par_iter())
                .map(|(idx, (aug_seed, crop_seed))| {
                    let (frame, joints) = usable[*idx].load(intr)?;
                    let params: Option<AugmentParams> = aug_seed.map(sample_params);
                    let crop = if cfg.train.augment {
                        CropMode::RandomOffset(*crop_seed)
                    } else {
                        CropMode::Center
                    };
                    prepare_frame(
                        &frame,
                        joints.as_ref(),
                        &pipe,
                        refiner,
                        params.as_ref(),
                        crop,
                    )
                })
                .collect::<Result<_>>()?;

            let grids: Vec<_> = prepared.iter().map(|p| &p.grid).collect();
            let targets: Vec<_> = prepared
                .iter()
                .map(|p| p.target_rel.as_ref().expect("training frames have joints"))
                .collect();
            let x = grids_to_tensor(&grids)?;
            let t = targets_to_tensor(&targets)?;

            let mut tape = Tape::new();
            let xn = tape.input(x);
            let mut drop_rng = ChaCha20Rng::seed_from_u64(dropout_seed);
            let out = model.forward_training(&mut tape, xn, &mut drop_rng)?;
            let loss_node = tape.mse_joint_loss(out, t, model.cfg.joint_count)?;
            let loss = tape.value(loss_node).data()[0] as f64;
            if !loss.is_finite() {
                return Err(Error::DivergedLoss { step });
            }
            losses.push(loss);

            let mut store = std::mem::take(&mut model.net.store);
            tape.backward(loss_node, &mut store)?;
            model.net.store = store;
            adam_step(&mut model.net.store, &adam)?;
            model.net.store.zero_grads();

            step += 1;
            if opts.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
        }
    }

    Ok(TrainOutput { model, losses })
}

pub struct LocalizerTrainOutput {
    pub model: Localizer,
    pub losses: Vec<f64>,
}

/// Trains the localization refiner: the input is the normalized depth crop
/// around the center-of-mass pixel and the target is the offset from the
/// center of mass to the ground-truth hand center (mean of the joints).
pub fn train_localizer(
    cfg: &Config,
    frames: &[FrameRef],
    epochs: usize,
    opts: &TrainOptions,
) -> Result<LocalizerTrainOutput> {
    let usable: Vec<&FrameRef> = frames
        .iter()
        .filter(|f| f.has_joints())
        .filter(|f| opts.held_out.as_deref() != Some(f.subject.as_str()))
        .collect();
    if usable.len() < cfg.train.batch_size {
        return Err(Error::Config(format!(
            "{} usable frames but batch size {}",
            usable.len(),
            cfg.train.batch_size
        )));
    }
    let loc_cfg = LocalizerConfig {
        band_mm: cfg.pipeline.band_mm,
        ..Default::default()
    };
    let mut model = Localizer::build(loc_cfg, cfg.train.sigma_init, opts.seed)?;
    let adam = AdamConfig::with_lr(cfg.train.lr);
    let intr = cfg.intrinsics();
    let band = cfg.pipeline.band_mm;

    let mut master = ChaCha20Rng::seed_from_u64(opts.seed);
    let mut losses = Vec::new();
    let mut step = 0usize;
    let batch = cfg.train.batch_size;

    'epochs: for _epoch in 0..epochs {
        let mut order: Vec<usize> = (0..usable.len()).collect();
        order.shuffle(&mut master);
        for chunk in order.chunks_exact(batch) {
            let dropout_seed = master.random::<u64>();
            let samples: Vec<(Vec<f32>, [f64; 3])> = chunk
                .par_iter()
                .map(|idx| {
                    let (frame, joints) = usable[*idx].load(intr)?;
                    let joints = joints.expect("filtered to frames with joints");
                    let seg = segment_hand(&frame, band)?;
                    let cloud = project_frame(&seg);
                    let com = center_of_mass(&cloud)?;
                    let crop = model.make_crop(&seg, com);
                    let truth = joints.centroid();
                    let target = [
                        truth[0] - com[0],
                        truth[1] - com[1],
                        truth[2] - com[2],
                    ];
                    Ok((crop, target))
                })
                .collect::<Result<_>>()?;

            let crops: Vec<Vec<f32>> = samples.iter().map(|(c, _)| c.clone()).collect();
            let x = model.crop_to_tensor(&crops)?;
            let mut tdata = Vec::with_capacity(samples.len() * 3);
            for (_, t) in &samples {
                tdata.extend(t.iter().map(|v| *v as f32));
            }
            let t = Tensor::new(vec![samples.len(), 3], tdata).map_err(Error::Nn)?;

            let mut tape = Tape::new();
            let xn = tape.input(x);
            let mut drop_rng = ChaCha20Rng::seed_from_u64(dropout_seed);
            let out = model.forward_training(&mut tape, xn, &mut drop_rng)?;
            let loss_node = tape.mse_joint_loss(out, t, 1)?;
            let loss = tape.value(loss_node).data()[0] as f64;
            if !loss.is_finite() {
                return Err(Error::DivergedLoss { step });
            }
            losses.push(loss);

            let mut store = std::mem::take(&mut model.net.store);
            tape.backward(loss_node, &mut store)?;
            model.net.store = store;
            adam_step(&mut model.net.store, &adam)?;
            model.net.store.zero_grads();

            step += 1;
            if opts.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
        }
    }

    Ok(LocalizerTrainOutput { model, losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loso_partitions_subjects() {
        let subjects: Vec<String> = (0..9).map(|i| format!("P{i}")).collect();
        let (train, test) = loso_split(&subjects, "P3").unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(test, vec!["P3".to_string()]);
        let mut union = train.clone();
        union.extend(test.clone());
        union.sort();
        assert_eq!(union, subjects);
    }

    #[test]
    fn all_nine_splits_cover_each_subject_once() {
        let subjects: Vec<String> = (0..9).map(|i| format!("P{i}")).collect();
        let mut tested = Vec::new();
        for s in &subjects {
            let (train, test) = loso_split(&subjects, s).unwrap();
            assert_eq!(train.len() + test.len(), 9);
            tested.extend(test);
        }
        let mut sorted = tested.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 9);
    }

    #[test]
    fn unknown_subject_rejected() {
        let subjects = vec!["P0".to_string()];
        assert!(matches!(
            loso_split(&subjects, "P9"),
            Err(Error::UnknownSubject(_))
        ));
    }
}
