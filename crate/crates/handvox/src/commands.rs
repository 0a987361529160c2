//! CLI subcommands. Exit codes: 0 success, 2 usage/config, 3 data,
//! 4 internal.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use handvox_core::geometry::NullRefiner;
use handvox_core::ingest::synth_frame;
use handvox_core::voxelize::{occupancy_count, write_grid_dump, CropMode};
use serde::Serialize;

use crate::config::Config;
use crate::dataset::{scan_dataset_with, subjects_of, synth_refs, write_synth_dataset, FrameRef};
use handvox_core::ingest::JointConvention;
use crate::eval::{evaluate, write_report};
use crate::manifest::{append_manifest, RunManifest};
use crate::model::{HandPoseConfig, HandPoseNet, Localizer, ModelManifest};
use crate::pipeline::prepare_frame;
use crate::train::{loso_split, train, train_localizer, TrainOptions};
use crate::{bench, Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "handvox",
    version,
    about = "Voxel-to-coordinate hand pose estimation on depth images"
)]
pub struct Cli {
    /// Path to a TOML config; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed; all randomness flows from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads for the data pipeline (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Directory for artifacts and run manifests.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset in the on-disk binary frame layout.
    Synth {
        #[arg(long, default_value_t = 2)]
        subjects: usize,
        #[arg(long, default_value_t = 8)]
        frames_per_subject: usize,
    },
    /// Segment, project and voxelize one frame; print stats and dump the
    /// grid when an output directory is given.
    Voxelize {
        /// Path to a binary depth frame.
        #[arg(long, conflicts_with = "synthetic")]
        frame: Option<PathBuf>,
        /// Generate the input frame from this seed instead.
        #[arg(long)]
        synthetic: Option<u64>,
        /// Trained localizer checkpoint for reference-point refinement.
        #[arg(long)]
        localizer: Option<PathBuf>,
    },
    /// Train the pose network.
    Train {
        /// Dataset root (subject/gesture tree).
        #[arg(long, conflicts_with = "synthetic")]
        data: Option<PathBuf>,
        /// Train on this many generated synthetic frames instead.
        #[arg(long)]
        synthetic: Option<usize>,
        /// Leave this subject out of training.
        #[arg(long)]
        subject_holdout: Option<String>,
        /// Override the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Stop after this many optimizer steps.
        #[arg(long)]
        max_steps: Option<usize>,
        /// Subsample the dataset to this many frames.
        #[arg(long)]
        max_frames: Option<usize>,
        /// Network input size in voxels per axis (grid scales with it).
        #[arg(long)]
        input_size: Option<usize>,
        /// Disable augmentation regardless of config.
        #[arg(long)]
        no_augment: bool,
        /// Trained localizer checkpoint.
        #[arg(long)]
        localizer: Option<PathBuf>,
    },
    /// Train the 2D hand-localization refiner.
    TrainLocalizer {
        #[arg(long, conflicts_with = "synthetic")]
        data: Option<PathBuf>,
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long)]
        subject_holdout: Option<String>,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Evaluate a checkpoint: per-joint mean error and success curve.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "synthetic")]
        data: Option<PathBuf>,
        #[arg(long)]
        synthetic: Option<usize>,
        /// Evaluate only this held-out subject.
        #[arg(long)]
        subject_holdout: Option<String>,
        /// Force predictions to the ground truth (reporting-path check).
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        localizer: Option<PathBuf>,
    },
    /// Predict joint coordinates for one frame, as JSON.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "synthetic")]
        frame: Option<PathBuf>,
        #[arg(long)]
        synthetic: Option<u64>,
        #[arg(long)]
        localizer: Option<PathBuf>,
    },
    /// Per-frame inference timing (forward-only, plus end-to-end).
    Bench {
        /// Checkpoint to time; a freshly initialized model is used if
        /// omitted (timing does not depend on weight values).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        frames: usize,
        #[arg(long, default_value_t = 20)]
        warmup: usize,
        #[arg(long)]
        input_size: Option<usize>,
        /// Channel width of the freshly built model (ignored with
        /// --checkpoint).
        #[arg(long)]
        base_channels: Option<usize>,
        /// Also time the full pipeline on synthetic frames.
        #[arg(long)]
        end_to_end: bool,
    },
    /// Print the default configuration as TOML.
    PrintConfig,
}

pub fn exit_code(cmd: &Command, err: &Error) -> i32 {
    use handvox_core::Error as CoreError;
    match err {
        Error::Config(_) | Error::Toml(_) | Error::UnknownSubject(_) => 2,
        // A missing dataset path is a configuration mistake.
        Error::DatasetMissing(_) => 2,
        Error::Core(c) => match c {
            CoreError::EmptyFrame | CoreError::EmptyCloud => 3,
            CoreError::TruncatedFile { .. }
            | CoreError::MalformedHeader { .. }
            | CoreError::ParseError { .. }
            | CoreError::CountMismatch { .. } => {
                // The voxelize command classifies unparseable input files as
                // usage errors (the wrong file was supplied).
                if matches!(cmd, Command::Voxelize { .. }) {
                    2
                } else {
                    3
                }
            }
            _ => 3,
        },
        Error::LengthMismatch(_) => 3,
        Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 4,
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

/// Scales the voxel pipeline to a different network input size, keeping the
/// full-grid/crop proportion (96:88) and the fitted pitch.
fn sized_config(mut cfg: Config, input_size: Option<usize>) -> Config {
    if let Some(n) = input_size {
        cfg.pipeline.crop_size = n;
        cfg.pipeline.grid_size = (n * 96).div_ceil(88);
    }
    cfg
}

fn load_frames(
    data: &Option<PathBuf>,
    synthetic: Option<usize>,
    seed: u64,
    conv: JointConvention,
) -> Result<Vec<FrameRef>> {
    match (data, synthetic) {
        (Some(root), _) => scan_dataset_with(root, conv),
        (None, Some(n)) => Ok(synth_refs(n, 3, seed.wrapping_mul(1_000_003))),
        (None, None) => Err(Error::Config(
            "either --data or --synthetic is required".into(),
        )),
    }
}

fn load_localizer(path: &Option<PathBuf>) -> Result<Option<Localizer>> {
    path.as_ref().map(|p| Localizer::load(p)).transpose()
}

fn out_dir_or(cli_out: &Option<PathBuf>, default: &str) -> PathBuf {
    cli_out.clone().unwrap_or_else(|| PathBuf::from(default))
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Command::Synth {
            subjects,
            frames_per_subject,
        } => {
            let cfg = load_config(&cli.config)?;
            let out = out_dir_or(&cli.out_dir, "synth-data");
            std::fs::create_dir_all(&out)?;
            let n = write_synth_dataset(
                &out,
                *subjects,
                *frames_per_subject,
                cli.seed,
                cfg.intrinsics(),
            )?;
            let manifest =
                RunManifest::start("synth", cli.seed, cfg.to_toml()).finish(vec![out.clone()]);
            append_manifest(&out, &manifest)?;
            println!("wrote {n} frames under {}", out.display());
            Ok(())
        }

        Command::Voxelize {
            frame,
            synthetic,
            localizer,
        } => {
            let cfg = load_config(&cli.config)?;
            let intr = cfg.intrinsics();
            let depth_frame = match (frame, synthetic) {
                (Some(path), _) => handvox_core::ingest::load_msra_frame(path, intr)?,
                (None, Some(seed)) => synth_frame(*seed, intr).0,
                (None, None) => {
                    return Err(Error::Config("either --frame or --synthetic is required".into()))
                }
            };
            let loc = load_localizer(localizer)?;
            let pipe = cfg.pipeline_config();
            let prepared = match &loc {
                Some(l) => prepare_frame(&depth_frame, None, &pipe, l, None, CropMode::Center)?,
                None => {
                    prepare_frame(&depth_frame, None, &pipe, &NullRefiner, None, CropMode::Center)?
                }
            };
            println!(
                "grid_size: {}x{}x{}",
                prepared.grid.size()[0],
                prepared.grid.size()[1],
                prepared.grid.size()[2]
            );
            println!("pitch_mm: {}", prepared.grid.pitch());
            println!("occupied_voxels: {}", occupancy_count(&prepared.grid));
            println!(
                "reference_point_mm: [{}, {}, {}]",
                prepared.ref_point[0], prepared.ref_point[1], prepared.ref_point[2]
            );
            if let Some(out) = &cli.out_dir {
                std::fs::create_dir_all(out)?;
                let dump = out.join("grid.bin");
                let mut w = std::fs::File::create(&dump)?;
                write_grid_dump(&mut w, &prepared.grid)?;
                println!("dump: {}", dump.display());
                let manifest = RunManifest::start("voxelize", cli.seed, cfg.to_toml())
                    .finish(vec![dump]);
                append_manifest(out, &manifest)?;
            }
            Ok(())
        }

        Command::Train {
            data,
            synthetic,
            subject_holdout,
            epochs,
            max_steps,
            max_frames,
            input_size,
            no_augment,
            localizer,
        } => {
            let mut cfg = sized_config(load_config(&cli.config)?, *input_size);
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            if *no_augment {
                cfg.train.augment = false;
            }
            cfg.validate()?;
            let frames = load_frames(data, *synthetic, cli.seed, cfg.joint_convention())?;
            if let Some(held) = subject_holdout {
                // Validate the split up front.
                loso_split(&subjects_of(&frames), held)?;
            }
            let loc = load_localizer(localizer)?;
            let opts = TrainOptions {
                seed: cli.seed,
                held_out: subject_holdout.clone(),
                max_steps: *max_steps,
                max_frames: *max_frames,
            };
            let output = train(&cfg, &frames, loc.as_ref(), &opts)?;

            let out = out_dir_or(&cli.out_dir, "runs");
            std::fs::create_dir_all(&out)?;
            let ckpt = out.join("model.ckpt");
            let mut meta = ModelManifest::new(output.model.cfg.clone(), cli.seed);
            meta.steps_trained = output.losses.len();
            meta.final_loss = output.losses.last().copied();
            output.model.save(&ckpt, &meta)?;

            let loss_csv = out.join("loss_history.csv");
            let mut csv = String::from("step,loss\n");
            for (i, l) in output.losses.iter().enumerate() {
                csv.push_str(&format!("{i},{l}\n"));
            }
            std::fs::write(&loss_csv, csv)?;

            let manifest = RunManifest::start("train", cli.seed, cfg.to_toml())
                .finish(vec![ckpt.clone(), loss_csv.clone()]);
            append_manifest(&out, &manifest)?;
            println!(
                "trained {} steps, final loss {:.4}, checkpoint {}",
                output.losses.len(),
                output.losses.last().copied().unwrap_or(f64::NAN),
                ckpt.display()
            );
            Ok(())
        }

        Command::TrainLocalizer {
            data,
            synthetic,
            subject_holdout,
            epochs,
            max_steps,
        } => {
            let cfg = load_config(&cli.config)?;
            let frames = load_frames(data, *synthetic, cli.seed, cfg.joint_convention())?;
            let opts = TrainOptions {
                seed: cli.seed,
                held_out: subject_holdout.clone(),
                max_steps: *max_steps,
                max_frames: None,
            };
            let output = train_localizer(&cfg, &frames, *epochs, &opts)?;
            let out = out_dir_or(&cli.out_dir, "runs");
            std::fs::create_dir_all(&out)?;
            let ckpt = out.join("localizer.ckpt");
            output.model.save(&ckpt)?;
            let loss_csv = out.join("localizer_loss.csv");
            let mut csv = String::from("step,loss\n");
            for (i, l) in output.losses.iter().enumerate() {
                csv.push_str(&format!("{i},{l}\n"));
            }
            std::fs::write(&loss_csv, csv)?;
            let manifest = RunManifest::start("train-localizer", cli.seed, cfg.to_toml())
                .finish(vec![ckpt.clone(), loss_csv]);
            append_manifest(&out, &manifest)?;
            println!(
                "trained localizer {} steps, final loss {:.4}, checkpoint {}",
                output.losses.len(),
                output.losses.last().copied().unwrap_or(f64::NAN),
                ckpt.display()
            );
            Ok(())
        }

        Command::Eval {
            checkpoint,
            data,
            synthetic,
            subject_holdout,
            oracle,
            localizer,
        } => {
            let cfg = load_config(&cli.config)?;
            let model = HandPoseNet::load(checkpoint)?;
            let mut cfg = cfg;
            // The checkpoint fixes the geometry it was trained with.
            cfg.pipeline.crop_size = model.cfg.input_size;
            cfg.pipeline.grid_size = (model.cfg.input_size * 96).div_ceil(88);
            let frames = load_frames(data, *synthetic, cli.seed, cfg.joint_convention())?;
            let frames: Vec<FrameRef> = match subject_holdout {
                Some(held) => {
                    loso_split(&subjects_of(&frames), held)?;
                    frames
                        .into_iter()
                        .filter(|f| f.subject == *held)
                        .collect()
                }
                None => frames,
            };
            let loc = load_localizer(localizer)?;
            let report = evaluate(&model, loc.as_ref(), &frames, &cfg, *oracle)?;

            let out = out_dir_or(&cli.out_dir, "runs");
            let outputs = write_report(&report, &out)?;
            let manifest =
                RunManifest::start("eval", cli.seed, cfg.to_toml()).finish(outputs.clone());
            append_manifest(&out, &manifest)?;
            println!(
                "frames: {}  overall mean error: {:.3} mm  wall: {:.3} ms/frame",
                report.frames_evaluated, report.overall_mean_error, report.wall_time_per_frame_ms
            );
            for p in outputs {
                println!("wrote {}", p.display());
            }
            Ok(())
        }

        Command::Predict {
            checkpoint,
            frame,
            synthetic,
            localizer,
        } => {
            let cfg = load_config(&cli.config)?;
            let model = HandPoseNet::load(checkpoint)?;
            let mut cfg = cfg;
            cfg.pipeline.crop_size = model.cfg.input_size;
            cfg.pipeline.grid_size = (model.cfg.input_size * 96).div_ceil(88);
            let intr = cfg.intrinsics();
            let depth_frame = match (frame, synthetic) {
                (Some(path), _) => handvox_core::ingest::load_msra_frame(path, intr)?,
                (None, Some(seed)) => synth_frame(*seed, intr).0,
                (None, None) => {
                    return Err(Error::Config("either --frame or --synthetic is required".into()))
                }
            };
            let loc = load_localizer(localizer)?;
            let pipe = cfg.pipeline_config();
            let prepared = match &loc {
                Some(l) => prepare_frame(&depth_frame, None, &pipe, l, None, CropMode::Center)?,
                None => {
                    prepare_frame(&depth_frame, None, &pipe, &NullRefiner, None, CropMode::Center)?
                }
            };
            let joints = model.predict(&[&prepared.grid])?;

            #[derive(Serialize)]
            struct Prediction {
                joint_names: Vec<String>,
                joints_mm: Vec<[f64; 3]>,
                reference_point_mm: [f64; 3],
            }
            let pred = Prediction {
                joint_names: cfg.model.joint_names.clone(),
                joints_mm: joints[0].joints().to_vec(),
                reference_point_mm: prepared.ref_point,
            };
            let text = serde_json::to_string_pretty(&pred)?;
            println!("{text}");
            if let Some(out) = &cli.out_dir {
                std::fs::create_dir_all(out)?;
                let path = out.join("prediction.json");
                std::fs::write(&path, &text)?;
                let manifest =
                    RunManifest::start("predict", cli.seed, cfg.to_toml()).finish(vec![path]);
                append_manifest(out, &manifest)?;
            }
            Ok(())
        }

        Command::Bench {
            checkpoint,
            frames,
            warmup,
            input_size,
            base_channels,
            end_to_end,
        } => {
            let cfg = sized_config(load_config(&cli.config)?, *input_size);
            let size = input_size.unwrap_or(cfg.pipeline.crop_size);
            let model = match checkpoint {
                Some(path) => HandPoseNet::load(path)?,
                None => HandPoseNet::build(
                    HandPoseConfig {
                        input_size: size,
                        base_channels: base_channels.unwrap_or(cfg.model.base_channels),
                        joint_count: cfg.model.joint_count,
                        adaptive_pool: cfg.model.adaptive_pool,
                        dropout: cfg.model.dropout,
                    },
                    cfg.train.sigma_init,
                    cli.seed,
                )?,
            };
            let forward = bench::benchmark_forward(&model, *frames, size, *warmup, cli.seed)?;
            #[derive(Serialize)]
            struct BenchReport {
                hardware: String,
                trainable_parameters: usize,
                forward: bench::BenchStats,
                end_to_end: Option<bench::BenchStats>,
            }
            let e2e = if *end_to_end {
                Some(bench::benchmark_end_to_end(
                    &model, &cfg, *frames, *warmup, cli.seed,
                )?)
            } else {
                None
            };
            let report = BenchReport {
                hardware: bench::hardware_string(),
                trainable_parameters: model.trainable_parameter_count(),
                forward,
                end_to_end: e2e,
            };
            println!("hardware: {}", report.hardware);
            println!("trainable parameters: {}", report.trainable_parameters);
            println!(
                "forward {}^3: mean {:.3} ms  p50 {:.3} ms  p99 {:.3} ms  ({} frames, {} warmup)",
                report.forward.input_size,
                report.forward.mean_ms,
                report.forward.p50_ms,
                report.forward.p99_ms,
                report.forward.frames,
                report.forward.warmup
            );
            if let Some(e) = &report.end_to_end {
                println!(
                    "end-to-end {}^3: mean {:.3} ms  p50 {:.3} ms  p99 {:.3} ms",
                    e.input_size, e.mean_ms, e.p50_ms, e.p99_ms
                );
            }
            if let Some(out) = &cli.out_dir {
                std::fs::create_dir_all(out)?;
                let path = out.join("bench_report.json");
                std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
                let manifest =
                    RunManifest::start("bench", cli.seed, cfg.to_toml()).finish(vec![path]);
                append_manifest(out, &manifest)?;
            }
            Ok(())
        }

        Command::PrintConfig => {
            print!("{}", Config::default().to_toml());
            Ok(())
        }
    }
}
