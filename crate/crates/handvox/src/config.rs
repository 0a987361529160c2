//! Run configuration: a single human-readable TOML file. The defaults are
//! the training recipe the networks were designed for (lr 3.0e-4, batch 4,
//! 3 epochs, sigma 0.005, dropout 0.5, 96^3 -> 88^3 grids), so a bare
//! `train` run needs no config file at all.

use std::path::Path;

use handvox_core::ingest::{CameraIntrinsics, MSRA_JOINT_NAMES};
use serde::{Deserialize, Serialize};

use crate::pipeline::{PipelineConfig, PitchMode};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSection {
    pub fp: f64,
    pub fq: f64,
    pub cp: f64,
    pub cq: f64,
}

impl Default for CameraSection {
    fn default() -> Self {
        // Intrinsics documented with the MSRA dataset release.
        Self {
            fp: 241.42,
            fq: 241.42,
            cp: 160.0,
            cq: 120.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub band_mm: f64,
    pub cube_half_extent_mm: f64,
    pub grid_size: usize,
    pub crop_size: usize,
    /// "fit": pitch = 2 * cube_half_extent / grid_size (hand-sized grid).
    /// "fixed": use `pitch_mm` (e.g. the 10 mm full-scene variant).
    pub pitch_mode: String,
    pub pitch_mm: f64,
    pub refine_clamp_mm: f64,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            band_mm: 400.0,
            cube_half_extent_mm: 150.0,
            grid_size: 96,
            crop_size: 88,
            pitch_mode: "fit".into(),
            pitch_mm: 10.0,
            refine_clamp_mm: 150.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub joint_count: usize,
    pub base_channels: usize,
    pub adaptive_pool: usize,
    pub dropout: f64,
    /// Joint names in dataset order; length must equal `joint_count`.
    pub joint_names: Vec<String>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            joint_count: 21,
            base_channels: 16,
            adaptive_pool: 4,
            dropout: 0.5,
            joint_names: MSRA_JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub sigma_init: f64,
    pub augment: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            lr: 3.0e-4,
            batch_size: 4,
            epochs: 3,
            sigma_init: 0.005,
            augment: true,
        }
    }
}

/// Sign normalization applied to joint files at load time: the dataset
/// release stores y up and z toward the viewer, internally both flip into a
/// right-handed positive-z-into-scene frame.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub flip_y: bool,
    pub flip_z: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            flip_y: true,
            flip_z: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub threshold_max_mm: f64,
    pub threshold_step_mm: f64,
    pub eval_batch: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            threshold_max_mm: 100.0,
            threshold_step_mm: 2.0,
            eval_batch: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub camera: CameraSection,
    pub dataset: DatasetSection,
    pub pipeline: PipelineSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Config = toml::from_str(&text).map_err(|e| Error::Toml(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.camera.fp > 0.0 && self.camera.fq > 0.0) {
            return Err(Error::Config("focal lengths must be positive".into()));
        }
        if self.train.batch_size < 2 {
            return Err(Error::Config(
                "batch_size must be >= 2 (batch normalization)".into(),
            ));
        }
        if self.train.lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.pipeline.crop_size > self.pipeline.grid_size {
            return Err(Error::Config(format!(
                "crop_size {} exceeds grid_size {}",
                self.pipeline.crop_size, self.pipeline.grid_size
            )));
        }
        match self.pipeline.pitch_mode.as_str() {
            "fit" | "fixed" => {}
            other => {
                return Err(Error::Config(format!(
                    "pitch_mode must be \"fit\" or \"fixed\", got {other:?}"
                )))
            }
        }
        if self.model.joint_names.len() != self.model.joint_count {
            return Err(Error::Config(format!(
                "{} joint names for joint_count {}",
                self.model.joint_names.len(),
                self.model.joint_count
            )));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::with_principal(
            self.camera.fp,
            self.camera.fq,
            self.camera.cp,
            self.camera.cq,
        )
    }

    pub fn joint_convention(&self) -> handvox_core::ingest::JointConvention {
        handvox_core::ingest::JointConvention {
            flip_y: self.dataset.flip_y,
            flip_z: self.dataset.flip_z,
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            band_mm: self.pipeline.band_mm,
            cube_half_extent_mm: self.pipeline.cube_half_extent_mm,
            grid_size: self.pipeline.grid_size,
            crop_size: self.pipeline.crop_size,
            pitch: match self.pipeline.pitch_mode.as_str() {
                "fixed" => PitchMode::Fixed(self.pipeline.pitch_mm),
                _ => PitchMode::Fit,
            },
            refine_clamp_mm: self.pipeline.refine_clamp_mm,
        }
    }

    pub fn thresholds(&self) -> Vec<f64> {
        let mut t = Vec::new();
        let mut v = self.eval.threshold_step_mm;
        while v <= self.eval.threshold_max_mm + 1e-9 {
            t.push(v);
            v += self.eval.threshold_step_mm;
        }
        t
    }
}
