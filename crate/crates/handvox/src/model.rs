//! The two networks: the 3D voxel-to-coordinate pose regressor and the 2D
//! hand-localization refiner, both assembled from `handvox-nn` layers.

use std::path::Path;

use handvox_core::geometry::{extract_normalized_crop, pixel_from_world, ReferenceRefiner};
use handvox_core::ingest::{DepthFrame, JointSet};
use handvox_core::voxelize::VoxelGrid;
use handvox_nn::{InitConfig, LayerSpec, Mode, Network, NodeId, Tape, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::pipeline::grids_to_tensor;
use crate::{Error, Result};

/// Fully-connected head widths as multiples of the joint count.
pub const FC_FACTORS: [usize; 3] = [44, 11, 3];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HandPoseConfig {
    pub input_size: usize,
    pub joint_count: usize,
    pub base_channels: usize,
    pub adaptive_pool: usize,
    pub dropout: f64,
}

impl Default for HandPoseConfig {
    fn default() -> Self {
        Self {
            input_size: 88,
            joint_count: 21,
            base_channels: 16,
            adaptive_pool: 4,
            dropout: 0.5,
        }
    }
}

fn conv_bn_relu(filters: usize) -> Vec<LayerSpec> {
    vec![LayerSpec::conv3(filters), LayerSpec::batch_norm(), LayerSpec::ReLU]
}

/// The layer stack: eleven 3D convolutional layers in the pattern
/// 2 + residual(2) + residual(2) + 2 + 2 + final 1x1x1, three max pools,
/// one transposed convolution for up-sampling, an adaptive average pool
/// feeding the three fully-connected regression layers with dropout between
/// them. Every conv and the transpose carry batch norm + relu.
pub fn hand_pose_specs(cfg: &HandPoseConfig) -> Vec<LayerSpec> {
    let b = cfg.base_channels;
    let f = cfg.joint_count;
    let mut specs = Vec::new();
    specs.extend(conv_bn_relu(b));
    specs.extend(conv_bn_relu(b));
    specs.push(LayerSpec::pool2());
    specs.push(LayerSpec::ResidualAdd {
        body: [conv_bn_relu(2 * b), conv_bn_relu(2 * b)].concat(),
    });
    specs.push(LayerSpec::pool2());
    specs.push(LayerSpec::ResidualAdd {
        body: [conv_bn_relu(4 * b), conv_bn_relu(4 * b)].concat(),
    });
    specs.push(LayerSpec::pool2());
    specs.extend(conv_bn_relu(4 * b));
    specs.extend(conv_bn_relu(4 * b));
    specs.push(LayerSpec::ConvTranspose3d {
        filters: 2 * b,
        kernel: 2,
        stride: 2,
    });
    specs.push(LayerSpec::batch_norm());
    specs.push(LayerSpec::ReLU);
    specs.extend(conv_bn_relu(2 * b));
    specs.extend(conv_bn_relu(2 * b));
    specs.push(LayerSpec::conv1(f));
    specs.push(LayerSpec::batch_norm());
    specs.push(LayerSpec::ReLU);
    specs.push(LayerSpec::AdaptiveAvgPool3d {
        output: cfg.adaptive_pool,
    });
    specs.push(LayerSpec::FullyConnected {
        units: f * FC_FACTORS[0],
    });
    specs.push(LayerSpec::Dropout { rate: cfg.dropout });
    specs.push(LayerSpec::FullyConnected {
        units: f * FC_FACTORS[1],
    });
    specs.push(LayerSpec::Dropout { rate: cfg.dropout });
    specs.push(LayerSpec::FullyConnected {
        units: f * FC_FACTORS[2],
    });
    specs
}

pub struct HandPoseNet {
    pub cfg: HandPoseConfig,
    pub net: Network<f32>,
}

impl HandPoseNet {
    pub fn build(cfg: HandPoseConfig, sigma: f64, seed: u64) -> Result<Self> {
        let specs = hand_pose_specs(&cfg);
        let net = Network::build(
            [1, cfg.input_size, cfg.input_size, cfg.input_size],
            &specs,
            &InitConfig { sigma, seed },
        )?;
        Ok(Self { cfg, net })
    }

    /// Records a train-mode forward pass; output node is (N, F*3) of
    /// center-relative coordinates in mm.
    pub fn forward_training<R: Rng>(
        &mut self,
        tape: &mut Tape<f32>,
        input: NodeId,
        rng: &mut R,
    ) -> Result<NodeId> {
        Ok(self.net.forward(tape, input, Mode::Train, rng)?)
    }

    /// Eval-mode forward on a raw grid tensor; returns (N, F*3) relative
    /// coordinates.
    pub fn infer_relative(&self, batch: Tensor<f32>) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let x = tape.input(batch);
        let out = self.net.infer(&mut tape, x)?;
        Ok(tape.value(out).clone())
    }

    /// Predicts absolute world-frame joints for a batch of grids by adding
    /// each grid's physical center to the regressed offsets.
    pub fn predict(&self, grids: &[&VoxelGrid]) -> Result<Vec<JointSet>> {
        let batch = grids_to_tensor(grids)?;
        let rel = self.infer_relative(batch)?;
        let f = self.cfg.joint_count;
        let mut out = Vec::with_capacity(grids.len());
        for (i, grid) in grids.iter().enumerate() {
            let c = grid.center();
            let row = &rel.data()[i * f * 3..][..f * 3];
            let joints: Vec<[f64; 3]> = (0..f)
                .map(|j| {
                    [
                        row[j * 3] as f64 + c[0],
                        row[j * 3 + 1] as f64 + c[1],
                        row[j * 3 + 2] as f64 + c[2],
                    ]
                })
                .collect();
            out.push(JointSet::new(joints));
        }
        Ok(out)
    }

    pub fn conv3d_layer_count(&self) -> usize {
        self.net.conv3d_layer_count()
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.net.trainable_parameter_count()
    }

    pub fn save(&self, checkpoint: &Path, meta: &ModelManifest) -> Result<()> {
        self.net.save_checkpoint(checkpoint)?;
        let manifest_path = manifest_path_for(checkpoint);
        std::fs::write(&manifest_path, serde_json::to_string_pretty(meta)?)?;
        Ok(())
    }

    /// Rebuilds the architecture from the manifest next to the checkpoint
    /// and loads the weights.
    pub fn load(checkpoint: &Path) -> Result<Self> {
        let manifest_path = manifest_path_for(checkpoint);
        let meta: ModelManifest = serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)?;
        let mut model = Self::build(meta.config.clone(), 0.0, 0)?;
        model.net.load_checkpoint(checkpoint)?;
        Ok(model)
    }
}

fn manifest_path_for(checkpoint: &Path) -> std::path::PathBuf {
    checkpoint.with_extension("json")
}

/// Small sidecar describing a saved model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelManifest {
    pub schema_version: u32,
    pub config: HandPoseConfig,
    pub seed: u64,
    pub steps_trained: usize,
    pub final_loss: Option<f64>,
}

impl ModelManifest {
    pub fn new(config: HandPoseConfig, seed: u64) -> Self {
        Self {
            schema_version: 1,
            config,
            seed,
            steps_trained: 0,
            final_loss: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LocalizerConfig {
    pub crop_size: usize,
    pub channels: [usize; 3],
    pub fc_hidden: usize,
    pub band_mm: f64,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        Self {
            crop_size: 96,
            channels: [8, 16, 32],
            fc_hidden: 1024,
            band_mm: 400.0,
        }
    }
}

/// Three 2D conv+pool stages and a two-layer head regressing a 3-vector
/// offset (mm). The 2D convolutions are realized as depth-1 3D kernels so
/// the same engine serves both networks.
pub fn localizer_specs(cfg: &LocalizerConfig) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    for ch in cfg.channels {
        specs.push(LayerSpec::Conv3d {
            filters: ch,
            kernel: [1, 3, 3],
            stride: [1, 1, 1],
            padding: [0, 1, 1],
        });
        specs.push(LayerSpec::batch_norm());
        specs.push(LayerSpec::ReLU);
        specs.push(LayerSpec::MaxPool3d {
            kernel: [1, 2, 2],
            stride: [1, 2, 2],
        });
    }
    specs.push(LayerSpec::FullyConnected {
        units: cfg.fc_hidden,
    });
    specs.push(LayerSpec::ReLU);
    specs.push(LayerSpec::FullyConnected { units: 3 });
    specs
}

pub struct Localizer {
    pub cfg: LocalizerConfig,
    pub net: Network<f32>,
}

impl Localizer {
    pub fn build(cfg: LocalizerConfig, sigma: f64, seed: u64) -> Result<Self> {
        let specs = localizer_specs(&cfg);
        let net = Network::build(
            [1, 1, cfg.crop_size, cfg.crop_size],
            &specs,
            &InitConfig { sigma, seed },
        )?;
        Ok(Self { cfg, net })
    }

    /// Normalized depth crop around the center-of-mass pixel.
    pub fn make_crop(&self, frame: &DepthFrame, com: [f64; 3]) -> Vec<f32> {
        let center_px = pixel_from_world(com, &frame.intrinsics);
        extract_normalized_crop(frame, center_px, self.cfg.crop_size, self.cfg.band_mm)
    }

    pub fn crop_to_tensor(&self, crops: &[Vec<f32>]) -> Result<Tensor<f32>> {
        let s = self.cfg.crop_size;
        let mut data = Vec::with_capacity(crops.len() * s * s);
        for c in crops {
            if c.len() != s * s {
                return Err(Error::LengthMismatch(format!(
                    "crop has {} pixels, expected {}",
                    c.len(),
                    s * s
                )));
            }
            data.extend_from_slice(c);
        }
        Ok(Tensor::new(vec![crops.len(), 1, 1, s, s], data).map_err(Error::Nn)?)
    }

    pub fn forward_training<R: Rng>(
        &mut self,
        tape: &mut Tape<f32>,
        input: NodeId,
        rng: &mut R,
    ) -> Result<NodeId> {
        Ok(self.net.forward(tape, input, Mode::Train, rng)?)
    }

    pub fn save(&self, checkpoint: &Path) -> Result<()> {
        self.net.save_checkpoint(checkpoint)?;
        let meta = serde_json::to_string_pretty(&self.cfg)?;
        std::fs::write(checkpoint.with_extension("json"), meta)?;
        Ok(())
    }

    pub fn load(checkpoint: &Path) -> Result<Self> {
        let cfg: LocalizerConfig = serde_json::from_str(&std::fs::read_to_string(
            checkpoint.with_extension("json"),
        )?)?;
        let mut model = Self::build(cfg, 0.0, 0)?;
        model.net.load_checkpoint(checkpoint)?;
        Ok(model)
    }
}

impl ReferenceRefiner for Localizer {
    fn predict_offset(&self, frame: &DepthFrame, com: [f64; 3]) -> [f64; 3] {
        let crop = self.make_crop(frame, com);
        let s = self.cfg.crop_size;
        let input = Tensor::new(vec![1, 1, 1, s, s], crop).expect("crop shape");
        let mut tape = Tape::new();
        let x = tape.input(input);
        let out = self
            .net
            .infer(&mut tape, x)
            .expect("localizer forward on valid crop");
        let o = tape.value(out).data();
        [o[0] as f64, o[1] as f64, o[2] as f64]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eleven_conv_layers() {
        let model = HandPoseNet::build(
            HandPoseConfig {
                input_size: 32,
                base_channels: 2,
                ..Default::default()
            },
            0.005,
            0,
        )
        .unwrap();
        assert_eq!(model.conv3d_layer_count(), 11);
    }

    #[test]
    fn zero_weight_localizer_predicts_zero_offset() {
        let loc = Localizer::build(LocalizerConfig::default(), 0.0, 0).unwrap();
        let (frame, _) = handvox_core::ingest::synth_frame(
            1,
            handvox_core::ingest::CameraIntrinsics::with_principal(241.42, 241.42, 160.0, 120.0),
        );
        let off = loc.predict_offset(&frame, [10.0, -5.0, 600.0]);
        assert_eq!(off, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn localizer_output_is_three_wide() {
        let loc = Localizer::build(LocalizerConfig::default(), 0.005, 3).unwrap();
        let crops = vec![vec![0.5f32; 96 * 96], vec![-0.25f32; 96 * 96]];
        let input = loc.crop_to_tensor(&crops).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(input);
        let out = loc.net.infer(&mut tape, x).unwrap();
        assert_eq!(tape.value(out).shape(), &[2, 3]);
    }
}
