//! A minimal reverse-mode differentiable tensor engine.
//!
//! Tensors are dense row-major arrays participating in a gradient tape; the
//! tape records every operation of a forward pass and [`Tape::backward`]
//! replays it in reverse, accumulating gradients into a [`ParamStore`]. The
//! engine is generic over `f32` (training/inference) and `f64` (used by the
//! finite-difference gradient suites, which need the extra headroom).
//!
//! Only the layers needed by the pose networks exist: Conv3D, MaxPool3D,
//! ConvTranspose3D, BatchNorm, ReLU, inverted Dropout, fully-connected,
//! adaptive average pooling and residual addition, plus the joint MSE loss
//! and Adam.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use error::{NnError, Result};
pub use layers::{InitConfig, LayerSpec, Network};
pub use params::{ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tape::{Mode, NodeId, Tape};
pub use tensor::Tensor;
