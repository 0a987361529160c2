//! Voxel-to-coordinate hand pose estimation on depth images.
//!
//! The pipeline: depth frame -> hand segmentation -> world-coordinate point
//! cloud -> binary voxel grid centered on a refined reference point ->
//! 3D CNN -> 21 three-dimensional joint coordinates. This crate assembles
//! the networks from `handvox-nn` layers, runs the `handvox-core` data
//! pipeline, and provides training, evaluation, prediction and latency
//! benchmarking behind one CLI.

pub mod bench;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod manifest;
pub mod model;
pub mod pipeline;
pub mod train;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] handvox_core::Error),
    #[error(transparent)]
    Nn(#[from] handvox_nn::NnError),
    #[error("dataset missing or empty at {0}")]
    DatasetMissing(PathBuf),
    #[error("loss diverged (non-finite) at step {step}")]
    DivergedLoss { step: usize },
    #[error("unknown subject {0}")]
    UnknownSubject(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("toml: {0}")]
    Toml(String),
}

pub type Result<T> = std::result::Result<T, Error>;
