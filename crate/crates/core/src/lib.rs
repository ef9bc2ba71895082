//! A self-contained segmentation lab for bimodal SAR-like imagery: a minimal
//! reverse-mode tensor engine, Batch/Mode Normalization layers, compact
//! U-Net and SegNet models, Dice/Focal objectives with confusion-count
//! metrics, a raster/tiling data pipeline with a synthetic scene generator,
//! and a training harness (early stopping, grid search, zone
//! cross-validation, convergence accounting).

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod models;
pub mod norm;
pub mod objectives;
pub mod ops;
pub mod optim;
pub mod runner;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Gradients, Shape, Tensor};
