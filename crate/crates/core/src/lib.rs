//! Toolkit for class-imbalanced multi-class semantic segmentation: an
//! oversampling batch scheduler, U-Net variants with auxiliary, separate and
//! sigmoid heads, Dice losses, evaluation metrics and an ablation harness.

pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod sampler;

pub use error::{Error, Result};
