//! Configurable U-Net variants.

mod config;
mod unet;

pub use config::NetworkConfig;
pub use unet::{NetworkOutput, SegNet};
