use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::HeadKind;

fn default_convs() -> usize {
    3
}

fn default_in_channels() -> usize {
    3
}

/// Declarative description of one U-Net variant.
///
/// The backbone has `depth` downsampling steps with `convs_per_level`
/// conv/ReLU/batch-norm blocks per resolution and skip connections at every
/// resolution except the full one. Heads are three blocks with an upsampling
/// step before the last one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub depth: usize,
    #[serde(default = "default_convs")]
    pub convs_per_level: usize,
    pub filters: usize,
    pub classes: usize,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    #[serde(default)]
    pub use_sigmoid: bool,
    #[serde(default)]
    pub use_aux_head: bool,
    #[serde(default)]
    pub use_separate_heads: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::desk(4)
    }
}

impl NetworkConfig {
    /// Desk-scale baseline: depth 4, 8 filters, for 64x64 patches.
    pub fn desk(classes: usize) -> Self {
        Self {
            depth: 4,
            convs_per_level: 3,
            filters: 8,
            classes,
            in_channels: 3,
            use_sigmoid: false,
            use_aux_head: false,
            use_separate_heads: false,
        }
    }

    /// Full-size configuration: 9 downsampling steps, 64 filters, for
    /// 512x512 patches.
    pub fn full_scale(classes: usize) -> Self {
        Self {
            depth: 9,
            filters: 64,
            ..Self::desk(classes)
        }
    }

    pub fn head_kind(&self) -> HeadKind {
        if self.use_sigmoid {
            HeadKind::SigmoidNoBackground
        } else {
            HeadKind::SoftmaxWithBackground
        }
    }

    /// Channels of the main output.
    pub fn output_channels(&self) -> usize {
        self.head_kind().channels(self.classes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::Config(format!("depth must be >= 2, got {}", self.depth)));
        }
        if self.filters == 0 || self.classes == 0 || self.convs_per_level == 0 || self.in_channels == 0
        {
            return Err(Error::Config(
                "filters, classes, convs_per_level and in_channels must be >= 1".into(),
            ));
        }
        if !self.use_sigmoid && self.output_channels() < 2 {
            return Err(Error::Config("softmax head needs at least 2 channels".into()));
        }
        Ok(())
    }

    /// Checks that `height x width` patches survive `depth` halvings exactly.
    pub fn validate_input(&self, height: usize, width: usize) -> Result<()> {
        let factor = 1usize
            .checked_shl(self.depth as u32)
            .ok_or_else(|| Error::Config(format!("depth {} too large", self.depth)))?;
        if height == 0 || width == 0 || height % factor != 0 || width % factor != 0 {
            return Err(Error::Config(format!(
                "patch size {height}x{width} is not divisible by 2^{} = {factor}",
                self.depth
            )));
        }
        Ok(())
    }

    /// Parameter count (weights, biases, scales, shifts) implied by the
    /// config, without building the network.
    pub fn parameter_count(&self) -> usize {
        let n = self.filters;
        let block = |cin: usize| 9 * cin * n + n + 2 * n;
        let level = |cin: usize| block(cin) + (self.convs_per_level - 1) * block(n);
        let encoder = level(self.in_channels) + (self.depth - 1) * level(n);
        let bottom = level(n);
        let decoder = (self.depth - 1) * level(2 * n);
        let head = 3 * block(n);
        let k = self.output_channels();
        let main = if self.use_separate_heads {
            k * (head + n + 1)
        } else {
            head + n * k + k
        };
        let aux = if self.use_aux_head { head + n + 1 } else { 0 };
        encoder + bottom + decoder + main + aux
    }

    /// Parameters of one U-Net head (three blocks).
    pub fn head_parameter_count(&self) -> usize {
        let n = self.filters;
        3 * (9 * n * n + 3 * n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_divisibility() {
        let c = NetworkConfig::desk(4);
        assert!(c.validate_input(64, 64).is_ok());
        assert!(c.validate_input(64, 40).is_err());
        assert!(c.validate_input(16, 16).is_ok());
        assert!(c.validate_input(8, 8).is_err());
        assert!(c.validate_input(12, 12).is_err());
    }

    #[test]
    fn rejects_shallow_or_empty() {
        let mut c = NetworkConfig::desk(4);
        c.depth = 1;
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::desk(4);
        c.filters = 0;
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::desk(1);
        c.use_sigmoid = true;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn json_defaults() {
        let c: NetworkConfig =
            serde_json::from_str(r#"{"depth":4,"filters":8,"classes":4,"use_sigmoid":true}"#).unwrap();
        assert_eq!(c.convs_per_level, 3);
        assert_eq!(c.in_channels, 3);
        assert!(c.use_sigmoid && !c.use_aux_head);
    }
}
