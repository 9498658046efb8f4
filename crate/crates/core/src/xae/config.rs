use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{CONTEXT_PX, TILE_PX};

/// Geometry and loss weighting of the autoencoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderConfig {
    /// Filters of each encoder convolution; every layer halves the image.
    pub conv_filters: Vec<usize>,
    pub kernel_size: usize,
    pub conv_stride: usize,
    /// Widths of the affordance encoder's dense layers.
    pub affordance_widths: Vec<usize>,
    pub embedding_dim: usize,
    /// Channels of the image decoder's first feature map.
    pub decoder_seed_channels: usize,
    /// Filters of each stride-2 transposed convolution in the decoder.
    pub decoder_filters: Vec<usize>,
    /// Hidden widths of the affordance decoder.
    pub decoder_affordance_widths: Vec<usize>,
    pub image_loss_weight: f64,
    pub affordance_loss_weight: f64,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            conv_filters: vec![32, 32, 16],
            kernel_size: 3,
            conv_stride: 2,
            affordance_widths: vec![32, 16],
            embedding_dim: 256,
            decoder_seed_channels: 16,
            decoder_filters: vec![32, 32],
            decoder_affordance_widths: vec![16, 32],
            image_loss_weight: 0.8,
            affordance_loss_weight: 0.2,
            seed: 0,
        }
    }
}

impl AutoencoderConfig {
    pub fn validate(&self) -> Result<()> {
        let sum = self.image_loss_weight + self.affordance_loss_weight;
        if (sum - 1.0).abs() > 1e-9 || self.image_loss_weight < 0.0 || self.affordance_loss_weight < 0.0 {
            return Err(Error::Config(format!(
                "loss weights {} + {} must be nonnegative and sum to 1",
                self.image_loss_weight, self.affordance_loss_weight
            )));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be positive".into()));
        }
        if self.conv_filters.is_empty() || self.conv_filters.contains(&0) {
            return Err(Error::Config("conv_filters must be nonempty and positive".into()));
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 || self.conv_stride == 0 {
            return Err(Error::Config("kernel_size must be odd and conv_stride positive".into()));
        }
        if [&self.affordance_widths, &self.decoder_filters, &self.decoder_affordance_widths]
            .iter()
            .any(|v| v.contains(&0))
            || self.decoder_seed_channels == 0
        {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        self.decoder_seed_side()?;
        Ok(())
    }

    /// Side of the encoder's last feature map.
    pub fn encoder_side(&self) -> usize {
        self.conv_filters
            .iter()
            .fold(CONTEXT_PX, |side, _| side.div_ceil(self.conv_stride))
    }

    /// Length of the flattened image code fed to the merge layer.
    pub fn image_code_len(&self) -> usize {
        let side = self.encoder_side();
        side * side * self.conv_filters.last().copied().unwrap_or(0)
    }

    pub fn affordance_code_len(&self) -> usize {
        self.affordance_widths.last().copied().unwrap_or(crate::TAG_COUNT)
    }

    /// Side of the decoder's first feature map: the tile side divided by 2
    /// once per transposed convolution.
    pub fn decoder_seed_side(&self) -> Result<usize> {
        let up = 1usize
            .checked_shl(self.decoder_filters.len() as u32)
            .filter(|&u| TILE_PX % u == 0)
            .ok_or_else(|| {
                Error::Config(format!(
                    "{} upsampling layers cannot produce a {TILE_PX}-pixel tile",
                    self.decoder_filters.len()
                ))
            })?;
        Ok(TILE_PX / up)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry() {
        let c = AutoencoderConfig::default();
        c.validate().unwrap();
        assert_eq!(c.encoder_side(), 6);
        assert_eq!(c.image_code_len(), 576);
        assert_eq!(c.decoder_seed_side().unwrap(), 4);
    }

    #[test]
    fn loss_weights_must_sum_to_one() {
        let c = AutoencoderConfig {
            image_loss_weight: 0.5,
            affordance_loss_weight: 0.4,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn too_many_upsampling_layers() {
        let c = AutoencoderConfig {
            decoder_filters: vec![4; 5],
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
