use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderBlock {
    pub channels: usize,
    pub downsample: bool,
}

/// Architecture shared by the student (3 input channels) and the teacher (1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub encoder_blocks: Vec<EncoderBlock>,
    /// Decoder block `i` mirrors encoder block `len - 1 - i`.
    pub decoder_channels: Vec<usize>,
    pub patch_size: usize,
    pub transformer_layers: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Hidden width of the MLP that maps the first token to bin logits.
    pub head_hidden: usize,
    /// Output tokens `1..=range_kernels` become range-attention kernels.
    pub range_kernels: usize,
    /// Side of the learned positional grid, resized to the patch grid.
    pub pos_grid: usize,
    pub n_bins: usize,
    pub d_min: f32,
    pub d_max: f32,
    /// Decoder blocks whose outputs are exposed as feature taps.
    pub tap_indices: Vec<usize>,
}

impl NetworkConfig {
    /// Desk-scale student: four halving blocks, 8-pixel patches, 64 bins.
    pub fn toy_student() -> Self {
        NetworkConfig {
            in_channels: 3,
            encoder_blocks: [8, 16, 16, 32]
                .into_iter()
                .map(|channels| EncoderBlock {
                    channels,
                    downsample: true,
                })
                .collect(),
            decoder_channels: vec![32, 16, 16, 8],
            patch_size: 8,
            transformer_layers: 4,
            embed_dim: 32,
            heads: 4,
            ffn_dim: 64,
            head_hidden: 64,
            range_kernels: 16,
            pos_grid: 16,
            n_bins: 64,
            d_min: 1.0,
            d_max: 10.0,
            tap_indices: vec![1, 2],
        }
    }

    /// The teacher differs from the student only in its input channels.
    pub fn toy_teacher() -> Self {
        NetworkConfig {
            in_channels: 1,
            ..Self::toy_student()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(invalid!("in_channels must be positive"));
        }
        if self.encoder_blocks.is_empty() {
            return Err(invalid!("need at least one encoder block"));
        }
        if self.decoder_channels.len() != self.encoder_blocks.len() {
            return Err(invalid!(
                "{} decoder blocks for {} encoder blocks",
                self.decoder_channels.len(),
                self.encoder_blocks.len()
            ));
        }
        if self.encoder_blocks.iter().any(|b| b.channels == 0) || self.decoder_channels.contains(&0) {
            return Err(invalid!("channel counts must be positive"));
        }
        if self.patch_size == 0 {
            return Err(invalid!("patch size must be positive"));
        }
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(invalid!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim,
                self.heads
            ));
        }
        if self.ffn_dim == 0 || self.head_hidden == 0 || self.range_kernels == 0 || self.pos_grid == 0 {
            return Err(invalid!("ffn_dim, head_hidden, range_kernels and pos_grid must be positive"));
        }
        if self.n_bins < 2 {
            return Err(invalid!("need at least 2 bins, got {}", self.n_bins));
        }
        if !(self.d_min > 0.0 && self.d_min < self.d_max) {
            return Err(invalid!("need 0 < d_min < d_max"));
        }
        if let Some(&t) = self.tap_indices.iter().find(|&&t| t >= self.decoder_channels.len()) {
            return Err(invalid!("tap index {t} out of range"));
        }
        Ok(())
    }

    pub fn downsamples(&self) -> usize {
        self.encoder_blocks.iter().filter(|b| b.downsample).count()
    }

    /// Inputs are zero-padded to a multiple of `lcm(2^downsamples, patch_size)`.
    pub fn size_multiple(&self) -> usize {
        lcm(1 << self.downsamples(), self.patch_size)
    }

    /// Padded size and the leading pad for one axis.
    pub fn padded_len(&self, n: usize) -> (usize, usize) {
        let m = self.size_multiple();
        let padded = n.div_ceil(m) * m;
        (padded, (padded - n) / 2)
    }

    /// Resolution of each decoder block's output for an (already padded) input.
    pub fn decoder_resolutions(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        let mut inputs = Vec::with_capacity(self.encoder_blocks.len());
        let (mut ch, mut cw) = (h, w);
        for b in &self.encoder_blocks {
            inputs.push((ch, cw));
            if b.downsample {
                ch /= 2;
                cw /= 2;
            }
        }
        inputs.into_iter().rev().collect()
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}
