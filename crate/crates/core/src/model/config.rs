use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layers::NormKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Patn,
    Apatn,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Patn => "patn",
            Variant::Apatn => "apatn",
        }
    }

    pub fn default_blocks(self) -> usize {
        match self {
            Variant::Patn => 9,
            Variant::Apatn => 5,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "patn" => Ok(Variant::Patn),
            "apatn" => Ok(Variant::Apatn),
            other => Err(Error::config(format!("unknown variant {other:?} (expected patn or apatn)"))),
        }
    }
}

/// Generator architecture. Parameter counts are a pure function of this.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub num_blocks: usize,
    /// Width `C` of the image and pose codes inside the transfer network.
    pub base_channels: usize,
    /// Encoder widths after each of its three convolutions; the last equals `base_channels`.
    pub encoder_channels: Vec<usize>,
    /// `[height, width]` of input images, both divisible by 4.
    pub input_size: [usize; 2],
    /// Reduced width of the 1x1 projections inside aligned blocks.
    pub attn_reduced_channels: usize,
    pub heatmap_sigma: f64,
    pub dropout_rate: f64,
    pub encoder_norm: NormKind,
    pub block_norm: NormKind,
    /// Upper bound in bytes for one batch of `(hw) x (hw)` alignment matrices.
    pub alignment_memory_cap: usize,
    pub init_std: f64,
}

pub const DEFAULT_ALIGNMENT_CAP: usize = 256 * 1024 * 1024;

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::new(Variant::Apatn)
    }
}

impl ModelConfig {
    pub fn new(variant: Variant) -> Self {
        let c = 256;
        ModelConfig {
            variant,
            num_blocks: variant.default_blocks(),
            base_channels: c,
            encoder_channels: vec![64, 128, c],
            input_size: [64, 64],
            attn_reduced_channels: c / 8,
            heatmap_sigma: default_sigma(64, 64),
            dropout_rate: 0.5,
            encoder_norm: NormKind::Batch,
            block_norm: NormKind::Instance,
            alignment_memory_cap: DEFAULT_ALIGNMENT_CAP,
            init_std: 0.02,
        }
    }

    /// Replaces `C` and everything derived from it: the last encoder width and
    /// the reduced attention width (`C / 8`, at least 1).
    pub fn with_channels(mut self, c: usize) -> Self {
        self.base_channels = c;
        if let Some(last) = self.encoder_channels.last_mut() {
            *last = c;
        }
        self.attn_reduced_channels = (c / 8).max(1);
        self
    }

    pub fn with_input_size(mut self, h: usize, w: usize) -> Self {
        self.input_size = [h, w];
        self.heatmap_sigma = default_sigma(h, w);
        self
    }

    pub fn code_size(&self) -> (usize, usize) {
        (self.input_size[0] / 4, self.input_size[1] / 4)
    }

    /// Channel count of the shape-encoder input.
    pub fn pose_input_channels(&self) -> usize {
        match self.variant {
            Variant::Patn => 2 * crate::pose::NUM_JOINTS,
            Variant::Apatn => crate::pose::NUM_JOINTS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.num_blocks < 1 {
            problems.push("num_blocks must be >= 1".to_string());
        }
        if self.base_channels < 1 {
            problems.push("base_channels must be >= 1".to_string());
        }
        if self.encoder_channels.len() != 3 {
            problems.push(format!(
                "encoder_channels must list 3 widths, got {}",
                self.encoder_channels.len()
            ));
        } else {
            if self.encoder_channels.windows(2).any(|w| w[0] >= w[1]) || self.encoder_channels[0] == 0 {
                problems.push(format!(
                    "encoder_channels {:?} must be strictly increasing and positive",
                    self.encoder_channels
                ));
            }
            if self.encoder_channels[2] != self.base_channels {
                problems.push(format!(
                    "last encoder width {} must equal base_channels {}",
                    self.encoder_channels[2], self.base_channels
                ));
            }
        }
        let [h, w] = self.input_size;
        if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
            problems.push(format!("input_size {h}x{w} must be positive and divisible by 4"));
        }
        if self.attn_reduced_channels < 1 {
            problems.push("attn_reduced_channels must be >= 1".to_string());
        }
        if !(self.heatmap_sigma > 0.0 && self.heatmap_sigma.is_finite()) {
            problems.push("heatmap_sigma must be positive".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            problems.push("dropout_rate must lie in [0, 1)".to_string());
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            problems.push("init_std must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::config(problems.join("; ")))
        }
    }
}

/// Heatmap width: 1.5 px at 64 px on the short side, scaled proportionally.
pub fn default_sigma(h: usize, w: usize) -> f64 {
    1.5 * h.min(w) as f64 / 64.0
}
