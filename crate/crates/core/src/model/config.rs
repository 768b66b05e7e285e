use std::fmt;
use std::str::FromStr;

use awe_tensorkit::BlockLayout;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output normalization of the word classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoftmaxMode {
    /// One softmax over the whole vocabulary.
    One,
    /// Separate softmax per language block.
    Block,
}

impl FromStr for SoftmaxMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one" => Ok(Self::One),
            "block" => Ok(Self::Block),
            other => Err(Error::Unknown {
                kind: "softmax mode",
                name: other.into(),
                available: "one, block".into(),
            }),
        }
    }
}

impl fmt::Display for SoftmaxMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::One => "one",
            Self::Block => "block",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub stage_channels: Vec<usize>,
    pub stage_blocks: Vec<usize>,
    pub stage_downsample: Vec<bool>,
    /// `[begin, end)` output ranges per language over the word vocabulary.
    pub block_layout: Vec<(usize, usize)>,
    pub softmax_mode: SoftmaxMode,
    /// Weight of the same-word cross-speaker MSE term.
    pub alpha: f64,
    pub lr0: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_patience: usize,
    pub lr_factor: f64,
    pub min_lr: f64,
    pub input_mean_norm: bool,
    /// Training instances are padded/clipped to this many frames, matching
    /// the search window. `None` trains on the raw variable-length segments.
    pub segment_frames: Option<usize>,
    /// Rescales the full gradient to at most this L2 norm before each step.
    pub grad_clip_norm: Option<f64>,
    /// Initializes the second convolution of every residual branch to zero,
    /// so each block starts as its skip path.
    pub zero_init_residual: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Scaled-down network used for desk-scale experiments.
    pub fn desk() -> Self {
        Self {
            input_dim: 64,
            stage_channels: vec![8, 16, 32, 64],
            stage_blocks: vec![1, 1, 1, 1],
            stage_downsample: vec![false, true, true, true],
            block_layout: vec![(0, 10), (10, 20)],
            softmax_mode: SoftmaxMode::One,
            alpha: 0.8,
            lr0: 0.1,
            momentum: 0.9,
            epochs: 80,
            batch_size: 32,
            lr_patience: 5,
            lr_factor: 0.5,
            min_lr: 1e-4,
            input_mean_norm: false,
            segment_frames: Some(80),
            grad_clip_norm: Some(2.0),
            zero_init_residual: false,
            seed: 0,
        }
    }

    /// Full-width ResNet-34-style stack (64/128/256/512 channels, 3/4/6/3 blocks).
    pub fn paper_scale() -> Self {
        Self {
            stage_channels: vec![64, 128, 256, 512],
            stage_blocks: vec![3, 4, 6, 3],
            ..Self::desk()
        }
    }

    /// Sets the output layout to one contiguous block per language.
    pub fn with_vocabulary(mut self, words_per_language: &[usize]) -> Self {
        let mut start = 0;
        self.block_layout = words_per_language
            .iter()
            .map(|&n| {
                let r = (start, start + n);
                start += n;
                r
            })
            .collect();
        self
    }

    pub fn layout(&self) -> Result<BlockLayout> {
        Ok(BlockLayout::new(self.block_layout.clone())?)
    }

    pub fn num_outputs(&self) -> usize {
        self.block_layout.last().map_or(0, |b| b.1)
    }

    pub fn embedding_dim(&self) -> usize {
        self.stage_channels.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::validation("input_dim", "must be at least 1"));
        }
        if self.stage_channels.len() != 4 || self.stage_blocks.len() != 4 || self.stage_downsample.len() != 4 {
            return Err(Error::validation(
                "stage_channels",
                "stage_channels, stage_blocks and stage_downsample need exactly 4 entries",
            ));
        }
        if self.stage_channels.contains(&0) {
            return Err(Error::validation("stage_channels", "channels must be positive"));
        }
        if self.stage_blocks.contains(&0) {
            return Err(Error::validation(
                "stage_blocks",
                "every stage needs at least one block",
            ));
        }
        self.layout()
            .map_err(|e| Error::validation("block_layout", e.to_string()))?;
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::validation("alpha", "must be a finite non-negative number"));
        }
        if self.lr0.is_nan() || self.lr0 <= 0.0 {
            return Err(Error::validation("lr0", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::validation("momentum", "must lie in [0, 1)"));
        }
        if self.epochs == 0 {
            return Err(Error::validation("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be at least 1"));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(Error::validation("lr_factor", "must lie in (0, 1)"));
        }
        if self.min_lr.is_nan() || self.min_lr < 0.0 {
            return Err(Error::validation("min_lr", "must be non-negative"));
        }
        if self.grad_clip_norm.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return Err(Error::validation("grad_clip_norm", "must be positive"));
        }
        if self.segment_frames == Some(0) {
            return Err(Error::validation("segment_frames", "must be at least 1"));
        }
        Ok(())
    }
}
