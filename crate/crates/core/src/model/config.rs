use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::wavelet::{KernelMap, KernelMapMode, WaveletMode};

/// Output head on top of the decoder stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HeadKind {
    /// Next-token logits at every position.
    Lm,
    /// Class logits from the last position's embedding.
    Classify { n_classes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of decoder blocks.
    pub n_layers: usize,
    pub context_len: usize,
    pub embed_dim: usize,
    pub ff_dim: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub head: HeadKind,
    /// Width of the dense layer between the decoder and the output layer.
    pub penultimate_dim: usize,
    /// GELU after the penultimate dense layer.
    pub penultimate_gelu: bool,
    pub wavelet_mode: WaveletMode,
    pub kernel_map_mode: KernelMapMode,
    /// One learnable kernel bank for all gaps instead of one per gap.
    pub share_across_layers: bool,
    /// Also smooth the output of the final block.
    pub apply_after_last: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small configuration that trains on one CPU core.
    pub fn desk() -> Self {
        Self {
            n_layers: 4,
            context_len: 128,
            embed_dim: 64,
            ff_dim: 256,
            n_heads: 4,
            vocab_size: 8,
            head: HeadKind::Lm,
            penultimate_dim: 512,
            penultimate_gelu: true,
            wavelet_mode: WaveletMode::Off,
            kernel_map_mode: KernelMapMode::LinearSize,
            share_across_layers: false,
            apply_after_last: false,
        }
    }

    /// Ten blocks, context 512, width 128, character vocabulary.
    pub fn reference() -> Self {
        Self {
            n_layers: 10,
            context_len: 512,
            embed_dim: 128,
            ff_dim: 512,
            n_heads: 8,
            vocab_size: 27,
            penultimate_dim: 2048,
            ..Self::desk()
        }
    }

    /// Six blocks of width 32 with a ten-way classification head.
    pub fn listops(context_len: usize) -> Self {
        Self {
            n_layers: 6,
            context_len,
            embed_dim: 32,
            ff_dim: 128,
            n_heads: 4,
            vocab_size: crate::data::listops::VOCAB_SIZE,
            head: HeadKind::Classify { n_classes: 10 },
            penultimate_dim: 2048,
            ..Self::desk()
        }
    }

    pub fn with_mode(mut self, mode: WaveletMode) -> Self {
        self.wavelet_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return config_err("at least one decoder block is required");
        }
        if self.embed_dim < 4 || self.embed_dim % 2 != 0 {
            return config_err(format!("embed_dim {} must be even and at least 4", self.embed_dim));
        }
        if self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
            return config_err(format!("{} heads do not divide embed_dim {}", self.n_heads, self.embed_dim));
        }
        if self.context_len < 2 {
            return config_err("context_len must be at least 2");
        }
        if self.vocab_size == 0 || self.ff_dim == 0 || self.penultimate_dim == 0 {
            return config_err("vocab_size, ff_dim and penultimate_dim must be positive");
        }
        if let HeadKind::Classify { n_classes } = self.head {
            if n_classes < 2 {
                return config_err("a classification head needs at least two classes");
            }
        }
        Ok(())
    }

    pub fn kernel_map(&self) -> Result<KernelMap> {
        KernelMap::new(self.embed_dim, self.context_len, self.kernel_map_mode)
    }

    /// Number of places the wavelet operator is applied.
    pub fn n_gaps(&self) -> usize {
        self.n_layers - 1 + usize::from(self.apply_after_last)
    }

    /// Number of distinct learnable kernel banks.
    pub fn n_banks(&self) -> usize {
        match (self.wavelet_mode, self.share_across_layers) {
            (WaveletMode::Learnable, _) if self.n_gaps() == 0 => 0,
            (WaveletMode::Learnable, true) => 1,
            (WaveletMode::Learnable, false) => self.n_gaps(),
            _ => 0,
        }
    }
}
