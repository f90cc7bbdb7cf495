//! Decoder shape and generation settings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Abstract token id. The decoder has no tokenizer; ids only need to be
/// consistent between the task builder and the scorer.
pub type TokenId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    /// Strength of the additive prior-bias logit head. Zero disables it.
    pub prior_bias_strength: f64,
    /// Optional stop token for greedy decoding.
    pub eos_token: Option<TokenId>,
}

impl Default for DecoderConfig {
    /// The default desk-scale shape: 8 layers, width 64, 4 heads, vocabulary
    /// 256. Small enough for exhaustive property tests, deep enough for
    /// nontrivial attention structure.
    fn default() -> Self {
        Self {
            num_layers: 8,
            hidden_dim: 64,
            num_heads: 4,
            vocab_size: 256,
            max_seq: 320,
            prior_bias_strength: 0.0,
            eos_token: None,
        }
    }
}

impl DecoderConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 2 {
            return Err(Error::InvalidConfig(format!(
                "num_layers {} must be at least 2",
                self.num_layers
            )));
        }
        if self.hidden_dim == 0 || self.num_heads == 0 || !self.hidden_dim.is_multiple_of(self.num_heads)
        {
            return Err(Error::InvalidConfig(format!(
                "hidden_dim {} must be a positive multiple of num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.vocab_size == 0 || self.max_seq == 0 {
            return Err(Error::InvalidConfig(
                "vocab_size and max_seq must be positive".into(),
            ));
        }
        if self.prior_bias_strength < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "prior_bias_strength {} must be nonnegative",
                self.prior_bias_strength
            )));
        }
        Ok(())
    }
}
