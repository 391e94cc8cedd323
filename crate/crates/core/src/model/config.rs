use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{MAX_POSITIONS, SPECIAL_TOKENS};

/// Architecture and initialization settings. The defaults are the desk-scale
/// configuration; `vocab_size` must be set from the tokenizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// Graph convolution layers over the coreference graph; 0 disables fusion.
    pub gcn_layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub max_positions: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            enc_layers: 2,
            dec_layers: 2,
            gcn_layers: 1,
            d_model: 64,
            heads: 4,
            ffn_dim: 128,
            dropout: 0.1,
            max_positions: MAX_POSITIONS,
            vocab_size: 0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.heads == 0 || self.ffn_dim == 0 {
            return bad("d_model, heads and ffn_dim must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.max_positions == 0 || self.max_positions > MAX_POSITIONS {
            return bad(format!("max_positions must be in 1..={MAX_POSITIONS}"));
        }
        if self.vocab_size <= SPECIAL_TOKENS.len() {
            return bad(format!("vocab_size {} leaves no room beyond the reserved tokens", self.vocab_size));
        }
        Ok(())
    }
}
