//! Minimal reverse-mode differentiation and the two diffusion networks: a roll
//! encoder (per-roll bidirectional GRUs summed into transformer blocks) and a
//! FiLM-conditioned non-causal WaveNet-style denoiser.
//!
//! The same [`DiffusionNet`] serves both stages. The synthesis stage denoises
//! mel frames and adds an auxiliary mel head; the bend stage denoises the bend
//! roll directly and only sees the frame/onset/offset rolls.
//!
//! Classifier-free guidance replaces each dropped condition with its own learned
//! null embedding. The roll-derived conditioning `E_R` is one of the three
//! dropped conditions (with the performer embedding and the auxiliary mel).

mod gradcheck;
mod layers;
mod model;
mod params;
mod tape;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roll_codec::N_PITCHES;

pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{film, step_embedding, BiGru, Conv3, LayerNorm, Linear, TransformerBlock};
pub use model::{CachedEncoding, Conditioning, Denoiser, DiffusionNet, Encoded, Encoder, Keep};
pub use params::{Builder, ParamId, ParamStore};
pub use tape::{Grads, Mat, Tape, Var};

/// Which of the two diffusion models a network implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Synthesis,
    Bend,
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthesis" => Ok(Stage::Synthesis),
            "bend" => Ok(Stage::Bend),
            other => Err(Error::InvalidInput(format!("unknown stage {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_mels: usize,
    pub n_pitches: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub transformer_layers: usize,
    pub attention_heads: usize,
    pub ffn_hidden: usize,
    pub residual_channels: usize,
    pub residual_layers: usize,
    pub n_performers: usize,
    /// Synthesis stage without the bend roll input.
    pub no_bend: bool,
    /// Parameter initialization seed.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 32,
            n_mels: 128,
            n_pitches: N_PITCHES,
            gru_hidden: 16,
            gru_layers: 1,
            transformer_layers: 2,
            attention_heads: 2,
            ffn_hidden: 64,
            residual_channels: 32,
            residual_layers: 4,
            n_performers: 4,
            no_bend: false,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// Full-size topology (~25M parameters per stage).
    pub fn full_scale(n_performers: usize) -> Self {
        ModelConfig {
            d_model: 256,
            n_mels: 128,
            n_pitches: N_PITCHES,
            gru_hidden: 128,
            gru_layers: 2,
            transformer_layers: 6,
            attention_heads: 4,
            ffn_hidden: 1024,
            residual_channels: 256,
            residual_layers: 20,
            n_performers,
            no_bend: false,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("d_model", self.d_model),
            ("n_mels", self.n_mels),
            ("n_pitches", self.n_pitches),
            ("gru_hidden", self.gru_hidden),
            ("gru_layers", self.gru_layers),
            ("transformer_layers", self.transformer_layers),
            ("attention_heads", self.attention_heads),
            ("ffn_hidden", self.ffn_hidden),
            ("residual_channels", self.residual_channels),
            ("residual_layers", self.residual_layers),
            ("n_performers", self.n_performers),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.d_model % self.attention_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.attention_heads
            )));
        }
        Ok(())
    }

    /// Channels of the diffused signal for `stage`.
    pub fn channels(&self, stage: Stage) -> usize {
        match stage {
            Stage::Synthesis => self.n_mels,
            Stage::Bend => self.n_pitches,
        }
    }
}
