use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{DEFAULT_FUTURE, DEFAULT_HISTORY};

/// Network shape. Keys in config files match the field names, with the mode
/// and horizon counts spelled `K`, `H` and `P`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub ff_dim: usize,
    pub enc_layers: usize,
    pub enc_heads: usize,
    pub dec_layers: usize,
    #[serde(rename = "K")]
    pub modes: usize,
    #[serde(rename = "H")]
    pub history: usize,
    #[serde(rename = "P")]
    pub future: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small enough to train on a laptop CPU.
    pub fn desk() -> Self {
        Self {
            d_model: 64,
            ff_dim: 256,
            enc_layers: 2,
            enc_heads: 2,
            dec_layers: 1,
            modes: 3,
            history: DEFAULT_HISTORY,
            future: DEFAULT_FUTURE,
        }
    }

    /// The full-size reference shape.
    pub fn full() -> Self {
        Self {
            d_model: 256,
            ff_dim: 2048,
            enc_layers: 4,
            enc_heads: 4,
            dec_layers: 2,
            modes: 7,
            history: DEFAULT_HISTORY,
            future: DEFAULT_FUTURE,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            other => Err(Error::Config(format!("unknown model preset `{other}` (expected desk or full)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("ff_dim", self.ff_dim),
            ("enc_heads", self.enc_heads),
            ("K", self.modes),
            ("H", self.history),
            ("P", self.future),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.enc_heads) {
            return Err(Error::Config(format!(
                "model.d_model ({}) must be divisible by model.enc_heads ({})",
                self.d_model, self.enc_heads
            )));
        }
        Ok(())
    }
}
