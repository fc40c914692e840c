use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape and switches of the toy decoder stack.
///
/// Each block is: gated multi-head attention, residual add, RMS normalization,
/// two-layer SiLU feed-forward, residual add. With `use_mlp = false` a block is
/// the bare attention sublayer (no residual, normalization or feed-forward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    #[serde(default = "default_d_ff")]
    pub d_ff: usize,
    pub vocab_size: usize,
    #[serde(default = "default_true")]
    pub causal_mask: bool,
    #[serde(default = "default_true")]
    pub use_mlp: bool,
    #[serde(default = "default_eps")]
    pub norm_eps: f64,
}

fn default_d_ff() -> usize {
    0
}

fn default_true() -> bool {
    true
}

fn default_eps() -> f64 {
    1e-6
}

impl ModelConfig {
    /// A config with causal masking and the full block enabled. `d_ff` defaults to `4 * d_model`.
    pub fn new(num_layers: usize, num_heads: usize, d_model: usize, vocab_size: usize) -> Self {
        Self {
            num_layers,
            num_heads,
            d_model,
            d_ff: 4 * d_model,
            vocab_size,
            causal_mask: true,
            use_mlp: true,
            norm_eps: 1e-6,
        }
    }

    pub fn with_causal(mut self, causal: bool) -> Self {
        self.causal_mask = causal;
        self
    }

    pub fn with_mlp(mut self, use_mlp: bool) -> Self {
        self.use_mlp = use_mlp;
        self
    }

    pub fn with_d_ff(mut self, d_ff: usize) -> Self {
        self.d_ff = d_ff;
        self
    }

    /// Per-head key width, `d_model / num_heads`.
    pub fn d_k(&self) -> usize {
        self.d_model / self.num_heads.max(1)
    }

    /// Per-head value width, equal to `d_k`.
    pub fn d_v(&self) -> usize {
        self.d_k()
    }

    pub fn num_gates(&self) -> usize {
        self.num_layers * self.num_heads
    }

    /// Fills in `d_ff = 4 * d_model` when a deserialized config left it at zero.
    pub(crate) fn normalize(mut self) -> Self {
        if self.d_ff == 0 {
            self.d_ff = 4 * self.d_model;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_layers == 0 {
            return bad("num_layers must be >= 1".into());
        }
        if self.num_heads == 0 {
            return bad("num_heads must be >= 1".into());
        }
        if self.d_model == 0 || self.d_model % self.num_heads != 0 {
            return bad(format!(
                "d_model = {} must be a positive multiple of num_heads = {}",
                self.d_model, self.num_heads
            ));
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be >= 1".into());
        }
        if self.use_mlp && self.d_ff == 0 {
            return bad("d_ff must be >= 1 when use_mlp is set".into());
        }
        if !(self.norm_eps.is_finite() && self.norm_eps > 0.0) {
            return bad(format!("norm_eps = {} must be a small positive real", self.norm_eps));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_width_divides_model_width() {
        let c = ModelConfig::new(2, 4, 32, 10);
        assert_eq!(c.d_k(), 8);
        assert_eq!(c.d_v(), 8);
        assert!(c.validate().is_ok());
        assert!(ModelConfig::new(2, 3, 32, 10).validate().is_err());
        assert!(ModelConfig::new(0, 4, 32, 10).validate().is_err());
    }

    #[test]
    fn toml_defaults_fill_in() {
        let c: ModelConfig =
            toml::from_str("num_layers = 2\nnum_heads = 2\nd_model = 8\nvocab_size = 5\n").unwrap();
        let c = c.normalize();
        assert_eq!(c.d_ff, 32);
        assert!(c.causal_mask && c.use_mlp);
        assert_eq!(c.norm_eps, 1e-6);
    }
}
