use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub enc_layers: usize,
    pub pretrain_dec_layers: usize,
    pub finetune_dec_layers: usize,
    /// Per-stage patch stride `p`; one token spans `p²` steps.
    pub patch_stride: usize,
    pub dropout: f64,
    pub d_x: usize,
    pub d_y: usize,
    pub input_len: usize,
    pub label_len: usize,
    pub pred_len: usize,
}

impl ModelConfig {
    /// Full-width defaults: 784-step input, 196 patches, 3 encoder layers.
    pub fn full(d_x: usize) -> Self {
        ModelConfig {
            d_model: 512,
            n_heads: 8,
            d_ff: 2048,
            enc_layers: 3,
            pretrain_dec_layers: 1,
            finetune_dec_layers: 1,
            patch_stride: 2,
            dropout: 0.05,
            d_x,
            d_y: d_x,
            input_len: 784,
            label_len: 48,
            pred_len: 24,
        }
    }

    /// Small widths for CPU runs.
    pub fn desk(d_x: usize) -> Self {
        ModelConfig {
            d_model: 32,
            n_heads: 2,
            d_ff: 64,
            input_len: 64,
            label_len: 16,
            pred_len: 8,
            ..ModelConfig::full(d_x)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.d_model == 0 || !self.d_model.is_multiple_of(2) {
            return fail(format!("d_model must be positive and even, got {}", self.d_model));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.enc_layers == 0 {
            return fail("enc_layers must be at least 1".into());
        }
        if self.d_ff == 0 || self.d_x == 0 || self.pred_len == 0 {
            return fail("d_ff, d_x and pred_len must be positive".into());
        }
        if self.d_y != self.d_x {
            return fail(format!(
                "multivariate forecasting needs d_y == d_x, got {} and {}",
                self.d_y, self.d_x
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        let total = self.patch_total();
        if self.patch_stride == 0 || self.input_len == 0 || !self.input_len.is_multiple_of(total) {
            return fail(format!(
                "input_len {} is not divisible by p² = {} (p = {})",
                self.input_len, total, self.patch_stride
            ));
        }
        if self.label_len > self.input_len || !self.label_len.is_multiple_of(total) {
            return fail(format!(
                "label_len {} must be a multiple of p² = {} and at most input_len {}",
                self.label_len, total, self.input_len
            ));
        }
        Ok(())
    }

    /// Time steps per patch token, `p²`.
    pub fn patch_total(&self) -> usize {
        self.patch_stride * self.patch_stride
    }

    /// Encoder token count `L = L_x / p²`.
    pub fn n_patches(&self) -> usize {
        self.input_len / self.patch_total().max(1)
    }

    pub fn label_tokens(&self) -> usize {
        self.label_len / self.patch_total().max(1)
    }

    /// Fine-tuning decoder length: patched label tokens plus one token per
    /// forecast step.
    pub fn decoder_len(&self) -> usize {
        self.label_tokens() + self.pred_len
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Reconstruction head width `p² · d_x`.
    pub fn recon_width(&self) -> usize {
        self.patch_total() * self.d_x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let full = ModelConfig::full(7);
        full.validate().unwrap();
        assert_eq!(full.n_patches(), 196);
        assert_eq!(full.recon_width(), 28);
        assert_eq!(full.enc_layers, 3);
        assert_eq!(full.pretrain_dec_layers, 1);
        ModelConfig::desk(3).validate().unwrap();
    }

    #[test]
    fn rejects_bad_configs() {
        let base = ModelConfig::desk(2);
        for bad in [
            ModelConfig {
                n_heads: 3,
                ..base.clone()
            },
            ModelConfig {
                enc_layers: 0,
                ..base.clone()
            },
            ModelConfig {
                input_len: 66,
                ..base.clone()
            },
            ModelConfig {
                label_len: 6,
                ..base.clone()
            },
            ModelConfig {
                d_model: 31,
                n_heads: 1,
                ..base.clone()
            },
            ModelConfig { d_y: 1, ..base.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }
}
