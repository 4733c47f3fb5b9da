//! Analytic forward FLOPs (2 per multiply-add) of the matmuls in one sample.

use super::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlopBreakdown {
    pub embed: u64,
    pub encoder_linear: u64,
    /// `QKᵀ` and `AV` products in the encoder.
    pub encoder_attention: u64,
    pub decoder_linear: u64,
    pub decoder_attention: u64,
    pub head: u64,
}

impl FlopBreakdown {
    pub fn total(&self) -> u64 {
        self.embed
            + self.encoder_linear
            + self.encoder_attention
            + self.decoder_linear
            + self.decoder_attention
            + self.head
    }
}

/// FLOPs of one forward pass encoding `encoded` tokens and reconstructing
/// `reconstructed` targets. All `N` patches are embedded.
pub fn forward_flops(cfg: &ModelConfig, encoded: usize, reconstructed: usize) -> FlopBreakdown {
    let (n, d, h, pd) = (cfg.num_patches() as u64, cfg.d as u64, cfg.hidden() as u64, cfg.patch_dim() as u64);
    let (k, q) = (encoded as u64, reconstructed as u64);
    let enc = cfg.encoder_depth as u64;
    let dec = cfg.decoder_depth as u64;
    FlopBreakdown {
        embed: 2 * n * pd * d,
        // qkv (3d²) + proj (d²) + two MLP layers (2dh), per token.
        encoder_linear: enc * 2 * k * (4 * d * d + 2 * d * h),
        encoder_attention: enc * 4 * k * k * d,
        // q, proj and MLP per query; kv (2d²) per key.
        decoder_linear: dec * 2 * (q * (2 * d * d + 2 * d * h) + k * 2 * d * d),
        decoder_attention: dec * 4 * q * k * d,
        head: 2 * q * d * pd,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_scales_quadratically() {
        let cfg = ModelConfig::default();
        let a = forward_flops(&cfg, 28, 49).encoder_attention as f64;
        let b = forward_flops(&cfg, 196, 49).encoder_attention as f64;
        assert!((a / b - (28.0f64 / 196.0).powi(2)).abs() < 1e-12);
    }
}
