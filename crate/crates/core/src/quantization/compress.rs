use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::huffman::huffman_encode;
use super::quantize::{quantize_with, QuantConfig};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompressedSize {
    /// `ceil(encoded bits / 8)`.
    pub payload: u64,
    /// Everything a decoder needs besides the payload:
    /// 2 bytes alphabet size, then per codebook entry `ceil(bits/8)` symbol
    /// bytes plus 1 code-length byte.
    pub codebook: u64,
}

impl CompressedSize {
    pub fn total(&self) -> u64 {
        self.payload + self.codebook
    }
}

/// Bytes needed to ship `x` quantized to `bits` and Huffman coded.
pub fn compressed_size(x: &[f32], bits: u8) -> Result<u64> {
    Ok(compressed_size_with(&QuantConfig::default(), x, bits)?.total())
}

pub fn compressed_size_with(cfg: &QuantConfig, x: &[f32], bits: u8) -> Result<CompressedSize> {
    let q = quantize_with(cfg, x, bits)?;
    let code = huffman_encode(&q.symbols)?;
    let symbol_bytes = u64::from(bits).div_ceil(8);
    Ok(CompressedSize {
        payload: (code.bit_len as u64).div_ceil(8),
        codebook: 2 + code.codebook.len() as u64 * (symbol_bytes + 1),
    })
}

/// Synthetic post-layer feature map: exact zero with probability `sparsity`,
/// otherwise a half-normal draw.
pub fn synthetic_feature_map<R: Rng + ?Sized>(n: usize, sparsity: f64, rng: &mut R) -> Vec<f32> {
    (0..n)
        .map(|_| {
            if rng.random::<f64>() < sparsity {
                0.0
            } else {
                let z: f64 = StandardNormal.sample(rng);
                z.abs() as f32
            }
        })
        .collect()
}
