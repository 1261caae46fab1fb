use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantConfig {
    /// Use `c + 1` levels (scale factor `c`) instead of `2^c`.
    pub linear_levels: bool,
    /// Quantize and entropy-code the raw input when partitioning at layer 0.
    pub quantize_raw_input: bool,
    /// Bit-widths accepted by [`quantize`].
    pub allowed_bits: Vec<u8>,
}

impl Default for QuantConfig {
    fn default() -> Self {
        QuantConfig { linear_levels: false, quantize_raw_input: false, allowed_bits: (1..=16).collect() }
    }
}

impl QuantConfig {
    /// Number of quantization levels for `bits`.
    pub fn levels(&self, bits: u8) -> u32 {
        if self.linear_levels {
            u32::from(bits) + 1
        } else {
            1u32 << bits
        }
    }

    fn check_bits(&self, bits: u8) -> Result<()> {
        if bits == 0 || bits > 16 || !self.allowed_bits.contains(&bits) {
            return Err(Error::UnsupportedBits(bits));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub symbols: Vec<u32>,
    pub min: f32,
    pub max: f32,
    pub bits: u8,
    pub levels: u32,
}

impl QuantizedTensor {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// Min-max quantization with `2^bits` levels and round-half-away-from-zero.
pub fn quantize(x: &[f32], bits: u8) -> Result<QuantizedTensor> {
    quantize_with(&QuantConfig::default(), x, bits)
}

pub fn quantize_with(cfg: &QuantConfig, x: &[f32], bits: u8) -> Result<QuantizedTensor> {
    cfg.check_bits(bits)?;
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let (min, max) = x.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let levels = cfg.levels(bits);
    let symbols = if max == min {
        vec![0; x.len()]
    } else {
        let top = f64::from(levels - 1);
        let (lo, span) = (f64::from(min), f64::from(max) - f64::from(min));
        // f64::round rounds half away from zero; the argument is non-negative.
        x.iter().map(|&v| ((top * (f64::from(v) - lo) / span).round() as u32).min(levels - 1)).collect()
    };
    Ok(QuantizedTensor { symbols, min, max, bits, levels })
}

/// Reconstructs values in f64 so the reconstruction error is not swamped by
/// f32 rounding at high bit-widths.
pub fn dequantize(q: &QuantizedTensor) -> Vec<f64> {
    let (lo, hi) = (f64::from(q.min), f64::from(q.max));
    if hi == lo {
        return vec![lo; q.symbols.len()];
    }
    let step = (hi - lo) / f64::from(q.levels - 1);
    q.symbols.iter().map(|&s| if s == q.levels - 1 { hi } else { lo + f64::from(s) * step }).collect()
}
