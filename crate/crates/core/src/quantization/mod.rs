//! Feature-map quantization, Huffman coding and the transmitted-size model.

mod compress;
pub mod huffman;
mod quantize;

pub use compress::{compressed_size, compressed_size_with, synthetic_feature_map, CompressedSize};
pub use huffman::{huffman_decode, huffman_encode, Codeword, HuffmanCode};
pub use quantize::{dequantize, quantize, quantize_with, QuantConfig, QuantizedTensor};

use crate::error::{Error, Result};
use crate::profile::ModelProfile;

/// Accuracy of exit `exit_id` when its feature map is quantized to `bits` at
/// partition point `pp`. Partitions that send nothing (`pp` = branch length)
/// or send the unquantized input (`pp` = 0 without `quantize_raw_input`) keep
/// the branch accuracy.
pub fn accuracy_after(profile: &ModelProfile, cfg: &QuantConfig, exit_id: usize, pp: usize, bits: u8) -> Result<f64> {
    let exit = profile.topology.exit(exit_id).ok_or_else(|| Error::InvalidAction(format!("unknown exit {exit_id}")))?;
    if pp > exit.layer_count {
        return Err(Error::InvalidAction(format!(
            "partition point {pp} beyond exit {exit_id} length {}",
            exit.layer_count
        )));
    }
    if pp == exit.layer_count || (pp == 0 && !cfg.quantize_raw_input) {
        return Ok(exit.accuracy);
    }
    let drop = profile.quant_accuracy.get(exit_id, pp, bits).ok_or(Error::MissingAccuracyEntry {
        exit_id,
        layer_index: pp,
        bits,
    })?;
    Ok((exit.accuracy - drop).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_branch_keeps_branch_accuracy() {
        let p = ModelProfile::bundled();
        let cfg = QuantConfig::default();
        for bits in [4, 8, 12, 16] {
            assert_eq!(accuracy_after(&p, &cfg, 3, 20, bits).unwrap(), 0.836);
            assert_eq!(accuracy_after(&p, &cfg, 1, 9, bits).unwrap(), 0.787);
        }
    }

    #[test]
    fn more_bits_never_hurt() {
        let p = ModelProfile::bundled();
        let cfg = QuantConfig::default();
        let a8 = accuracy_after(&p, &cfg, 2, 5, 8).unwrap();
        let a16 = accuracy_after(&p, &cfg, 2, 5, 16).unwrap();
        assert!(a16 >= a8);
        assert!(a8 < 0.817);
    }

    #[test]
    fn raw_input_quantization_is_opt_in() {
        let p = ModelProfile::bundled();
        let off = QuantConfig::default();
        let on = QuantConfig { quantize_raw_input: true, ..Default::default() };
        assert_eq!(accuracy_after(&p, &off, 1, 0, 4).unwrap(), 0.787);
        assert!(accuracy_after(&p, &on, 1, 0, 4).unwrap() < 0.787);
    }

    #[test]
    fn missing_entry_is_explicit() {
        let p = ModelProfile::bundled();
        let err = accuracy_after(&p, &QuantConfig::default(), 1, 3, 7).unwrap_err();
        assert!(matches!(err, Error::MissingAccuracyEntry { exit_id: 1, layer_index: 3, bits: 7 }));
    }

    #[test]
    fn partition_beyond_branch_rejected() {
        let p = ModelProfile::bundled();
        assert!(accuracy_after(&p, &QuantConfig::default(), 1, 15, 8).is_err());
    }
}
