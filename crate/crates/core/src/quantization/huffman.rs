//! Canonical Huffman coding over `u32` symbols.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Codeword {
    /// Right-aligned code bits, MSB first on the wire.
    pub code: u64,
    pub len: u8,
}

impl fmt::Display for Codeword {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in (0..self.len).rev() {
            f.write_str(if (self.code >> i) & 1 == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanCode {
    pub codebook: BTreeMap<u32, Codeword>,
    /// Packed MSB-first; the final byte is zero-padded.
    pub encoded: Vec<u8>,
    pub bit_len: usize,
    pub original_length: usize,
}

impl HuffmanCode {
    pub fn encoded_bits(&self) -> usize {
        self.bit_len
    }
}

/// Optimal code lengths from symbol frequencies. Ties are broken by symbol
/// value (leaves) and creation order (internal nodes), so the result is
/// deterministic.
pub fn code_lengths(freqs: &BTreeMap<u32, u64>) -> BTreeMap<u32, u8> {
    if freqs.len() == 1 {
        return freqs.keys().map(|&s| (s, 1)).collect();
    }
    let symbols: Vec<u32> = freqs.keys().copied().collect();
    let mut parent: Vec<usize> = Vec::with_capacity(2 * symbols.len());
    let mut heap = BinaryHeap::new();
    for (i, &s) in symbols.iter().enumerate() {
        heap.push(Reverse((freqs[&s], i)));
        parent.push(usize::MAX);
    }
    while heap.len() > 1 {
        let Reverse((wa, a)) = heap.pop().unwrap();
        let Reverse((wb, b)) = heap.pop().unwrap();
        let node = parent.len();
        parent.push(usize::MAX);
        parent[a] = node;
        parent[b] = node;
        heap.push(Reverse((wa + wb, node)));
    }
    let mut depth = vec![0u8; parent.len()];
    // Parents are always created after their children, so walk backwards.
    for i in (0..parent.len()).rev() {
        if parent[i] != usize::MAX {
            depth[i] = depth[parent[i]] + 1;
        }
    }
    symbols.iter().enumerate().map(|(i, &s)| (s, depth[i])).collect()
}

/// Assigns canonical codes: shorter first, then by symbol value.
pub fn canonical_codebook(lengths: &BTreeMap<u32, u8>) -> BTreeMap<u32, Codeword> {
    let mut order: Vec<(u8, u32)> = lengths.iter().map(|(&s, &l)| (l, s)).collect();
    order.sort_unstable();
    let mut book = BTreeMap::new();
    let mut code = 0u64;
    let mut prev_len = order.first().map_or(0, |&(l, _)| l);
    for (len, sym) in order {
        code <<= len - prev_len;
        book.insert(sym, Codeword { code, len });
        code += 1;
        prev_len = len;
    }
    book
}

pub fn frequencies(symbols: &[u32]) -> BTreeMap<u32, u64> {
    let mut freqs = BTreeMap::new();
    for &s in symbols {
        *freqs.entry(s).or_insert(0) += 1;
    }
    freqs
}

pub fn huffman_encode(symbols: &[u32]) -> Result<HuffmanCode> {
    if symbols.is_empty() {
        return Err(Error::EmptyInput);
    }
    let codebook = canonical_codebook(&code_lengths(&frequencies(symbols)));
    let mut w = BitWriter::default();
    for s in symbols {
        w.put(codebook[s]);
    }
    Ok(HuffmanCode { codebook, bit_len: w.bits, encoded: w.bytes, original_length: symbols.len() })
}

pub fn huffman_decode(code: &HuffmanCode) -> Result<Vec<u32>> {
    let corrupt = |msg: String| Error::CorruptStream(msg);
    if code.bit_len > code.encoded.len() * 8 {
        return Err(corrupt(format!("bit length {} exceeds {} payload bytes", code.bit_len, code.encoded.len())));
    }
    let max_len = code.codebook.values().map(|c| c.len).max().unwrap_or(0);
    if max_len == 0 || max_len > 64 {
        return Err(corrupt("empty or oversized codebook".into()));
    }
    let mut lookup: HashMap<(u8, u64), u32> = HashMap::with_capacity(code.codebook.len());
    for (&sym, cw) in &code.codebook {
        if lookup.insert((cw.len, cw.code), sym).is_some() {
            return Err(corrupt(format!("duplicate codeword {cw}")));
        }
    }
    check_prefix_free(&code.codebook)?;

    let mut out = Vec::with_capacity(code.original_length);
    let (mut acc, mut len) = (0u64, 0u8);
    for i in 0..code.bit_len {
        let bit = (code.encoded[i / 8] >> (7 - i % 8)) & 1;
        acc = (acc << 1) | u64::from(bit);
        len += 1;
        if let Some(&sym) = lookup.get(&(len, acc)) {
            out.push(sym);
            acc = 0;
            len = 0;
        } else if len >= max_len {
            return Err(corrupt(format!("no codeword matches bits ending at offset {i}")));
        }
    }
    if len != 0 {
        return Err(corrupt(format!("{len} trailing bits do not form a codeword")));
    }
    if out.len() != code.original_length {
        return Err(corrupt(format!("decoded {} symbols, expected {}", out.len(), code.original_length)));
    }
    Ok(out)
}

fn check_prefix_free(book: &BTreeMap<u32, Codeword>) -> Result<()> {
    // Left-align every code to 64 bits; in sorted order a prefix would be
    // immediately followed by a code it covers.
    let mut spans: Vec<(u64, u8)> = book.values().map(|c| (c.code << (64 - u32::from(c.len)), c.len)).collect();
    spans.sort_unstable();
    for w in spans.windows(2) {
        let (a, la) = w[0];
        let (b, _) = w[1];
        let mask = if la == 64 { u64::MAX } else { !(u64::MAX >> la) };
        if a & mask == b & mask {
            return Err(Error::CorruptStream("codebook is not prefix-free".into()));
        }
    }
    Ok(())
}

#[derive(Default)]
struct BitWriter {
    bytes: Vec<u8>,
    bits: usize,
}

impl BitWriter {
    fn put(&mut self, cw: Codeword) {
        for i in (0..cw.len).rev() {
            if self.bits.is_multiple_of(8) {
                self.bytes.push(0);
            }
            if (cw.code >> i) & 1 == 1 {
                *self.bytes.last_mut().unwrap() |= 1 << (7 - self.bits % 8);
            }
            self.bits += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_symbol_alphabet_gets_one_bit_codes() {
        let code = huffman_encode(&[0, 0, 1, 0]).unwrap();
        assert_eq!(code.bit_len, 4);
        assert_eq!(code.codebook[&0].to_string(), "0");
        assert_eq!(code.codebook[&1].to_string(), "1");
        assert_eq!(huffman_decode(&code).unwrap(), [0, 0, 1, 0]);
    }

    #[test]
    fn single_symbol_alphabet_uses_code_zero() {
        let code = huffman_encode(&[7; 13]).unwrap();
        assert_eq!(code.codebook.len(), 1);
        assert_eq!(code.codebook[&7].to_string(), "0");
        assert_eq!(code.bit_len, 13);
        assert_eq!(huffman_decode(&code).unwrap(), vec![7; 13]);
    }

    #[test]
    fn classic_frequencies_give_expected_lengths() {
        // Frequencies 5,9,12,13,16,45 -> lengths 4,4,3,3,3,1 (CLRS example).
        let mut f = BTreeMap::new();
        for (s, w) in [(0, 45), (1, 13), (2, 12), (3, 16), (4, 9), (5, 5)] {
            f.insert(s, w);
        }
        let l = code_lengths(&f);
        assert_eq!(l.values().copied().collect::<Vec<_>>(), [1, 3, 3, 3, 4, 4]);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(huffman_encode(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn truncated_stream_is_an_error() {
        let mut code = huffman_encode(&[0, 1, 2, 3, 3, 3, 3, 2]).unwrap();
        code.bit_len -= 1;
        assert!(matches!(huffman_decode(&code), Err(Error::CorruptStream(_))));
    }

    #[test]
    fn invalid_bit_for_single_symbol_code_is_an_error() {
        let mut code = huffman_encode(&[4; 8]).unwrap();
        code.encoded[0] |= 0x10;
        assert!(matches!(huffman_decode(&code), Err(Error::CorruptStream(_))));
    }

    #[test]
    fn symbol_count_mismatch_is_an_error() {
        let mut code = huffman_encode(&[1, 2, 1, 2]).unwrap();
        code.original_length = 5;
        assert!(matches!(huffman_decode(&code), Err(Error::CorruptStream(_))));
    }

    #[test]
    fn non_prefix_free_codebook_is_an_error() {
        let mut code = huffman_encode(&[1, 2, 3, 3]).unwrap();
        let first = code.codebook.values().find(|c| c.len == 1).copied().unwrap();
        code.codebook.insert(9, Codeword { code: first.code << 1, len: 2 });
        assert!(matches!(huffman_decode(&code), Err(Error::CorruptStream(_))));
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(s in prop::collection::vec(0u32..40, 1..500)) {
            let code = huffman_encode(&s).unwrap();
            prop_assert_eq!(huffman_decode(&code).unwrap(), s);
        }

        #[test]
        fn never_worse_than_fixed_width(s in prop::collection::vec(0u32..256, 1..500)) {
            let code = huffman_encode(&s).unwrap();
            let k = code.codebook.len();
            let fixed = if k == 1 { 1 } else { (usize::BITS - (k - 1).leading_zeros()) as usize };
            prop_assert!(code.bit_len <= s.len() * fixed);

            let n = s.len() as f64;
            let entropy: f64 = frequencies(&s).values().map(|&c| { let p = c as f64 / n; -p * p.log2() }).sum();
            prop_assert!(code.bit_len as f64 <= n * (entropy + 1.0) + 1e-9);
        }
    }
}
