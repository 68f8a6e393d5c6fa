//! Packed `{−1, +1}` sketches.
//!
//! Bit `k` of a code lives in word `k / 64` at bit index `k % 64`; a set bit
//! means `+1`. Unused high bits of the last word are always zero.

use std::fmt;

use crate::error::{ensure_finite, HqhError, Result};

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryCode {
    bits: usize,
    words: Vec<u64>,
}

#[inline]
fn word_count(bits: usize) -> usize {
    bits.div_ceil(64)
}

impl BinaryCode {
    /// All-`−1` code of length `bits`.
    pub fn zeros(bits: usize) -> Self {
        BinaryCode {
            bits,
            words: vec![0; word_count(bits)],
        }
    }

    /// Builds a code from packed words, rejecting stray high bits.
    pub fn from_words(bits: usize, words: Vec<u64>) -> Result<Self> {
        if words.len() != word_count(bits) {
            return Err(HqhError::invalid(format!(
                "{bits}-bit code needs {} words, got {}",
                word_count(bits),
                words.len()
            )));
        }
        let code = BinaryCode { bits, words };
        if code.words.last().is_some_and(|w| w & !code.last_word_mask() != 0) {
            return Err(HqhError::invalid("unused high bits must be zero"));
        }
        Ok(code)
    }

    /// Builds a code from `±1` values (any positive value maps to `+1`).
    pub fn from_signs(signs: &[i8]) -> Self {
        let mut code = Self::zeros(signs.len());
        for (k, &s) in signs.iter().enumerate() {
            if s > 0 {
                code.words[k / 64] |= 1u64 << (k % 64);
            }
        }
        code
    }

    fn last_word_mask(&self) -> u64 {
        match self.bits % 64 {
            0 => u64::MAX,
            r => (1u64 << r) - 1,
        }
    }

    pub fn len(&self) -> usize {
        self.bits
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// `+1` or `−1` for bit `k`.
    pub fn sign(&self, k: usize) -> i8 {
        assert!(k < self.bits, "bit {k} out of range for {}-bit code", self.bits);
        if self.words[k / 64] >> (k % 64) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    pub fn set(&mut self, k: usize, positive: bool) {
        assert!(k < self.bits);
        let mask = 1u64 << (k % 64);
        if positive {
            self.words[k / 64] |= mask;
        } else {
            self.words[k / 64] &= !mask;
        }
    }

    pub fn to_signs(&self) -> Vec<i8> {
        (0..self.bits).map(|k| self.sign(k)).collect()
    }

    pub fn complement(&self) -> Self {
        let mut words: Vec<u64> = self.words.iter().map(|w| !w).collect();
        if let Some(last) = words.last_mut() {
            *last &= self.last_word_mask();
        }
        BinaryCode {
            bits: self.bits,
            words,
        }
    }

    /// Hamming distance, as popcount over XOR-ed words.
    pub fn hamming(&self, other: &BinaryCode) -> Result<u32> {
        if self.bits != other.bits {
            return Err(HqhError::DimensionMismatch {
                context: "hamming distance",
                expected: self.bits,
                found: other.bits,
            });
        }
        Ok(hamming_words(&self.words, &other.words))
    }

    /// Serialized size in bytes: 4-byte header plus 8 bytes per word.
    pub fn encoded_len(&self) -> usize {
        4 + 8 * self.words.len()
    }

    /// Little-endian `u32` bit count followed by little-endian `u64` words.
    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.bits as u32).to_le_bytes());
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.write_to(&mut out);
        out
    }

    /// Parses one code from the front of `bytes`, returning it and the number
    /// of bytes consumed.
    pub fn read_from(bytes: &[u8]) -> Result<(Self, usize)> {
        let header: [u8; 4] = bytes
            .get(..4)
            .and_then(|h| h.try_into().ok())
            .ok_or_else(|| HqhError::invalid("code header truncated"))?;
        let bits = u32::from_le_bytes(header) as usize;
        let nw = word_count(bits);
        let body = bytes
            .get(4..4 + 8 * nw)
            .ok_or_else(|| HqhError::invalid(format!("{bits}-bit code body truncated")))?;
        let words = body
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok((Self::from_words(bits, words)?, 4 + 8 * nw))
    }
}

#[inline]
pub fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

impl fmt::Debug for BinaryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = (0..self.bits)
            .map(|k| if self.sign(k) > 0 { '+' } else { '-' })
            .collect();
        write!(f, "BinaryCode({s})")
    }
}

/// Componentwise sign with `sign(x) = +1` iff `x ≥ 0` (so `−0.0 ↦ +1`).
/// Non-finite entries are rejected rather than quantized.
pub fn sign_quantize(y: &[f64]) -> Result<BinaryCode> {
    if y.is_empty() {
        return Err(HqhError::invalid("cannot quantize an empty vector"));
    }
    ensure_finite(y, "sign quantization input")?;
    let mut code = BinaryCode::zeros(y.len());
    for (k, &v) in y.iter().enumerate() {
        if v >= 0.0 {
            code.words[k / 64] |= 1u64 << (k % 64);
        }
    }
    Ok(code)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_hamming(a: &BinaryCode, b: &BinaryCode) -> u32 {
        (0..a.len()).filter(|&k| a.sign(k) != b.sign(k)).count() as u32
    }

    #[test]
    fn signed_zero_maps_to_plus_one() {
        let code = sign_quantize(&[0.0, -0.0]).unwrap();
        assert_eq!(code.to_signs(), vec![1, 1]);
    }

    #[test]
    fn componentwise_sign() {
        let code = sign_quantize(&[-0.5, 2.0, -3.0]).unwrap();
        assert_eq!(code.to_signs(), vec![-1, 1, -1]);
    }

    #[test]
    fn nan_and_infinity_are_rejected() {
        assert!(matches!(
            sign_quantize(&[1.0, f64::NAN]),
            Err(HqhError::NonFinite { index: 1, .. })
        ));
        assert!(sign_quantize(&[f64::INFINITY]).is_err());
        assert!(sign_quantize(&[]).is_err());
    }

    #[test]
    fn hamming_identity_and_full_flip() {
        let a = BinaryCode::from_signs(&[1, -1, 1, 1, -1]);
        assert_eq!(a.hamming(&a).unwrap(), 0);
        let signs: Vec<i8> = (0..64).map(|k| if k % 3 == 0 { 1 } else { -1 }).collect();
        let b = BinaryCode::from_signs(&signs);
        assert_eq!(b.hamming(&b.complement()).unwrap(), 64);
    }

    #[test]
    fn hamming_across_word_boundary() {
        let a = BinaryCode::zeros(70);
        let mut b = a.clone();
        for k in [0, 63, 64, 69] {
            b.set(k, true);
        }
        assert_eq!(naive_hamming(&a, &b), 4);
        assert_eq!(a.hamming(&b).unwrap(), 4);
    }

    #[test]
    fn hamming_rejects_mismatched_lengths() {
        let a = BinaryCode::zeros(8);
        let b = BinaryCode::zeros(9);
        assert!(matches!(
            a.hamming(&b),
            Err(HqhError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn complement_keeps_high_bits_clear() {
        let c = BinaryCode::zeros(65).complement();
        assert_eq!(c.words()[1], 1);
        assert!(BinaryCode::from_words(65, vec![0, 2]).is_err());
    }

    #[test]
    fn serialization_layout() {
        let code = BinaryCode::from_signs(&[1, -1, 1]);
        assert_eq!(code.to_bytes(), vec![3, 0, 0, 0, 0b101, 0, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn hamming_matches_naive_loop_on_random_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for &c in &[1usize, 7, 8, 63, 64, 65, 128] {
            for _ in 0..1000 {
                let a: Vec<i8> = (0..c).map(|_| if rng.random() { 1 } else { -1 }).collect();
                let b: Vec<i8> = (0..c).map(|_| if rng.random() { 1 } else { -1 }).collect();
                let (a, b) = (BinaryCode::from_signs(&a), BinaryCode::from_signs(&b));
                assert_eq!(a.hamming(&b).unwrap(), naive_hamming(&a, &b));
            }
        }
    }

    proptest! {
        #[test]
        fn positive_scaling_preserves_code(
            y in prop::collection::vec(-1e6f64..1e6, 1..100),
            alpha in 1e-6f64..1e6,
        ) {
            let scaled: Vec<f64> = y.iter().map(|v| v * alpha).collect();
            prop_assert_eq!(sign_quantize(&y).unwrap(), sign_quantize(&scaled).unwrap());
        }

        #[test]
        fn byte_round_trip(signs in prop::collection::vec(prop::bool::ANY, 0..200)) {
            let s: Vec<i8> = signs.iter().map(|&b| if b { 1 } else { -1 }).collect();
            let code = BinaryCode::from_signs(&s);
            let bytes = code.to_bytes();
            let (back, used) = BinaryCode::read_from(&bytes).unwrap();
            prop_assert_eq!(used, bytes.len());
            prop_assert_eq!(back.to_signs(), s);
        }
    }
}
