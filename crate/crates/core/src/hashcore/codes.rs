use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training-time code with every coordinate in [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedCode(pub Vec<f64>);

impl RelaxedCode {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("relaxed code value {v} outside [-1, 1]")));
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Sign-quantised code packed little-endian into 64-bit words: bit `k` lives
/// in word `k / 64` at position `k % 64`. Unused high bits are zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BinaryCode {
    bits: usize,
    words: Vec<u64>,
}

pub fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

impl BinaryCode {
    pub fn from_words(bits: usize, words: Vec<u64>) -> Result<Self> {
        if words.len() != words_for(bits) {
            return Err(Error::shape(format!("{bits} bits need {} words, got {}", words_for(bits), words.len())));
        }
        if !bits.is_multiple_of(64) {
            if let Some(last) = words.last() {
                if last >> (bits % 64) != 0 {
                    return Err(Error::invalid("unused high bits must be zero"));
                }
            }
        }
        Ok(Self { bits, words })
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut words = vec![0u64; words_for(bits.len())];
        for (k, &b) in bits.iter().enumerate() {
            if b {
                words[k / 64] |= 1 << (k % 64);
            }
        }
        Self { bits: bits.len(), words }
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

    pub fn bit(&self, k: usize) -> bool {
        self.words[k / 64] >> (k % 64) & 1 == 1
    }

    pub fn flip(&mut self, k: usize) {
        self.words[k / 64] ^= 1 << (k % 64);
    }

    pub fn unpack(&self) -> Vec<bool> {
        (0..self.bits).map(|k| self.bit(k)).collect()
    }

    /// Codes in {-1, +1}.
    pub fn to_signs(&self) -> Vec<f64> {
        (0..self.bits).map(|k| if self.bit(k) { 1.0 } else { -1.0 }).collect()
    }
}

/// Bit k is set iff coordinate k is non-negative.
pub fn binarize(code: &[f64]) -> BinaryCode {
    let bits: Vec<bool> = code.iter().map(|&v| v >= 0.0).collect();
    BinaryCode::from_bits(&bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sign_rule_with_zero_tie() {
        let b = binarize(&[0.3, -0.7, 0.0]);
        assert_eq!(b.unpack(), vec![true, false, true]);
        assert_eq!(b.words(), &[0b101]);
    }

    #[test]
    fn all_negative_is_all_zero_words() {
        let b = binarize(&vec![-0.5; 130]);
        assert_eq!(b.words(), &[0, 0, 0]);
        assert_eq!(b.len(), 130);
    }

    #[test]
    fn packed_length_and_high_bits() {
        let b = binarize(&vec![1.0; 65]);
        assert_eq!(b.words().len(), 2);
        assert_eq!(b.words()[1], 1);
        assert!(BinaryCode::from_words(65, vec![0, 2]).is_err());
        assert!(BinaryCode::from_words(65, vec![0]).is_err());
        assert!(RelaxedCode::new(vec![1.5]).is_err());
    }

    proptest! {
        #[test]
        fn unpack_repack_is_identity(v in prop::collection::vec(-1.0f64..1.0, 0..200)) {
            let b = binarize(&v);
            prop_assert_eq!(BinaryCode::from_bits(&b.unpack()), b.clone());
            prop_assert_eq!(binarize(&b.to_signs()), b);
        }
    }
}
