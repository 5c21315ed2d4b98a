use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FP_LEN: usize = 4096;

/// Fixed-length binary descriptor. Bit `i` lives in word `i / 64` at
/// position `i % 64` (least significant first); the text encodings use a
/// different, big-endian order, see [`Fingerprint::from_hex`].
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Fingerprint {
    len: usize,
    words: Vec<u64>,
}

impl Fingerprint {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_indices(len: usize, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut fp = Self::zeros(len);
        for i in indices {
            if i >= len {
                return Err(Error::Dimension {
                    expected: len,
                    actual: i + 1,
                });
            }
            fp.set(i, true);
        }
        Ok(fp)
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut fp = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            fp.set(i, b);
        }
        fp
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        let mask = 1u64 << (i & 63);
        if value {
            self.words[i >> 6] |= mask;
        } else {
            self.words[i >> 6] &= !mask;
        }
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Indices of set bits in ascending order.
    pub fn ones(&self) -> Ones<'_> {
        Ones {
            words: &self.words,
            word_idx: 0,
            current: self.words.first().copied().unwrap_or(0),
        }
    }

    /// Parses `fp_len / 4` hex digits or `fp_len` characters of `0`/`1`,
    /// selected by the string length. Bit 0 is the most significant bit of
    /// the first hex digit.
    pub fn parse(s: &str, fp_len: usize) -> Result<Self> {
        let s = s.trim();
        if s.len() == fp_len && s.bytes().all(|b| b == b'0' || b == b'1') {
            Self::from_bitstring(s)
        } else if fp_len % 4 == 0 && s.len() == fp_len / 4 {
            Self::from_hex(s)
        } else {
            Err(Error::InvalidParams(format!(
                "fingerprint has {} characters; expected {} hex digits or {} binary digits",
                s.len(),
                fp_len / 4,
                fp_len
            )))
        }
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let mut fp = Self::zeros(s.len() * 4);
        for (d, c) in s.chars().enumerate() {
            let nibble = c
                .to_digit(16)
                .ok_or_else(|| Error::InvalidParams(format!("invalid hex digit {c:?}")))?;
            for k in 0..4 {
                if (nibble >> (3 - k)) & 1 == 1 {
                    fp.set(4 * d + k, true);
                }
            }
        }
        Ok(fp)
    }

    pub fn from_bitstring(s: &str) -> Result<Self> {
        let mut fp = Self::zeros(s.len());
        for (i, c) in s.bytes().enumerate() {
            match c {
                b'0' => {}
                b'1' => fp.set(i, true),
                _ => {
                    return Err(Error::InvalidParams(format!(
                        "invalid binary digit {:?}",
                        c as char
                    )))
                }
            }
        }
        Ok(fp)
    }

    /// Lowercase hex, the inverse of [`Fingerprint::from_hex`]. Requires a
    /// length divisible by 4.
    pub fn to_hex(&self) -> String {
        debug_assert_eq!(self.len % 4, 0);
        (0..self.len / 4)
            .map(|d| {
                let nibble = (0..4).fold(0u32, |acc, k| (acc << 1) | u32::from(self.get(4 * d + k)));
                char::from_digit(nibble, 16).expect("nibble < 16")
            })
            .collect()
    }

    pub fn to_bitstring(&self) -> String {
        (0..self.len)
            .map(|i| if self.get(i) { '1' } else { '0' })
            .collect()
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ones: Vec<usize> = self.ones().collect();
        f.debug_struct("Fingerprint")
            .field("len", &self.len)
            .field("ones", &ones)
            .finish()
    }
}

pub struct Ones<'a> {
    words: &'a [u64],
    word_idx: usize,
    current: u64,
}

impl Iterator for Ones<'_> {
    type Item = usize;

    #[inline]
    fn next(&mut self) -> Option<usize> {
        while self.current == 0 {
            self.word_idx += 1;
            if self.word_idx >= self.words.len() {
                return None;
            }
            self.current = self.words[self.word_idx];
        }
        let bit = self.current.trailing_zeros() as usize;
        self.current &= self.current - 1;
        Some(self.word_idx * 64 + bit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hex_bit_zero_is_msb_of_first_digit() {
        let fp = Fingerprint::from_hex("80").unwrap();
        assert_eq!(fp.ones().collect::<Vec<_>>(), vec![0]);
        let fp = Fingerprint::from_hex("01").unwrap();
        assert_eq!(fp.ones().collect::<Vec<_>>(), vec![7]);
    }

    #[test]
    fn parse_autodetects_by_length() {
        let a = Fingerprint::parse("a5", 8).unwrap();
        let b = Fingerprint::parse("10100101", 8).unwrap();
        assert_eq!(a, b);
        assert!(Fingerprint::parse("a5a", 8).is_err());
        assert!(Fingerprint::parse("zz", 8).is_err());
    }

    #[test]
    fn ones_crosses_word_boundaries() {
        let fp = Fingerprint::from_indices(200, [0, 63, 64, 130, 199]).unwrap();
        assert_eq!(fp.ones().collect::<Vec<_>>(), vec![0, 63, 64, 130, 199]);
        assert_eq!(fp.count_ones(), 5);
        assert!(Fingerprint::from_indices(10, [10]).is_err());
    }

    proptest! {
        #[test]
        fn hex_and_bitstring_roundtrip(bits in proptest::collection::vec(any::<bool>(), 1..64usize)) {
            let len = bits.len() * 4;
            let bools: Vec<bool> = bits.iter().cycle().take(len).copied().collect();
            let fp = Fingerprint::from_bools(&bools);
            prop_assert_eq!(Fingerprint::from_hex(&fp.to_hex()).unwrap(), fp.clone());
            prop_assert_eq!(Fingerprint::from_bitstring(&fp.to_bitstring()).unwrap(), fp);
        }
    }
}
