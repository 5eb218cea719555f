use std::fmt::Write as _;

use super::FeatureError;

pub const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Fixed-width bit vector with a cached popcount.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitFingerprint {
    words: Vec<u64>,
    width: usize,
    popcount: usize,
}

impl BitFingerprint {
    pub fn new(width: usize) -> Self {
        Self {
            words: vec![0; width.div_ceil(64)],
            width,
            popcount: 0,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn popcount(&self) -> usize {
        self.popcount
    }

    pub fn get(&self, i: usize) -> bool {
        i < self.width && self.words[i / 64] >> (i % 64) & 1 == 1
    }

    /// Panics when `i` is outside the width.
    pub fn set(&mut self, i: usize) {
        assert!(i < self.width, "bit {i} outside width {}", self.width);
        let mask = 1u64 << (i % 64);
        if self.words[i / 64] & mask == 0 {
            self.words[i / 64] |= mask;
            self.popcount += 1;
        }
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.width).filter(|&i| self.get(i))
    }

    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.width).map(|i| if self.get(i) { 1.0 } else { 0.0 }).collect()
    }

    /// Bit 0 is the most significant bit of the first hex digit.
    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(self.width.div_ceil(4));
        for nib in 0..self.width.div_ceil(4) {
            let mut v = 0u8;
            for k in 0..4 {
                if self.get(nib * 4 + k) {
                    v |= 8 >> k;
                }
            }
            let _ = write!(s, "{v:x}");
        }
        s
    }

    pub fn from_hex(hex: &str, width: usize) -> Result<Self, FeatureError> {
        if hex.len() != width.div_ceil(4) {
            return Err(FeatureError::WidthMismatch {
                expected: width,
                found: hex.len() * 4,
            });
        }
        let mut fp = Self::new(width);
        for (nib, c) in hex.chars().enumerate() {
            let v = c.to_digit(16).ok_or(FeatureError::BadHex(c))? as usize;
            for k in 0..4 {
                if v & (8 >> k) != 0 {
                    let i = nib * 4 + k;
                    if i >= width {
                        return Err(FeatureError::BadHex(c));
                    }
                    fp.set(i);
                }
            }
        }
        Ok(fp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn popcount_tracks_sets() {
        let mut fp = BitFingerprint::new(70);
        fp.set(3);
        fp.set(3);
        fp.set(69);
        assert_eq!(fp.popcount(), 2);
        assert_eq!(fp.ones().collect::<Vec<_>>(), vec![3, 69]);
    }

    #[test]
    fn hex_round_trip() {
        let mut fp = BitFingerprint::new(64);
        for i in [0, 5, 17, 63] {
            fp.set(i);
        }
        let hex = fp.to_hex();
        assert_eq!(hex.len(), 16);
        assert!(hex.starts_with('8'));
        assert_eq!(BitFingerprint::from_hex(&hex, 64).unwrap(), fp);
    }
}
