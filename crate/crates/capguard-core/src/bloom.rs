//! Bloom filter for duplicate suppression.
//!
//! Sized from an expected insertion count and a target false-positive rate.
//! False positives cause spurious rejection of a fresh token, never spurious
//! admission of a duplicate; there are no false negatives.

use alloc::vec;
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

#[derive(Clone, Debug)]
pub struct BloomFilter {
    bits: Vec<u64>,
    bit_count: u64,
    hashes: u32,
    insertions: u64,
}

impl BloomFilter {
    /// Filter dimensioned for `expected` insertions at false-positive rate
    /// `fp_rate`: m = -n ln f / (ln 2)^2, k = (m / n) ln 2.
    pub fn new(expected: usize, fp_rate: f64) -> Self {
        let n = expected.max(1) as f64;
        let f = fp_rate.clamp(1e-12, 0.5);
        let ln2 = core::f64::consts::LN_2;
        let m = libm::ceil(-n * libm::log(f) / (ln2 * ln2)) as u64;
        let m = m.max(64);
        let k = libm::round((m as f64 / n) * ln2) as u32;
        BloomFilter {
            bits: vec![0u64; m.div_ceil(64) as usize],
            bit_count: m,
            hashes: k.clamp(1, 30),
            insertions: 0,
        }
    }

    fn index_pair(item: &[u8]) -> (u64, u64) {
        let digest = Sha256::digest(item);
        let h1 = u64::from_be_bytes(digest[..8].try_into().unwrap());
        let h2 = u64::from_be_bytes(digest[8..16].try_into().unwrap());
        (h1, h2 | 1)
    }

    pub fn insert(&mut self, item: &[u8]) {
        let (h1, h2) = Self::index_pair(item);
        for i in 0..self.hashes {
            let bit = h1.wrapping_add(h2.wrapping_mul(i as u64)) % self.bit_count;
            self.bits[(bit / 64) as usize] |= 1 << (bit % 64);
        }
        self.insertions += 1;
    }

    pub fn contains(&self, item: &[u8]) -> bool {
        let (h1, h2) = Self::index_pair(item);
        (0..self.hashes).all(|i| {
            let bit = h1.wrapping_add(h2.wrapping_mul(i as u64)) % self.bit_count;
            self.bits[(bit / 64) as usize] & (1 << (bit % 64)) != 0
        })
    }

    pub fn insertions(&self) -> u64 {
        self.insertions
    }

    pub fn clear(&mut self) {
        self.bits.fill(0);
        self.insertions = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_false_negatives() {
        let mut f = BloomFilter::new(1000, 1e-4);
        for i in 0..1000u32 {
            f.insert(&i.to_be_bytes());
        }
        for i in 0..1000u32 {
            assert!(f.contains(&i.to_be_bytes()));
        }
    }

    /// At design load the empirical false-positive rate stays within 2x the
    /// configured target.
    #[test]
    fn false_positive_rate_at_design_load() {
        let target = 1e-4;
        let mut f = BloomFilter::new(100_000, target);
        for i in 0..100_000u32 {
            f.insert(&i.to_be_bytes());
        }
        let probes = 1_000_000u32;
        let fps = (0..probes)
            .filter(|i| f.contains(&(i + 10_000_000).to_be_bytes()))
            .count();
        let rate = fps as f64 / probes as f64;
        assert!(rate <= 2.0 * target, "fp rate {rate} exceeds {}", 2.0 * target);
    }

    #[test]
    fn clear_resets_state() {
        let mut f = BloomFilter::new(10, 1e-3);
        f.insert(b"x");
        assert!(f.contains(b"x"));
        f.clear();
        assert!(!f.contains(b"x"));
        assert_eq!(f.insertions(), 0);
    }
}
