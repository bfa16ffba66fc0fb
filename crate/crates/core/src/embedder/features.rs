use std::collections::BTreeMap;

use crate::scalar::Scalar;

/// Default number of hash buckets.
pub const D_FEAT: usize = 32768;

/// Lowercase and split on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// 64-bit FNV-1a over the UTF-8 bytes of `s`.
pub fn fnv1a64(s: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    s.bytes()
        .fold(OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

pub fn bucket(token: &str, d_feat: usize) -> u32 {
    (fnv1a64(token) % d_feat as u64) as u32
}

/// Sparse bag of hashed tokens; every stored count is positive.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureVector {
    counts: BTreeMap<u32, u32>,
}

impl FeatureVector {
    pub fn from_text(text: &str, d_feat: usize) -> Self {
        let mut counts = BTreeMap::new();
        for tok in tokenize(text) {
            *counts.entry(bucket(&tok, d_feat)).or_insert(0) += 1;
        }
        Self { counts }
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &BTreeMap<u32, u32> {
        &self.counts
    }

    /// `(bucket, weight)` pairs with unit l2 norm; empty for the empty vector.
    pub fn normalized<T: Scalar>(&self) -> Vec<(u32, T)> {
        let sq: u64 = self.counts.values().map(|&c| u64::from(c) * u64::from(c)).sum();
        if sq == 0 {
            return Vec::new();
        }
        let norm = T::lit(sq as f64).sqrt();
        self.counts
            .iter()
            .map(|(&b, &c)| (b, T::lit(f64::from(c)) / norm))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_rules() {
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("Put the POT on-the stove!"), ["put", "the", "pot", "on", "the", "stove"]);
        assert_eq!(tokenize("24°C"), ["24", "c"]);
        assert!(tokenize(" ,;| ").is_empty());
    }

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64("a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64("foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn case_folds_into_one_bucket() {
        assert!(FeatureVector::from_text("", D_FEAT).is_empty());
        let fv = FeatureVector::from_text("Pot pot POT", D_FEAT);
        assert_eq!(fv.len(), 1);
        assert_eq!(fv.counts().values().copied().collect::<Vec<_>>(), [3]);
    }

    #[test]
    fn counts_match_hand_rolled_hashing() {
        let text = "take the pot, then put the pot on the stove";
        let mut oracle: BTreeMap<u32, u32> = BTreeMap::new();
        for word in ["take", "the", "pot", "then", "put", "the", "pot", "on", "the", "stove"] {
            let mut h: u64 = 0xcbf29ce484222325;
            for b in word.bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
            *oracle.entry((h % D_FEAT as u64) as u32).or_default() += 1;
        }
        assert_eq!(FeatureVector::from_text(text, D_FEAT).counts(), &oracle);
        let n: Vec<(u32, f64)> = FeatureVector::from_text(text, D_FEAT).normalized();
        let norm: f64 = n.iter().map(|(_, w)| w * w).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }
}
