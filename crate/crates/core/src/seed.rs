//! Deterministic seed derivation.
//!
//! Every random draw in the crate comes from a ChaCha stream seeded by a
//! 64-bit FNV-1a hash of where the draw sits in the work plan (run, user,
//! timestep, restart). Work units therefore own their randomness and the
//! results do not depend on scheduling or thread count.

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

/// 64-bit FNV-1a over a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// FNV-1a over the little-endian concatenation of 64-bit words.
pub fn fnv1a64_words(words: &[u64]) -> u64 {
    let mut h = FNV_OFFSET;
    for w in words {
        for &b in &w.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_published_fnv1a_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"hello"), 0xa430d84680aabd0b);
    }

    #[test]
    fn word_hash_equals_byte_hash_of_le_encoding() {
        let words = [7u64, u64::MAX, 0];
        let mut bytes = Vec::new();
        for w in words {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        assert_eq!(fnv1a64_words(&words), fnv1a64(&bytes));
    }
}
