//! Counter-based hashing used to derive every random quantity in the device.
//!
//! All per-cell and per-row parameters are pure functions of a seed and a
//! coordinate tuple, so nothing about the fault population has to be stored.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a seed, a domain tag and a list of coordinates into one word.
#[inline]
pub fn hash_words(seed: u64, tag: u64, words: &[u64]) -> u64 {
    let mut h = mix64(seed ^ tag.wrapping_mul(GOLDEN));
    for (i, &w) in words.iter().enumerate() {
        h = mix64(h ^ w.wrapping_add((i as u64 + 1).wrapping_mul(GOLDEN)));
    }
    h
}

/// Uniform in the open interval (0, 1).
#[inline]
pub fn unit_open(h: u64) -> f64 {
    ((h >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Standard normal deviate from one hash word (Box-Muller on two derived uniforms).
#[inline]
pub fn normal(h: u64) -> f64 {
    let u1 = unit_open(h);
    let u2 = unit_open(mix64(h ^ GOLDEN));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Domain tags for the independent sub-streams.
pub mod tag {
    pub const CELL_Q: u64 = 1;
    pub const CELL_ORIENT: u64 = 2;
    pub const CELL_RETENTION: u64 = 3;
    pub const ROW_CENTER: u64 = 4;
    pub const ROW_SHAPE: u64 = 5;
    pub const ROW_PATTERN: u64 = 6;
    pub const ROW_JITTER_CLASS: u64 = 7;
    pub const ROW_JITTER_TRIAL: u64 = 8;
    pub const BANK: u64 = 9;
    pub const SUBSTREAM: u64 = 10;
    pub const WORD: u64 = 11;
    pub const ROW_JITTER_SIGMA: u64 = 12;
    pub const ROW_BULK: u64 = 13;
}

/// Derive a named sub-seed (campaign cells, calibration, devices) from a root seed.
pub fn substream(seed: u64, name: &str, index: u64) -> u64 {
    let mut h = seed;
    for b in name.bytes() {
        h = mix64(h ^ b as u64);
    }
    hash_words(h, tag::SUBSTREAM, &[index])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_open_never_hits_bounds() {
        assert!(unit_open(0) > 0.0);
        assert!(unit_open(u64::MAX) < 1.0);
    }

    #[test]
    fn normal_moments_are_sane() {
        let n = 200_000u64;
        let xs: Vec<f64> = (0..n).map(|i| normal(hash_words(7, 1, &[i]))).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn stable_values() {
        // pinned so platform or refactor drift shows up
        assert_eq!(mix64(0), 0);
        assert_eq!(hash_words(1, 2, &[3, 4]), hash_words(1, 2, &[3, 4]));
        assert_ne!(hash_words(1, 2, &[3, 4]), hash_words(1, 2, &[4, 3]));
    }
}
