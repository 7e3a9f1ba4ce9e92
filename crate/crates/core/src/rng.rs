//! Seeded random streams and order-independent seed derivation.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math;

/// The random stream used everywhere in the crate.
pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes an ordered list of words into one seed. Stable across platforms
/// and releases; changing any word changes the result.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Hashes a label into a seed word.
pub fn label_word(label: &str) -> u64 {
    // FNV-1a
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// An independent stream for `(seed, tag)`.
pub fn stream(seed: u64, tag: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(&[seed, label_word(tag)]))
}

/// Uniform on `(0, 1]`, safe to take the log of.
fn open_unit(rng: &mut Rng) -> f64 {
    1.0 - rng.random::<f64>()
}

// The samplers below only call `libm`, so a seed yields the same draws on
// every target and feature set.

/// Standard normal draw (Marsaglia polar method, one value per accepted
/// pair).
pub fn standard_normal(rng: &mut Rng) -> f64 {
    loop {
        let u = 2.0 * rng.random::<f64>() - 1.0;
        let v = 2.0 * rng.random::<f64>() - 1.0;
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return u * math::sqrt(-2.0 * math::ln(s) / s);
        }
    }
}

/// Gamma(shape, 1) by Marsaglia and Tsang; shapes below one are boosted by
/// `U^(1/shape)`.
pub fn gamma(shape: f64, rng: &mut Rng) -> f64 {
    debug_assert!(shape > 0.0);
    if shape < 1.0 {
        let boost = libm::pow(open_unit(rng), 1.0 / shape);
        return gamma(shape + 1.0, rng) * boost;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / math::sqrt(9.0 * d);
    loop {
        let x = standard_normal(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = open_unit(rng);
        if u < 1.0 - 0.0331 * x * x * x * x || math::ln(u) < 0.5 * x * x + d * (1.0 - v + math::ln(v)) {
            return d * v;
        }
    }
}

/// Beta(a, b) as `X / (X + Y)` with `X ~ Gamma(a)`, `Y ~ Gamma(b)`.
pub fn beta(a: f64, b: f64, rng: &mut Rng) -> f64 {
    loop {
        let x = gamma(a, rng);
        let y = gamma(b, rng);
        if x + y > 0.0 {
            return x / (x + y);
        }
    }
}
