//! Small shared helpers: deterministic seed mixing.

/// SplitMix64 step. Statistically solid for seed derivation and
/// deterministic start vectors; not a crypto primitive.
pub(crate) fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a salt (window index, grid index, ...) so that
/// derived RNG streams are independent and reproducible.
pub(crate) fn derive_seed(base: u64, salt: u64) -> u64 {
    splitmix64(base ^ splitmix64(salt.wrapping_add(0xA076_1D64_78BD_642F)))
}

/// Deterministic value in [0.5, 1.5) derived from an index. Used where an
/// arbitrary but reproducible non-degenerate vector is needed.
pub(crate) fn hash_unit(i: u64) -> f64 {
    0.5 + (splitmix64(i) >> 11) as f64 / (1u64 << 53) as f64
}
