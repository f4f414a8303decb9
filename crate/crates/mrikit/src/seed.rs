//! Deterministic seed derivation.
//!
//! Worker seeds are derived by mixing, never by sharing a generator, so
//! results do not depend on scheduling order.

/// splitmix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mix a base seed with a stream index (phantom index, grid cell, epoch...).
pub fn mix(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream.wrapping_add(0xA076_1D64_78BD_642F)))
}

/// Mix a base seed with two stream indices.
pub fn mix2(base: u64, a: u64, b: u64) -> u64 {
    mix(mix(base, a), b)
}
