//! Splittable seed derivation.
//!
//! Every random stream in the crate is keyed by `derive_seed(parent, &[index, ...])`
//! so results never depend on execution order or worker count.

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `mix64(… mix64(mix64(parent) ^ path[0]) ^ path[1] …)`.
pub fn derive_seed(parent: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(parent), |acc, &p| mix64(acc ^ p))
}
