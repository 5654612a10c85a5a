//! Small shared helpers.

use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write as _;
        write!(out, "{b:02x}").expect("write to String");
    }
    out
}

/// Deterministic 64-bit mix of a base seed and a stream index. Used to give
/// every image or epoch its own RNG stream without the streams overlapping.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the xor of the two inputs.
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
