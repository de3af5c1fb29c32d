//! Deterministic seed derivation for independent RNG streams.
//!
//! Streams are separated by a role tag and an index so that adding a method
//! or a repeat never perturbs the randomness any existing run consumes. The
//! hash is a fixed FNV-1a over the inputs with a splitmix finalizer; it is
//! stable across platforms and has nothing to do with `std`'s randomized
//! hasher.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(h: u64, bytes: &[u8]) -> u64 {
    let mut h = h;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix_finalize(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed of the `(tag, index)` stream under a master seed.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut h = FNV_OFFSET;
    h = fnv1a64(h, &master.to_le_bytes());
    h = fnv1a64(h, tag.as_bytes());
    h = fnv1a64(h, &index.to_le_bytes());
    splitmix_finalize(h)
}
