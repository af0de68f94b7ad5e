//! Seed derivation: one root seed fans out into named substreams so that
//! toggling one consumer (e.g. dropout) never perturbs another (e.g. world
//! generation).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a, used to fold a stream tag into the seed. Stable across platforms.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Deterministic RNG for substream `tag[index]` of `root`.
pub fn substream(root: u64, tag: &str, index: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&root.to_le_bytes());
    seed[8..16].copy_from_slice(&fnv1a(tag.as_bytes()).to_le_bytes());
    seed[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

/// A single derived seed value (for handing to code that wants a `u64`).
pub fn derive_seed(root: u64, tag: &str, index: u64) -> u64 {
    let mut h = fnv1a(tag.as_bytes());
    h ^= root.rotate_left(17);
    h = h.wrapping_mul(0x9e3779b97f4a7c15);
    h ^= index.wrapping_add(0x2545f4914f6cdd1d).rotate_left(31);
    h.wrapping_mul(0xbf58476d1ce4e5b9)
}
