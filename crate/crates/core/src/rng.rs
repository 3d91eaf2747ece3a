//! Seeded random streams.
//!
//! Every stochastic routine takes a `u64` seed and builds its own generator,
//! so no generator state is ever shared between calls. Derived streams are
//! `seed ^ fnv1a(tag)`, which lets a sweep row be regenerated from the master
//! seed and its `(n, rep, algo)` tag alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Seed of the stream labelled `tag` under `seed`.
pub fn derive(seed: u64, tag: &str) -> u64 {
    seed ^ fnv1a(tag.as_bytes())
}

/// Seed for replicate `rep` at sample size `n` of algorithm `algo`.
pub fn replicate_seed(seed: u64, n: usize, rep: usize, algo: &str) -> u64 {
    derive(seed, &format!("{n}/{rep}/{algo}"))
}

/// Seed for restart `r`; restart 0 reuses `seed`.
pub fn restart_seed(seed: u64, r: usize) -> u64 {
    if r == 0 {
        seed
    } else {
        derive(seed, &format!("restart/{r}"))
    }
}
