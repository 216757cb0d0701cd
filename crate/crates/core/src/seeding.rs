//! Deterministic RNG stream derivation.
//!
//! Every replicate draws from streams derived purely from
//! `(master_seed, replicate_index, stream id)`, so results do not depend on
//! scheduling or thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Independent sub-streams within one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Beta,
    Design,
    Noise,
    Extra(u64),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Beta => 1,
            Stream::Design => 2,
            Stream::Noise => 3,
            Stream::Extra(k) => 16 + k,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG for `(master_seed, replicate, stream)`.
pub fn replicate_rng(master_seed: u64, replicate: u64, stream: Stream) -> ChaCha12Rng {
    let mut state = master_seed;
    let a = splitmix64(&mut state);
    state ^= replicate.wrapping_mul(0xA24B_AED4_963E_E407);
    let b = splitmix64(&mut state);
    state ^= stream.id().wrapping_mul(0x9FB2_1C65_1E98_DF25);
    let c = splitmix64(&mut state);
    let d = splitmix64(&mut state);

    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&a.to_le_bytes());
    seed[8..16].copy_from_slice(&b.to_le_bytes());
    seed[16..24].copy_from_slice(&c.to_le_bytes());
    seed[24..32].copy_from_slice(&d.to_le_bytes());
    ChaCha12Rng::from_seed(seed)
}

/// FNV-1a over a canonical string; used to fingerprint configs in metadata.
pub fn fingerprint(text: &str) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    format!("{hash:016x}")
}
