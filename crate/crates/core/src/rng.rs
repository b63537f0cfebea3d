//! Deterministic RNG stream derivation.
//!
//! Every random quantity in the crate is drawn from a stream keyed by the run's
//! master seed plus a short path of labels (scenario id, persona id, purpose).
//! Keys are hashed with FNV-1a and finalised with SplitMix64, so a stream
//! depends only on its key and never on query order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The concrete generator used for all streams.
pub type Stream = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut state: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        state ^= u64::from(b);
        state = state.wrapping_mul(FNV_PRIME);
    }
    state
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a 64-bit sub-seed from a master seed and a label path.
///
/// Labels are length-prefixed before hashing so `["ab", "c"]` and `["a", "bc"]`
/// give different seeds.
pub fn derive_seed(master: u64, labels: &[&str]) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &master.to_le_bytes());
    for label in labels {
        h = fnv1a(h, &(label.len() as u64).to_le_bytes());
        h = fnv1a(h, label.as_bytes());
    }
    splitmix64(h)
}

/// Opens the stream for `labels` under `master`.
pub fn stream(master: u64, labels: &[&str]) -> Stream {
    Stream::seed_from_u64(derive_seed(master, labels))
}
