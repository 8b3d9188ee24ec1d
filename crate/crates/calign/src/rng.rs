//! Deterministic RNG stream derivation.
//!
//! Every stochastic quantity in the simulator (each channel gain process,
//! each receiver noise process, each dither, each message draw) gets its own
//! ChaCha stream derived from the master seed plus a small integer tag
//! vector. Streams are independent of unrelated configuration: adding a
//! transmitter, a layer, or a trial never perturbs the draws of existing
//! streams, because the tags are mixed positionally rather than hashed from
//! a serialized config.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Namespace tags keep unrelated stream families disjoint even when their
/// numeric tags collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Gain,
    Noise,
    Dither,
    Message,
    Synth,
    Bootstrap,
}

impl StreamKind {
    fn tag(self) -> u64 {
        match self {
            StreamKind::Gain => 0x67_61_69_6e,
            StreamKind::Noise => 0x6e_6f_69_73,
            StreamKind::Dither => 0x64_69_74_68,
            StreamKind::Message => 0x6d_65_73_67,
            StreamKind::Synth => 0x73_79_6e_74,
            StreamKind::Bootstrap => 0x62_6f_6f_74,
        }
    }
}

/// SplitMix64 step: the standard 64-bit finalizer with good avalanche,
/// used here purely as a deterministic mixing function.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a full 256-bit ChaCha seed from the master seed, a namespace,
/// and up to four positional tags (trial, layer, row, column — callers
/// assign meanings). Unused positions must be passed as 0 by convention.
pub fn stream_rng(master_seed: u64, kind: StreamKind, tags: [u64; 4]) -> ChaCha8Rng {
    let mut state = master_seed ^ kind.tag().rotate_left(32);
    let mut seed = [0u8; 32];
    // Fold each tag in before squeezing a word so that every tag position
    // affects every output word.
    for (i, chunk) in seed.chunks_exact_mut(8).enumerate() {
        state ^= tags[i % 4].wrapping_add(0x1000_0000_0000_000b_u64.wrapping_mul(i as u64 + 1));
        let word = splitmix64(&mut state);
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
