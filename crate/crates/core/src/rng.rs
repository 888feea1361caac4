//! Counter-based random streams keyed by `(seed, member, mode)`.
//!
//! Each key maps to a fixed window of a ChaCha8 keystream: the master seed
//! sets the key, the ensemble member selects the stream and the mode selects
//! the word offset. Any draw can be regenerated independently of scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Keystream words reserved per mode within a member's stream.
const WORDS_PER_MODE: u128 = 1 << 20;

fn expand_seed(seed: u64) -> [u8; 32] {
    // splitmix64 expansion of the master seed into a 256-bit key
    let mut out = [0u8; 32];
    let mut z = seed;
    for chunk in out.chunks_mut(8) {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut x = z;
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 31;
        chunk.copy_from_slice(&x.to_le_bytes());
    }
    out
}

/// Random stream for one `(seed, member, slot)` key.
pub fn stream(seed: u64, member: u64, slot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(expand_seed(seed));
    rng.set_stream(member);
    rng.set_word_pos(slot as u128 * WORDS_PER_MODE);
    rng
}

/// Uniform draw on `[0, 1)`.
pub fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen::<f64>()
}
