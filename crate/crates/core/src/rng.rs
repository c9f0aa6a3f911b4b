//! Counter-based random streams.
//!
//! Every random quantity in the toolkit is drawn from a ChaCha stream keyed by
//! the run seed and a purpose tag, with the stream id selecting a block,
//! epoch, or instance. Streams never share state, so any block can be
//! regenerated in isolation and in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct purposes never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Features = 0x6665_6174,
    Init = 0x696e_6974,
    Sampling = 0x7361_6d70,
    Subsample = 0x7375_6273,
    Synthetic = 0x7379_6e74,
    Probe = 0x7072_6f62,
}

/// Returns the generator for `(seed, purpose, stream)`.
pub fn stream(seed: u64, purpose: Purpose, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Uniform draw in the open interval (0, 1) built from the top 53 bits.
pub fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    use rand::RngCore;
    loop {
        let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        if u > 0.0 {
            return u;
        }
    }
}
