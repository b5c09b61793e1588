//! Counter-based random streams.
//!
//! Every stochastic draw in the crate comes from a stream addressed by
//! `(global_seed, point_index, layer_index, sample_index)`. The four words
//! form the ChaCha key directly, so a stream depends only on its address and
//! never on how work was scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Address of one random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStreamKey {
    pub global_seed: u64,
    pub point_index: u64,
    pub layer_index: u64,
    pub sample_index: u64,
}

impl RngStreamKey {
    pub fn new(global_seed: u64, point_index: u64, layer_index: u64, sample_index: u64) -> Self {
        RngStreamKey {
            global_seed,
            point_index,
            layer_index,
            sample_index,
        }
    }
}

/// Layer indices reserved for streams that are not dropout masks.
pub mod purpose {
    pub const SCENE: u64 = 1 << 40;
    pub const BLOCKS: u64 = (1 << 40) + 1;
    pub const INIT: u64 = (1 << 40) + 2;
    pub const SHUFFLE: u64 = (1 << 40) + 3;
}

pub type Stream = ChaCha8Rng;

pub fn derive_rng_stream(key: RngStreamKey) -> Stream {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&key.global_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&key.point_index.to_le_bytes());
    seed[16..24].copy_from_slice(&key.layer_index.to_le_bytes());
    seed[24..32].copy_from_slice(&key.sample_index.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

/// Fills `out` with inverted-dropout multipliers: `1/(1-p)` for kept units and
/// `0` for dropped ones. With `p == 0` every multiplier is exactly one and no
/// stream is consumed.
pub fn fill_dropout_mask(key: RngStreamKey, p: f64, out: &mut [f64]) {
    if p == 0.0 {
        out.fill(1.0);
        return;
    }
    let scale = 1.0 / (1.0 - p);
    let mut rng = derive_rng_stream(key);
    for v in out.iter_mut() {
        *v = if rng.random::<f64>() >= p { scale } else { 0.0 };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draws(key: RngStreamKey, n: usize) -> Vec<u64> {
        let mut rng = derive_rng_stream(key);
        (0..n).map(|_| rng.random::<u64>()).collect()
    }

    #[test]
    fn same_key_same_stream() {
        let k = RngStreamKey::new(42, 3, 1, 7);
        assert_eq!(draws(k, 100), draws(k, 100));
    }

    #[test]
    fn point_index_changes_stream() {
        let a = RngStreamKey::new(42, 3, 1, 7);
        let b = RngStreamKey { point_index: 4, ..a };
        assert_ne!(draws(a, 100), draws(b, 100));
    }

    #[test]
    fn bernoulli_mean() {
        let mut rng = derive_rng_stream(RngStreamKey::new(9, 0, 0, 0));
        let n = 100_000;
        let hits = (0..n).filter(|_| rng.random_bool(0.5)).count();
        let mean = hits as f64 / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn zero_rate_mask_is_identity() {
        let mut m = vec![0.0; 16];
        fill_dropout_mask(RngStreamKey::new(1, 2, 3, 4), 0.0, &mut m);
        assert!(m.iter().all(|&v| v == 1.0));
    }
}
