//! Deterministic random-number streams.
//!
//! Every stochastic routine in this crate draws from a ChaCha stream derived
//! from an explicit seed plus a small list of tags (chain index, series index,
//! purpose). Identical seeds therefore reproduce identical results regardless
//! of thread scheduling, because parallel work items each own their derived
//! stream.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a seed with a sequence of tags into a single 64-bit stream key.
pub fn derive_key(seed: u64, tags: &[u64]) -> u64 {
    let mut state = seed;
    let mut key = splitmix64(&mut state);
    for &tag in tags {
        state ^= tag;
        key ^= splitmix64(&mut state);
    }
    key
}

/// A reproducible RNG stream for the given seed and tag list.
pub fn substream(seed: u64, tags: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_key(seed, tags))
}

/// Draw an `L x C` matrix of standard-normal values.
pub fn standard_normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
}

/// Draw a vector of standard-normal values.
pub fn standard_normal_vec(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}
