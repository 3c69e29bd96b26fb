use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::function::Vector;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for the tuple `(seed, tags...)`.
pub(crate) fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix64(seed);
    for &t in tags {
        h = splitmix64(h ^ splitmix64(t));
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Uniform point in the sup-norm ball of the given radius around `center`.
pub(crate) fn in_cube(rng: &mut impl Rng, center: &Vector, radius: f64) -> Vector {
    center.map(|c| c + radius * (2.0 * rng.random::<f64>() - 1.0))
}
