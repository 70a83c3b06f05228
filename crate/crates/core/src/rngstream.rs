//! Named, seeded random streams.
//!
//! Every stochastic component draws from its own stream, derived from the
//! run seed and a stable label. Streams are therefore independent of each
//! other's draw counts: adding draws to one component never perturbs
//! another, which keeps runs reproducible as the pipeline evolves.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Real;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// A deterministic generator for (`seed`, `label`).
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(label.as_bytes()))
}

/// Standard normal draw by Box-Muller; consumes exactly two uniforms.
pub fn std_normal<R: Real, G: Rng>(rng: &mut G) -> R {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    R::of((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos())
}
