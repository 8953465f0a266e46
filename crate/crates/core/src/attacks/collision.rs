//! Constructive non-uniqueness of the mixing cipher.

use crate::cipher::SUB_PATCHES;
use crate::rng::KeyStream;

/// Half-width of the uniform perturbation draw.
pub const COLLISION_AMPLITUDE: f64 = 0.25;

/// Four sub-patches whose mean is `mixed`, using [`COLLISION_AMPLITUDE`].
pub fn mi_collision(mixed: &[f64], seed: u64) -> [Vec<f64>; SUB_PATCHES] {
    mi_collision_with(mixed, seed, COLLISION_AMPLITUDE)
}

/// `s′ᵢ = mixed + dᵢ` with `d₁..d₃` uniform in `[-amplitude, amplitude)` and
/// `d₄ = −d₁ − d₂ − d₃`. Values are not clipped to [0,1].
pub fn mi_collision_with(mixed: &[f64], seed: u64, amplitude: f64) -> [Vec<f64>; SUB_PATCHES] {
    let mut stream = KeyStream::new(seed);
    let mut out: [Vec<f64>; SUB_PATCHES] = std::array::from_fn(|_| Vec::with_capacity(mixed.len()));
    for &m in mixed {
        let d1 = stream.uniform(-amplitude, amplitude);
        let d2 = stream.uniform(-amplitude, amplitude);
        let d3 = stream.uniform(-amplitude, amplitude);
        let d4 = -(d1 + d2 + d3);
        for (s, d) in out.iter_mut().zip([d1, d2, d3, d4]) {
            s.push(m + d);
        }
    }
    out
}
