//! Shared helpers for unit tests.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::policy::PolicyParams;

/// Random logits, elementwise uniform in [-3, 3].
pub(crate) fn random_theta(seed: u64, num_states: usize, num_actions: usize) -> PolicyParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_theta_with(&mut rng, num_states, num_actions)
}

pub(crate) fn random_theta_with(
    rng: &mut ChaCha8Rng,
    num_states: usize,
    num_actions: usize,
) -> PolicyParams {
    PolicyParams::new(Array2::from_shape_fn((num_states, num_actions), |_| {
        rng.gen_range(-3.0..3.0)
    }))
    .unwrap()
}
