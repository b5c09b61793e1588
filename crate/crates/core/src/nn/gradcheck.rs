use rand::seq::index::sample;

use super::{GradientSet, ModelParams};
use crate::rng::{derive_rng_stream, RngStreamKey};

/// Compares `analytic` against central differences of `loss` on up to
/// `samples` randomly chosen parameters (all of them when the model is
/// smaller). Returns the largest `|analytic - numeric| / max(1, |analytic|)`.
pub fn gradient_check<F>(
    params: &ModelParams,
    analytic: &GradientSet,
    loss: F,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> f64
where
    F: Fn(&ModelParams) -> f64,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let total = params.num_params();
    let picks: Vec<usize> = if total <= samples {
        (0..total).collect()
    } else {
        let mut rng = derive_rng_stream(RngStreamKey::new(seed, 0, crate::rng::purpose::SHUFFLE, 0));
        sample(&mut rng, total, samples).into_vec()
    };
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for k in picks {
        let base = params.get_flat(k);
        probe.set_flat(k, base + epsilon);
        let up = loss(&probe);
        probe.set_flat(k, base - epsilon);
        let down = loss(&probe);
        probe.set_flat(k, base);
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic.get_flat(k);
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    worst
}
