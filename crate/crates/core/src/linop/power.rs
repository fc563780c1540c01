use super::{dot, norm, DenseOperator};
use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Iteration count used when checking gradient-step invertibility.
pub const POWER_ITERS_DEFAULT: usize = 200;

/// Power-iteration estimate of `σ_max(AᵀA)`, i.e. the squared spectral norm of `A`.
///
/// Returns the Rayleigh quotient `‖Av‖²/‖v‖²` of the final iterate, which for a
/// PSD matrix never decreases from one iteration to the next.
pub fn spectral_norm_sq(op: &DenseOperator, iters: usize, seed: u64) -> Result<f64> {
    if iters == 0 {
        return Err(Error::Argument("power iteration needs iters >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..op.cols())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let mut estimate = 0.0;
    for _ in 0..iters {
        let av = op.matvec(&v);
        estimate = dot(&av, &av);
        let w = op.matvec_t(&av);
        let nw = norm(&w);
        if nw == 0.0 {
            break;
        }
        v = w.into_iter().map(|x| x / nw).collect();
    }
    // Rayleigh quotient of the last normalized iterate.
    let av = op.matvec(&v);
    Ok(estimate.max(dot(&av, &av)))
}
