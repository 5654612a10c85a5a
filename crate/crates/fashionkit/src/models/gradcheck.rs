//! Finite-difference gradient checking.
//!
//! Used by tests to verify every analytic gradient against central
//! differences on the full parameter-to-loss composition.

use rand::Rng;

/// Central difference of `f` along one parameter index.
pub fn central_difference(
    f: &mut dyn FnMut(&[f64]) -> f64,
    params: &[f64],
    idx: usize,
    step: f64,
) -> f64 {
    let mut p = params.to_vec();
    p[idx] = params[idx] + step;
    let up = f(&p);
    p[idx] = params[idx] - step;
    let down = f(&p);
    (up - down) / (2.0 * step)
}

/// Relative error with a floor so near-zero gradient pairs compare as
/// equal instead of dividing by zero.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `analytic` to central differences at `count` indices drawn
/// from `rng`, returning the worst `(relative error, index)`.
pub fn worst_rel_error(
    f: &mut dyn FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    step: f64,
    count: usize,
    rng: &mut impl Rng,
) -> (f64, usize) {
    assert_eq!(params.len(), analytic.len());
    let mut worst = (0.0, 0);
    for _ in 0..count {
        let idx = rng.gen_range(0..params.len());
        let numeric = central_difference(f, params, idx, step);
        let err = rel_error(analytic[idx], numeric);
        if err > worst.0 {
            worst = (err, idx);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn quadratic_gradient_checks_out() {
        // f(p) = Σ i · p_i², so df/dp_i = 2 i p_i.
        let mut f = |p: &[f64]| p.iter().enumerate().map(|(i, v)| i as f64 * v * v).sum();
        let params: Vec<f64> = (0..10).map(|i| 0.1 * i as f64 - 0.4).collect();
        let analytic: Vec<f64> = params
            .iter()
            .enumerate()
            .map(|(i, v)| 2.0 * i as f64 * v)
            .collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let (err, _) = worst_rel_error(&mut f, &params, &analytic, 1e-4, 20, &mut rng);
        assert!(err < 1e-6, "worst error {err}");
    }

    #[test]
    fn rel_error_floor_handles_zero_pairs() {
        assert_eq!(rel_error(0.0, 0.0), 0.0);
        assert!(rel_error(1e-9, 0.0) < 1e-2);
    }
}
