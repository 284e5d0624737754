//! Synthetic return series shared by the integration tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

/// EPD(0, 1, kappa) draws: `|e|^kappa / kappa` is Gamma(1/kappa, 1).
pub fn epd_draws(rng: &mut ChaCha8Rng, n: usize, kappa: f64) -> Vec<f64> {
    let g = Gamma::new(1.0 / kappa, 1.0).unwrap();
    (0..n)
        .map(|_| {
            let mag = (kappa * g.sample(rng)).powf(1.0 / kappa);
            if rng.random::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

/// Returns with EPD innovations of unit variance and ARCH(1) volatility:
/// `sigma_t^2 = omega + alpha * y_{t-1}^2`, stationary variance `1e-4`.
pub fn arch_epd_series(seed: u64, n: usize, kappa: f64, alpha: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let var = kappa.powf(2.0 / kappa) * statrs::function::gamma::gamma(3.0 / kappa)
        / statrs::function::gamma::gamma(1.0 / kappa);
    let eps = epd_draws(&mut rng, n + 500, kappa);
    let omega = 1e-4 * (1.0 - alpha);
    let mut prev = 0.0f64;
    let mut out = Vec::with_capacity(n);
    for (t, e) in eps.iter().enumerate() {
        let y = (omega + alpha * prev * prev).sqrt() * e / var.sqrt();
        prev = y;
        if t >= 500 {
            out.push(y);
        }
    }
    out
}
