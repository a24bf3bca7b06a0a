#![allow(dead_code)]

use lfis::nn::{Activation, NetParams};
use lfis::rng::Rng64;
use rand::Rng;

/// Parameters with every layer random, including the output layer.
pub fn random_params(dim: usize, widths: [usize; 2], activation: Activation, scale: f64, rng: &mut Rng64) -> NetParams {
    let mut p = NetParams::init(dim, widths, activation, rng);
    let mut flat = p.to_flat();
    for v in flat.iter_mut() {
        *v = scale * rng.random_range(-1.0..1.0);
    }
    p.set_flat(&flat).unwrap();
    p
}

/// Central differences of a scalar function.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|j| {
            y[j] = x[j] + h;
            let up = f(&y);
            y[j] = x[j] - h;
            let down = f(&y);
            y[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest coordinate error relative to `max(|expected_j|, 1e-3 ‖expected‖∞)`,
/// so entries far below the vector's scale are judged against that scale.
pub fn max_rel_err(got: &[f64], expected: &[f64]) -> f64 {
    assert_eq!(got.len(), expected.len());
    let scale = expected.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    got.iter()
        .zip(expected)
        .map(|(g, e)| {
            let denom = e.abs().max(1e-3 * scale).max(f64::MIN_POSITIVE);
            (g - e).abs() / denom
        })
        .fold(0.0, f64::max)
}
