#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod gradients;
pub mod oracles;
use roofseg::autodiff::{Shape4, Tensor4};

pub const FD_STEP: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: Shape4, rng: &mut impl Rng) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Random values bounded away from zero by `gap`.
pub fn random_away_from_zero(shape: Shape4, gap: f64, rng: &mut impl Rng) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(gap..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// Distinct values (a shuffled ramp) so max-pool windows have no ties.
pub fn random_distinct(shape: Shape4, rng: &mut impl Rng) -> Tensor4<f64> {
    let n = shape.len();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 / n as f64 - 0.5).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        vals.swap(i, j);
    }
    Tensor4::from_vec(shape, vals).unwrap()
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Largest relative error between `analytic` and central differences of `f`
/// around `x`.
pub fn max_fd_error(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    step: f64,
) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let up = f(&probe);
        probe[i] = x[i] - step;
        let down = f(&probe);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * step);
        worst = worst.max(relative_error(analytic[i], numeric, 1e-6));
    }
    worst
}

/// Dot product used as a scalar probe loss: `L = sum(weights * y)`.
pub fn probe(y: &Tensor4<f64>, weights: &Tensor4<f64>) -> f64 {
    y.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}
