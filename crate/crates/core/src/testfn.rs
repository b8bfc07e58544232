//! Seeded, compactly supported test functions and vector fields.
//!
//! Every generated function vanishes identically on the outermost two node
//! rings, so it is admissible for the second-variation form and the first
//! variation alike.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::field::{Grid, ScalarField, VectorField};

/// Smooth bump `exp(1 - 1/(1 - s²))`, `s = |x - c|/r`, equal to 1 at `c`.
pub fn bump(grid: &Grid, center: &[f64], radius: f64) -> ScalarField {
    ScalarField::from_fn(grid, |x| bump_value(x, center, radius))
}

fn bump_value(x: &[f64], center: &[f64], radius: f64) -> f64 {
    let s2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>()
        / (radius * radius);
    if s2 >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s2)).exp()
    }
}

/// Random center and radius such that the ball stays two cells clear of
/// every face.
fn random_ball(grid: &Grid, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    let n = grid.dim();
    let margin = 2.0 * grid.max_spacing();
    let half_min = (0..n)
        .map(|a| 0.5 * (grid.high()[a] - grid.low()[a]) - margin)
        .fold(f64::INFINITY, f64::min);
    let radius = half_min * rng.gen_range(0.25..0.9);
    let center = (0..n)
        .map(|a| {
            let lo = grid.low()[a] + margin + radius;
            let hi = grid.high()[a] - margin - radius;
            if hi > lo {
                rng.gen_range(lo..hi)
            } else {
                0.5 * (grid.low()[a] + grid.high()[a])
            }
        })
        .collect();
    (center, radius)
}

/// One random function: a bump modulated by a random low-frequency wave.
fn random_function(grid: &Grid, rng: &mut ChaCha8Rng) -> ScalarField {
    let n = grid.dim();
    let (center, radius) = random_ball(grid, rng);
    let amplitude = rng.gen_range(0.5..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let freq: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0) / radius).collect();
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    ScalarField::from_fn(grid, |x| {
        let arg: f64 = phase + x.iter().zip(&freq).map(|(a, f)| a * f).sum::<f64>();
        amplitude * bump_value(x, &center, radius) * (1.0 + 0.5 * arg.cos())
    })
}

/// `count` random compactly supported functions, reproducible from `seed`.
pub fn random_functions(grid: &Grid, seed: u64, count: usize) -> Vec<ScalarField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_function(grid, &mut rng)).collect()
}

/// `count` random compactly supported vector fields, reproducible from
/// `seed`. Each component is an independent random function.
pub fn random_vector_fields(grid: &Grid, seed: u64, count: usize) -> Vec<VectorField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let comps = (0..grid.dim()).map(|_| random_function(grid, &mut rng)).collect();
            VectorField::new(comps).expect("shared grid")
        })
        .collect()
}
