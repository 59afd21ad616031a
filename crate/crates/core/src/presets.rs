//! Initial data for the built-in scenarios.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::grid::{BoundaryTag, Grid, ScalarField};

/// `mean + U(−amplitude, amplitude)` i.i.d. per node, drawn in node order.
pub fn spinodal(grid: &Grid, mean: f64, amplitude: f64, seed: u64) -> Result<ScalarField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..grid.node_count())
        .map(|_| mean + amplitude * rng.random_range(-1.0..=1.0))
        .collect();
    ScalarField::new(grid, values, BoundaryTag::Neumann)
}

/// Disc of tumor phase (`φ ≈ 1`) with a `tanh` interface of the given width,
/// optionally perturbed by seeded noise of size `noise`.
pub fn tumor_seed(
    grid: &Grid,
    center: (f64, f64),
    radius: f64,
    width: f64,
    noise: f64,
    seed: u64,
) -> Result<ScalarField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..grid.node_count())
        .map(|k| {
            let (x, y) = grid.node_coords(k);
            let d = ((x - center.0).powi(2) + (y - center.1).powi(2)).sqrt() - radius;
            let base = -(d / width).tanh();
            if noise > 0.0 {
                base + noise * rng.random_range(-1.0..=1.0)
            } else {
                base
            }
        })
        .collect();
    ScalarField::new(grid, values, BoundaryTag::Neumann)
}

pub fn constant(grid: &Grid, value: f64) -> ScalarField {
    ScalarField::constant(grid, value, BoundaryTag::Neumann)
}
