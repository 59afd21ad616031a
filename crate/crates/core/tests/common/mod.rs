//! Quadrature written independently of the library's assembly, used as an
//! oracle by the integration tests.

#![allow(dead_code)]

use chb_core::grid::Grid;

/// Three-point Gauss rule on [0, 1].
pub const G3: [(f64, f64); 3] = [
    (0.112_701_665_379_258_3, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.887_298_334_620_741_7, 5.0 / 18.0),
];

/// Two-point Gauss rule on [0, 1].
pub const G2: [(f64, f64); 2] = [(0.211_324_865_405_187_1, 0.5), (0.788_675_134_594_812_9, 0.5)];

/// `∫ f` with the two-point rule per direction.
pub fn integrate2(grid: &Grid, mut f: impl FnMut(usize, usize, f64, f64) -> f64) -> f64 {
    let (dx, dy) = grid.cell_size();
    let mut total = 0.0;
    for cj in 0..grid.ny() {
        for ci in 0..grid.nx() {
            for &(s, ws) in &G2 {
                for &(t, wt) in &G2 {
                    total += ws * wt * dx * dy * f(ci, cj, s, t);
                }
            }
        }
    }
    total
}

/// Value and gradient of the bilinear interpolant of `u` at reference
/// coordinates `(s, t)` of cell `(ci, cj)`.
pub fn eval(grid: &Grid, u: &[f64], ci: usize, cj: usize, s: f64, t: f64) -> (f64, f64, f64) {
    let (dx, dy) = grid.cell_size();
    let u00 = u[grid.node_index(ci, cj)];
    let u10 = u[grid.node_index(ci + 1, cj)];
    let u11 = u[grid.node_index(ci + 1, cj + 1)];
    let u01 = u[grid.node_index(ci, cj + 1)];
    let val = u00 * (1.0 - s) * (1.0 - t) + u10 * s * (1.0 - t) + u11 * s * t + u01 * (1.0 - s) * t;
    let ds = (u10 - u00) * (1.0 - t) + (u11 - u01) * t;
    let dt = (u01 - u00) * (1.0 - s) + (u11 - u10) * s;
    (val, ds / dx, dt / dy)
}

/// `∫ f` where `f` receives the physical point, cell and reference coordinates.
pub fn integrate(grid: &Grid, mut f: impl FnMut(f64, f64, usize, usize, f64, f64) -> f64) -> f64 {
    let (dx, dy) = grid.cell_size();
    let mut total = 0.0;
    for cj in 0..grid.ny() {
        for ci in 0..grid.nx() {
            for &(s, ws) in &G3 {
                for &(t, wt) in &G3 {
                    let (x, y) = ((ci as f64 + s) * dx, (cj as f64 + t) * dy);
                    total += ws * wt * dx * dy * f(x, y, ci, cj, s, t);
                }
            }
        }
    }
    total
}

pub fn integral(grid: &Grid, u: &[f64]) -> f64 {
    integrate(grid, |_, _, ci, cj, s, t| eval(grid, u, ci, cj, s, t).0)
}

pub fn l2(grid: &Grid, u: &[f64]) -> f64 {
    integrate(grid, |_, _, ci, cj, s, t| eval(grid, u, ci, cj, s, t).0.powi(2)).sqrt()
}

pub fn grad_l2(grid: &Grid, u: &[f64]) -> f64 {
    integrate(grid, |_, _, ci, cj, s, t| {
        let (_, a, b) = eval(grid, u, ci, cj, s, t);
        a * a + b * b
    })
    .sqrt()
}

pub fn h1(grid: &Grid, u: &[f64]) -> f64 {
    (l2(grid, u).powi(2) + grad_l2(grid, u).powi(2)).sqrt()
}

/// Interleaved planar vector field split into components.
pub fn components(v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (v.iter().step_by(2).copied().collect(), v.iter().skip(1).step_by(2).copied().collect())
}

pub fn vector_h1(grid: &Grid, v: &[f64]) -> f64 {
    let (a, b) = components(v);
    (h1(grid, &a).powi(2) + h1(grid, &b).powi(2)).sqrt()
}

/// `∫_Γ u` for the piecewise linear trace (trapezoid rule is exact).
pub fn boundary_integral(grid: &Grid, u: &[f64]) -> f64 {
    let (dx, dy) = grid.cell_size();
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut total = 0.0;
    for i in 0..nx {
        for j in [0, ny] {
            total += 0.5 * dx * (u[grid.node_index(i, j)] + u[grid.node_index(i + 1, j)]);
        }
    }
    for j in 0..ny {
        for i in [0, nx] {
            total += 0.5 * dy * (u[grid.node_index(i, j)] + u[grid.node_index(i, j + 1)]);
        }
    }
    total
}

/// Print one line to the real stderr, bypassing the test harness capture.
pub fn report(line: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stderr().lock(), "{line}");
}
