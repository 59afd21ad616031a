//! Stationary Brinkman saddle-point problem with equal-order bilinear
//! velocity/pressure and Brezzi–Pitkäranta pressure stabilization.
//!
//! Unknowns are ordered `[v (2n interleaved); p (n)]` and the system is
//!
//! ```text
//! [ A   -Bᵀ ] [v]   [  L  ]
//! [ -B  -S  ] [p] = [ -M g ]
//! ```
//!
//! with `A = 2η D + λ div-div + ν M_vec` and `S = α h² K`. The traction
//! (no-friction) condition is natural, so no boundary rows are touched.

use crate::error::{Error, Result};
use crate::grid::{AssembledOperators, BoundaryTag, ScalarField, VectorField};
use crate::sparse::{self, CsrMatrix, DirectSolver, TripletBuilder};

/// Below this value of the conditioning probe the system is reported singular.
const SINGULAR_PROBE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrinkmanParams {
    pub eta: f64,
    pub lambda: f64,
    pub nu: f64,
    pub stab_alpha: f64,
}

impl Default for BrinkmanParams {
    fn default() -> Self {
        Self { eta: 1.0, lambda: 0.0, nu: 1.0, stab_alpha: 0.05 }
    }
}

impl BrinkmanParams {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &'static str, v: f64| {
            if !v.is_finite() || v < 0.0 {
                Err(Error::InvalidParameter { name, reason: format!("must be finite and nonnegative, got {v}") })
            } else {
                Ok(())
            }
        };
        check("brinkman.eta", self.eta)?;
        check("brinkman.lambda", self.lambda)?;
        check("brinkman.nu", self.nu)?;
        check("brinkman.stab_alpha", self.stab_alpha)?;
        if self.eta == 0.0 && self.nu == 0.0 {
            return Err(Error::InvalidParameter {
                name: "brinkman.nu",
                reason: "eta and nu cannot both vanish".into(),
            });
        }
        Ok(())
    }

    /// Limits outside the strictly positive viscosity/permeability regime.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.eta == 0.0 {
            w.push("eta = 0 is the Darcy limit; the velocity space loses H1 control".to_string());
        }
        if self.nu == 0.0 {
            w.push("nu = 0 is the Stokes limit; rigid motions are not controlled under traction-free boundaries".to_string());
        }
        if self.stab_alpha == 0.0 {
            w.push("stab_alpha = 0: the equal-order pair is not inf-sup stable".to_string());
        }
        w
    }
}

#[derive(Debug)]
pub struct BrinkmanSystem {
    params: BrinkmanParams,
    n: usize,
    pub a: CsrMatrix,
    pub b: CsrMatrix,
    pub s: CsrMatrix,
    pub matrix: CsrMatrix,
    mass: CsrMatrix,
    solver: std::result::Result<DirectSolver, String>,
    probe: f64,
}

pub fn assemble_brinkman(ops: &AssembledOperators, params: BrinkmanParams) -> Result<BrinkmanSystem> {
    params.validate()?;
    let n = ops.grid().node_count();
    let a = ops
        .strain
        .linear_combination(2.0 * params.eta, &ops.div_div, params.lambda)
        .linear_combination(1.0, &ops.vector_mass, params.nu);
    let h = ops.grid().h();
    let s = ops.stiffness.linear_combination(params.stab_alpha * h * h, &ops.stiffness, 0.0);
    let b = ops.divergence.clone();
    let bt = b.transpose();

    let mut t = TripletBuilder::with_capacity(3 * n, 3 * n, a.nnz() + 2 * b.nnz() + s.nnz());
    t.add_block(0, 0, &a, 1.0);
    t.add_block(0, 2 * n, &bt, -1.0);
    t.add_block(2 * n, 0, &b, -1.0);
    t.add_block(2 * n, 2 * n, &s, -1.0);
    let matrix = t.build();

    let (solver, probe) = match DirectSolver::factor(&matrix) {
        Ok(lu) => {
            let probe = lu.symmetric_conditioning_probe(25);
            if probe < SINGULAR_PROBE {
                (Err(format!("saddle-point matrix is numerically singular (probe {probe:.3e})")), probe)
            } else {
                (Ok(lu), probe)
            }
        }
        Err(e) => (Err(e.to_string()), 0.0),
    };
    Ok(BrinkmanSystem { params, n, a, b, s, matrix, mass: ops.mass.clone(), solver, probe })
}

impl BrinkmanSystem {
    pub fn params(&self) -> BrinkmanParams {
        self.params
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Smallest-eigenvalue estimate relative to the largest entry.
    pub fn conditioning_probe(&self) -> f64 {
        self.probe
    }

    pub fn is_singular(&self) -> bool {
        self.solver.is_err()
    }

    /// Solves for `(v, p)` given the velocity load and the prescribed divergence.
    pub fn solve(&self, load: &[f64], g: &ScalarField) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.n;
        if load.len() != 2 * n {
            return Err(Error::GridMismatch { expected: 2 * n, found: load.len() });
        }
        if g.len() != n {
            return Err(Error::GridMismatch { expected: n, found: g.len() });
        }
        let solver = self.solver.as_ref().map_err(|e| Error::SingularSystem(e.clone()))?;
        let mg = self.mass.matvec(g.values());
        let mut rhs = Vec::with_capacity(3 * n);
        rhs.extend_from_slice(load);
        rhs.extend(mg.iter().map(|x| -x));
        let x = solver.solve(&rhs)?;
        let rel = sparse::norm2(&sparse::residual(&self.matrix, &x, &rhs)) / sparse::norm2(&rhs).max(f64::MIN_POSITIVE);
        if rel > sparse::SOLVE_RTOL {
            return Err(Error::LinearSolveFailed(format!("Brinkman residual {rel:e} above tolerance")));
        }
        let p = x[2 * n..].to_vec();
        let mut v = x;
        v.truncate(2 * n);
        Ok((v, p))
    }
}

/// Solves the Brinkman problem and wraps the result as fields on the grid.
pub fn solve_brinkman(
    ops: &AssembledOperators,
    sys: &BrinkmanSystem,
    load: &[f64],
    g: &ScalarField,
) -> Result<(VectorField, ScalarField)> {
    ops.check(g)?;
    let (v, p) = sys.solve(load, g)?;
    Ok((VectorField::new(ops.grid(), v)?, ScalarField::new(ops.grid(), p, BoundaryTag::Neumann)?))
}

/// Korteweg load `∫ (μ+h)∇φ·ζ + ∫ (σ + χ(1−φ))∇σ·ζ` for every vector basis
/// function `ζ`.
pub fn korteweg_rhs(
    ops: &AssembledOperators,
    mu_plus_h: &ScalarField,
    phi: &ScalarField,
    sigma: &ScalarField,
    chi: f64,
) -> Result<Vec<f64>> {
    ops.check(mu_plus_h)?;
    ops.check(phi)?;
    ops.check(sigma)?;
    let grid = ops.grid();
    let quad = ops.quadrature();
    let mut load = vec![0.0; 2 * grid.node_count()];
    for (ci, cj) in grid.cells() {
        let nodes = grid.cell_nodes(ci, cj);
        let m = ops.local(&nodes, mu_plus_h.values());
        let f = ops.local(&nodes, phi.values());
        let s = ops.local(&nodes, sigma.values());
        for q in 0..4 {
            let mq = quad.value(q, &m);
            let fq = quad.value(q, &f);
            let sq = quad.value(q, &s);
            let (fx, fy) = quad.gradient(q, &f);
            let (sx, sy) = quad.gradient(q, &s);
            let ns = sq + chi * (1.0 - fq);
            let fx_tot = mq * fx + ns * sx;
            let fy_tot = mq * fy + ns * sy;
            for a in 0..4 {
                let wn = quad.weight * quad.n[q][a];
                load[2 * nodes[a]] += wn * fx_tot;
                load[2 * nodes[a] + 1] += wn * fy_tot;
            }
        }
    }
    Ok(load)
}

/// Load `∫ f·ζ` of a nodal (interpolated) vector field.
pub fn body_force_load(ops: &AssembledOperators, f: &VectorField) -> Result<Vec<f64>> {
    ops.check_vector(f)?;
    Ok(ops.vector_mass.matvec(f.values()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyCheck {
    /// `vᵀAv − L(v) − ∫p g + pᵀSp`
    pub residual: f64,
    /// Sum of magnitudes of the individual terms.
    pub magnitude: f64,
    pub relative: f64,
}

/// Tests the discrete momentum balance with `ζ = v`:
/// `2η‖Dv‖² + λ‖div v‖² + ν‖v‖² = L(v) + ∫ p g − pᵀSp`.
pub fn brinkman_energy_check(
    sys: &BrinkmanSystem,
    v: &[f64],
    p: &[f64],
    load: &[f64],
    g: &ScalarField,
) -> EnergyCheck {
    let ava = sys.a.bilinear(v, v);
    let lv = sparse::dot(load, v);
    let pg = sys.mass.bilinear(p, g.values());
    let sps = sys.s.bilinear(p, p);
    let residual = ava - lv - pg + sps;
    let magnitude = ava.abs() + lv.abs() + pg.abs() + sps.abs();
    let relative = if magnitude > 0.0 { residual.abs() / magnitude } else { 0.0 };
    EnergyCheck { residual, magnitude, relative }
}

/// Weak divergence residual `‖B v − M g‖` measured in the discrete dual norm
/// `(Σ r_i² / m_i)^{1/2}` with lumped masses `m_i`.
pub fn divergence_residual(ops: &AssembledOperators, v: &[f64], g: &[f64]) -> f64 {
    let bv = ops.divergence.matvec(v);
    let mg = ops.mass.matvec(g);
    bv.iter()
        .zip(&mg)
        .zip(&ops.lumped_mass)
        .map(|((a, b), m)| (a - b) * (a - b) / m)
        .sum::<f64>()
        .sqrt()
}

/// Smooth reference solution on the unit square used by convergence studies:
/// `v* = (sin πx cos πy, cos πx sin πy)`, `p* = cos πx cos πy`.
pub mod manufactured {
    use super::*;
    use std::f64::consts::PI;

    /// 1D three-point Gauss rule on [0, 1].
    const G3: [(f64, f64); 3] = [
        (0.112_701_665_379_258_3, 5.0 / 18.0),
        (0.5, 8.0 / 18.0),
        (0.887_298_334_620_741_7, 5.0 / 18.0),
    ];

    pub fn velocity(x: f64, y: f64) -> (f64, f64) {
        ((PI * x).sin() * (PI * y).cos(), (PI * x).cos() * (PI * y).sin())
    }

    pub fn pressure(x: f64, y: f64) -> f64 {
        (PI * x).cos() * (PI * y).cos()
    }

    pub fn divergence(x: f64, y: f64) -> f64 {
        2.0 * PI * (PI * x).cos() * (PI * y).cos()
    }

    /// Body force `−div T(v*, p*) + ν v*`.
    pub fn force(params: &BrinkmanParams, x: f64, y: f64) -> (f64, f64) {
        let (v1, v2) = velocity(x, y);
        let c = 2.0 * PI * PI * (2.0 * params.eta + params.lambda) + params.nu;
        let (px, py) = (-PI * (PI * x).sin() * (PI * y).cos(), -PI * (PI * x).cos() * (PI * y).sin());
        (c * v1 + px, c * v2 + py)
    }

    /// Stress tensor `T(v*, p*)`.
    pub fn stress(params: &BrinkmanParams, x: f64, y: f64) -> [[f64; 2]; 2] {
        let d11 = PI * (PI * x).cos() * (PI * y).cos();
        let d12 = -PI * (PI * x).sin() * (PI * y).sin();
        let div = 2.0 * d11;
        let iso = params.lambda * div - pressure(x, y);
        [[2.0 * params.eta * d11 + iso, 2.0 * params.eta * d12], [2.0 * params.eta * d12, 2.0 * params.eta * d11 + iso]]
    }

    /// Consistent load `∫ f·ζ + ∫_Γ T n·ζ` by three-point Gauss rules.
    pub fn load(ops: &AssembledOperators, params: &BrinkmanParams) -> Vec<f64> {
        let grid = ops.grid();
        let (dx, dy) = grid.cell_size();
        let mut load = vec![0.0; 2 * grid.node_count()];
        for (ci, cj) in grid.cells() {
            let nodes = grid.cell_nodes(ci, cj);
            for &(s, ws) in &G3 {
                for &(t, wt) in &G3 {
                    let (x, y) = ((ci as f64 + s) * dx, (cj as f64 + t) * dy);
                    let (f1, f2) = force(params, x, y);
                    let w = ws * wt * dx * dy;
                    let n = [(1.0 - s) * (1.0 - t), s * (1.0 - t), s * t, (1.0 - s) * t];
                    for a in 0..4 {
                        load[2 * nodes[a]] += w * n[a] * f1;
                        load[2 * nodes[a] + 1] += w * n[a] * f2;
                    }
                }
            }
        }
        // boundary tractions, side by side: (nodes, edge length, outward normal)
        use crate::grid::Side;
        for (side, len, normal) in [
            (Side::Bottom, dx, (0.0, -1.0)),
            (Side::Right, dy, (1.0, 0.0)),
            (Side::Top, dx, (0.0, 1.0)),
            (Side::Left, dy, (-1.0, 0.0)),
        ] {
            for e in grid.side_nodes(side).windows(2) {
                let (xa, ya) = grid.node_coords(e[0]);
                let (xb, yb) = grid.node_coords(e[1]);
                for &(s, ws) in &G3 {
                    let (x, y) = (xa + s * (xb - xa), ya + s * (yb - ya));
                    let t = stress(params, x, y);
                    let tn = (t[0][0] * normal.0 + t[0][1] * normal.1, t[1][0] * normal.0 + t[1][1] * normal.1);
                    let w = ws * len;
                    for (node, nval) in [(e[0], 1.0 - s), (e[1], s)] {
                        load[2 * node] += w * nval * tn.0;
                        load[2 * node + 1] += w * nval * tn.1;
                    }
                }
            }
        }
        load
    }

    /// Nodal interpolant of `div v*`.
    pub fn g_field(ops: &AssembledOperators) -> Result<ScalarField> {
        ScalarField::from_fn(ops.grid(), BoundaryTag::Neumann, divergence)
    }

    /// `(‖v_h − v*‖_{L²}, ‖p_h − p*‖_{L²})` by three-point Gauss rules.
    pub fn errors(ops: &AssembledOperators, v: &[f64], p: &[f64]) -> (f64, f64) {
        let grid = ops.grid();
        let (dx, dy) = grid.cell_size();
        let (mut ev, mut ep) = (0.0, 0.0);
        for (ci, cj) in grid.cells() {
            let nodes = grid.cell_nodes(ci, cj);
            for &(s, ws) in &G3 {
                for &(t, wt) in &G3 {
                    let (x, y) = ((ci as f64 + s) * dx, (cj as f64 + t) * dy);
                    let n = [(1.0 - s) * (1.0 - t), s * (1.0 - t), s * t, (1.0 - s) * t];
                    let (mut v1, mut v2, mut ph) = (0.0, 0.0, 0.0);
                    for a in 0..4 {
                        v1 += n[a] * v[2 * nodes[a]];
                        v2 += n[a] * v[2 * nodes[a] + 1];
                        ph += n[a] * p[nodes[a]];
                    }
                    let (u1, u2) = velocity(x, y);
                    let w = ws * wt * dx * dy;
                    ev += w * ((v1 - u1).powi(2) + (v2 - u2).powi(2));
                    ep += w * (ph - pressure(x, y)).powi(2);
                }
            }
        }
        (ev.sqrt(), ep.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{assemble, build_grid};

    fn setup(n: usize, params: BrinkmanParams) -> (AssembledOperators, BrinkmanSystem) {
        let g = build_grid(1.0, 1.0, n, n).unwrap();
        let ops = assemble(&g);
        let sys = assemble_brinkman(&ops, params).unwrap();
        (ops, sys)
    }

    #[test]
    fn velocity_block_is_exactly_symmetric() {
        let (_, sys) = setup(6, BrinkmanParams { eta: 0.7, lambda: 1.3, nu: 2.0, stab_alpha: 0.05 });
        assert_eq!(sys.a.max_asymmetry(), 0.0);
        assert_eq!(sys.matrix.max_asymmetry(), 0.0);
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let (ops, sys) = setup(4, BrinkmanParams::default());
        let g = ScalarField::zeros(ops.grid(), BoundaryTag::Neumann);
        let (v, p) = sys.solve(&vec![0.0; 2 * ops.grid().node_count()], &g).unwrap();
        assert!(sparse::max_abs(&v) <= 1e-12 && sparse::max_abs(&p) <= 1e-12);
        let e = brinkman_energy_check(&sys, &v, &p, &vec![0.0; v.len()], &g);
        assert_eq!(e.residual, 0.0);
    }

    #[test]
    fn nu_only_limit_reproduces_f_over_nu() {
        let params = BrinkmanParams { eta: 1e-8, lambda: 0.0, nu: 3.0, stab_alpha: 0.05 };
        let (ops, sys) = setup(8, params);
        let f = VectorField::from_fn(ops.grid(), |_, _| (1.0, -0.5)).unwrap();
        let load = body_force_load(&ops, &f).unwrap();
        let g = ScalarField::zeros(ops.grid(), BoundaryTag::Neumann);
        let (v, p) = sys.solve(&load, &g).unwrap();
        for k in 0..ops.grid().node_count() {
            assert!((v[2 * k] - 1.0 / 3.0).abs() < 1e-10);
            assert!((v[2 * k + 1] + 0.5 / 3.0).abs() < 1e-10);
        }
        assert!(sparse::max_abs(&p) < 1e-9);
    }

    #[test]
    fn unstabilized_pair_is_reported_singular() {
        let (ops, sys) = setup(2, BrinkmanParams { stab_alpha: 0.0, ..Default::default() });
        assert!(sys.is_singular());
        let g = ScalarField::zeros(ops.grid(), BoundaryTag::Neumann);
        let load = vec![1.0; 2 * ops.grid().node_count()];
        assert!(matches!(sys.solve(&load, &g), Err(Error::SingularSystem(_))));
    }

    #[test]
    fn korteweg_load_vanishes_for_constant_fields() {
        let (ops, _) = setup(5, BrinkmanParams::default());
        let grid = ops.grid();
        let c = |v| ScalarField::constant(grid, v, BoundaryTag::Neumann);
        let load = korteweg_rhs(&ops, &c(0.3), &c(-0.2), &c(1.5), 0.7).unwrap();
        assert!(sparse::max_abs(&load) < 1e-14);
    }

    #[test]
    fn manufactured_energy_check_is_consistent() {
        let params = BrinkmanParams { eta: 1.0, lambda: 0.5, nu: 1.0, stab_alpha: 0.05 };
        let (ops, sys) = setup(16, params);
        let load = manufactured::load(&ops, &params);
        let g = manufactured::g_field(&ops).unwrap();
        let (v, p) = sys.solve(&load, &g).unwrap();
        let e = brinkman_energy_check(&sys, &v, &p, &load, &g);
        assert!(e.relative <= 1e-8, "{e:?}");
    }
}
