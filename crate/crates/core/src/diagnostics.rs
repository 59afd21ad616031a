//! Energy, a priori norm ledger, balance residuals, the divergence lifting,
//! and convergence-study helpers.

use std::fmt::Write as _;

use crate::brinkman::{self, BrinkmanParams};
use crate::error::{Error, Result};
use crate::grid::{assemble, build_grid, AssembledOperators, BoundaryTag, ScalarField, VectorField};
use crate::potentials::{SplitPotential, YosidaParams};
use crate::sparse::{DirectSolver, TripletBuilder};
use crate::stepper::{ModelParams, SchemeParams, SimState};

/// Free energy `½∫|∇φ|² + ∫F(φ) + ∫(½σ² + χσ(1−φ))`, with `F = β̂ + π̂`
/// (or `F_ε = B̂_ε + π̂` when `use_moreau`), by 2×2 Gauss quadrature.
pub fn energy(
    ops: &AssembledOperators,
    potential: &SplitPotential,
    phi: &ScalarField,
    sigma: &ScalarField,
    chi: f64,
    use_moreau: bool,
    eps: f64,
) -> Result<f64> {
    ops.check(phi)?;
    ops.check(sigma)?;
    let yosida = YosidaParams::new(eps)?;
    if !use_moreau {
        let dom = potential.domain();
        for (k, &v) in phi.values().iter().enumerate() {
            if !dom.contains(v) {
                return Err(Error::EnergyInfinite { node: k, value: v });
            }
        }
    }
    let grid = ops.grid();
    let quad = ops.quadrature();
    let mut bulk = 0.0;
    for (ci, cj) in grid.cells() {
        let nodes = grid.cell_nodes(ci, cj);
        let lf = ops.local(&nodes, phi.values());
        let ls = ops.local(&nodes, sigma.values());
        for q in 0..4 {
            let f = quad.value(q, &lf);
            let s = quad.value(q, &ls);
            let fe = if use_moreau { potential.f_eps(&yosida, f)? } else { potential.f(f)? };
            bulk += quad.weight * (fe + 0.5 * s * s + chi * s * (1.0 - f));
        }
    }
    Ok(0.5 * ops.stiffness.bilinear(phi.values(), phi.values()) + bulk)
}

/// Column names of the ledger CSV, in order.
pub const LEDGER_COLUMNS: [&str; 28] = [
    "step",
    "t",
    "energy",
    "energy_eps",
    "v_norm_v",
    "grad_mu",
    "phi_norm_v",
    "sigma_l2",
    "sigma_norm_v",
    "n_sigma_norm_v",
    "p_l2",
    "p_l43_acc",
    "lap_phi",
    "beta_eps_phi",
    "sqrt_eps_mu",
    "overshoot",
    "phi_min",
    "phi_max",
    "v_l2v",
    "grad_mu_l2",
    "phi_linf_v",
    "sigma_linf_h",
    "trace_ratio",
    "div_residual",
    "nutrient_balance",
    "phi_balance",
    "ch_residual",
    "newton_iters",
];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LedgerRow {
    pub step: usize,
    pub t: f64,
    /// Unregularized energy; `inf` when `φ` leaves the domain of `β̂`.
    pub energy: f64,
    pub energy_eps: f64,
    pub v_norm_v: f64,
    pub grad_mu: f64,
    pub phi_norm_v: f64,
    pub sigma_l2: f64,
    pub sigma_norm_v: f64,
    pub n_sigma_norm_v: f64,
    pub p_l2: f64,
    /// `(Σ τ ‖p‖^{4/3})^{3/4}` up to this row.
    pub p_l43_acc: f64,
    /// `‖Δ_h φ‖` with the lumped discrete Laplacian.
    pub lap_phi: f64,
    pub beta_eps_phi: f64,
    pub sqrt_eps_mu: f64,
    /// `max (|φ| − 1)₊` over nodes.
    pub overshoot: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    /// `(Σ τ ‖v‖²_V)^{1/2}` up to this row.
    pub v_l2v: f64,
    pub grad_mu_l2: f64,
    /// Running maxima.
    pub phi_linf_v: f64,
    pub sigma_linf_h: f64,
    /// `‖v‖⁴_{L⁴(L²(Γ))} / (‖v‖²_{L∞(H)} ‖v‖²_{L²(V)})` up to this row (0 while `v ≡ 0`).
    pub trace_ratio: f64,
    pub div_residual: f64,
    pub nutrient_balance: f64,
    pub phi_balance: f64,
    pub ch_residual: f64,
    pub newton_iters: usize,
}

impl LedgerRow {
    fn values(&self) -> [String; 28] {
        let f = |v: f64| format!("{v:e}");
        [
            self.step.to_string(),
            f(self.t),
            f(self.energy),
            f(self.energy_eps),
            f(self.v_norm_v),
            f(self.grad_mu),
            f(self.phi_norm_v),
            f(self.sigma_l2),
            f(self.sigma_norm_v),
            f(self.n_sigma_norm_v),
            f(self.p_l2),
            f(self.p_l43_acc),
            f(self.lap_phi),
            f(self.beta_eps_phi),
            f(self.sqrt_eps_mu),
            f(self.overshoot),
            f(self.phi_min),
            f(self.phi_max),
            f(self.v_l2v),
            f(self.grad_mu_l2),
            f(self.phi_linf_v),
            f(self.sigma_linf_h),
            f(self.trace_ratio),
            f(self.div_residual),
            f(self.nutrient_balance),
            f(self.phi_balance),
            f(self.ch_residual),
            self.newton_iters.to_string(),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiagnosticsLedger {
    rows: Vec<LedgerRow>,
    // running sums behind the time-integrated columns
    p_l43_sum: f64,
    v_l2v_sum: f64,
    grad_mu_sum: f64,
    trace_l4_sum: f64,
    v_linf_h: f64,
}

impl DiagnosticsLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> &[LedgerRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&LedgerRow> {
        self.rows.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = LEDGER_COLUMNS.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.values().join(","));
            out.push('\n');
        }
        out
    }

    pub fn summary(&self) -> LedgerSummary {
        let last = self.rows.last().copied().unwrap_or_default();
        let mut max_energy_increase = 0.0f64;
        for w in self.rows.windows(2) {
            let (a, b) = (w[0].energy_eps, w[1].energy_eps);
            let rel = (b - a) / a.abs().max(f64::MIN_POSITIVE);
            max_energy_increase = max_energy_increase.max(rel);
        }
        let fold = |f: fn(&LedgerRow) -> f64| self.rows.iter().map(f).fold(0.0, f64::max);
        LedgerSummary {
            steps: last.step,
            v_l2v: last.v_l2v,
            grad_mu_l2: last.grad_mu_l2,
            phi_linf_v: last.phi_linf_v,
            sigma_linf_h: last.sigma_linf_h,
            p_l43: last.p_l43_acc,
            max_overshoot: fold(|r| r.overshoot),
            max_nutrient_balance: fold(|r| r.nutrient_balance),
            max_phi_balance: fold(|r| r.phi_balance),
            max_energy_eps_increase: max_energy_increase,
            max_sqrt_eps_mu: fold(|r| r.sqrt_eps_mu),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerSummary {
    pub steps: usize,
    pub v_l2v: f64,
    pub grad_mu_l2: f64,
    pub phi_linf_v: f64,
    pub sigma_linf_h: f64,
    pub p_l43: f64,
    pub max_overshoot: f64,
    pub max_nutrient_balance: f64,
    pub max_phi_balance: f64,
    /// Largest per-step relative increase of `E_ε` (≤ 0 when nonincreasing).
    pub max_energy_eps_increase: f64,
    pub max_sqrt_eps_mu: f64,
}

/// Appends the row of `state`. Time integrals use the step `τ` and start at
/// the first computed step.
pub fn record(ledger: &mut DiagnosticsLedger, state: &SimState, model: &ModelParams, scheme: &SchemeParams, ops: &AssembledOperators) {
    let phi = state.phi.values();
    let mu = state.mu.values();
    let sigma = state.sigma.values();
    let v = state.v.values();
    let p = state.p.values();
    let pot = &model.potential;
    let eps = scheme.epsilon;

    let energy = energy(ops, pot, &state.phi, &state.sigma, model.chi, false, eps).unwrap_or(f64::INFINITY);
    let energy_eps = energy_fn(ops, pot, &state.phi, &state.sigma, model.chi, eps);
    let v_norm_v = ops.vector_h1_norm(v);
    let grad_mu = ops.h1_seminorm(mu);
    let p_l2 = ops.l2_norm(p);
    let n_sigma: Vec<f64> = phi.iter().zip(sigma).map(|(f, s)| s + model.chi * (1.0 - f)).collect();
    let k_phi = ops.stiffness.matvec(phi);
    let lap_phi = k_phi.iter().zip(&ops.lumped_mass).map(|(k, m)| k * k / m).sum::<f64>().sqrt();
    let beta_eps_phi = beta_l2(ops, pot, phi, eps);
    let overshoot = phi.iter().fold(0.0f64, |m, f| m.max(f.abs() - 1.0));
    let vb = boundary_vector_l2(ops, v);

    if state.step > 0 {
        let tau = scheme.tau;
        ledger.p_l43_sum += tau * p_l2.powf(4.0 / 3.0);
        ledger.v_l2v_sum += tau * v_norm_v * v_norm_v;
        ledger.grad_mu_sum += tau * grad_mu * grad_mu;
        ledger.trace_l4_sum += tau * vb.powi(4);
    }
    let v_l2 = ops.vector_l2_norm(v);
    ledger.v_linf_h = ledger.v_linf_h.max(v_l2 * v_l2);
    let prev = ledger.rows.last().copied();
    let phi_norm_v = ops.h1_norm(phi);
    let sigma_l2 = ops.l2_norm(sigma);
    let denom = ledger.v_linf_h * ledger.v_l2v_sum;
    let row = LedgerRow {
        step: state.step,
        t: state.t,
        energy,
        energy_eps,
        v_norm_v,
        grad_mu,
        phi_norm_v,
        sigma_l2,
        sigma_norm_v: ops.h1_norm(sigma),
        n_sigma_norm_v: ops.h1_norm(&n_sigma),
        p_l2,
        p_l43_acc: ledger.p_l43_sum.powf(0.75),
        lap_phi,
        beta_eps_phi,
        sqrt_eps_mu: eps.sqrt() * ops.l2_norm(mu),
        overshoot: overshoot.max(0.0),
        phi_min: state.phi.min(),
        phi_max: state.phi.max(),
        v_l2v: ledger.v_l2v_sum.sqrt(),
        grad_mu_l2: ledger.grad_mu_sum.sqrt(),
        phi_linf_v: prev.map_or(phi_norm_v, |r| r.phi_linf_v.max(phi_norm_v)),
        sigma_linf_h: prev.map_or(sigma_l2, |r| r.sigma_linf_h.max(sigma_l2)),
        trace_ratio: if denom > 0.0 { ledger.trace_l4_sum / denom } else { 0.0 },
        div_residual: state.report.divergence_residual,
        nutrient_balance: state.report.nutrient_balance,
        phi_balance: state.report.phi_balance,
        ch_residual: state.report.ch_residual,
        newton_iters: state.report.newton_iters,
    };
    ledger.rows.push(row);
}

fn energy_fn(ops: &AssembledOperators, pot: &SplitPotential, phi: &ScalarField, sigma: &ScalarField, chi: f64, eps: f64) -> f64 {
    energy(ops, pot, phi, sigma, chi, true, eps).unwrap_or(f64::NAN)
}

fn beta_l2(ops: &AssembledOperators, pot: &SplitPotential, phi: &[f64], eps: f64) -> f64 {
    let Ok(y) = YosidaParams::new(eps) else { return f64::NAN };
    let grid = ops.grid();
    let quad = ops.quadrature();
    let mut s = 0.0;
    for (ci, cj) in grid.cells() {
        let loc = ops.local(&grid.cell_nodes(ci, cj), phi);
        for q in 0..4 {
            let b = pot.yosida_beta(&y, quad.value(q, &loc)).unwrap_or(f64::NAN);
            s += quad.weight * b * b;
        }
    }
    s.sqrt()
}

fn boundary_vector_l2(ops: &AssembledOperators, v: &[f64]) -> f64 {
    let n = ops.grid().node_count();
    let (mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for k in 0..n {
        a.push(v[2 * k]);
        b.push(v[2 * k + 1]);
    }
    (ops.boundary_mass.bilinear(&a, &a) + ops.boundary_mass.bilinear(&b, &b)).max(0.0).sqrt()
}

#[derive(Debug, Clone)]
pub struct Lifting {
    /// Nodal L² projection of `∇ψ`.
    pub u: VectorField,
    /// Zero-mean Neumann potential.
    pub psi: ScalarField,
    /// Max-norm of the weak divergence residual of `∇ψ`.
    pub residual: f64,
    /// `‖u‖_V / (‖f‖ + |flux|)`.
    pub constant: f64,
}

/// Vector field with prescribed divergence `f` and total normal flux, built
/// as `u = ∇ψ` with `Δψ = f`, `∂ₙψ = flux / |Γ|`.
pub fn divergence_lifting(ops: &AssembledOperators, f: &ScalarField, total_normal_flux: f64) -> Result<Lifting> {
    ops.check(f)?;
    let grid = ops.grid();
    let n = grid.node_count();
    let int_f = ops.integrate(f)?;
    if (int_f - total_normal_flux).abs() > 1e-8 * (1.0 + int_f.abs()) {
        return Err(Error::IncompatibleData(format!(
            "∫f = {int_f} differs from the total normal flux {total_normal_flux}"
        )));
    }
    let flux_density = total_normal_flux / grid.perimeter();
    let gamma = ops.boundary_mass.row_sums();
    let mf = ops.mass.matvec(f.values());
    let rhs_psi: Vec<f64> = (0..n).map(|i| flux_density * gamma[i] - mf[i]).collect();

    // bordered system fixes the mean of ψ
    let mut t = TripletBuilder::with_capacity(n + 1, n + 1, ops.stiffness.nnz() + 2 * n);
    t.add_block(0, 0, &ops.stiffness, 1.0);
    for i in 0..n {
        t.push(i, n, ops.lumped_mass[i]);
        t.push(n, i, ops.lumped_mass[i]);
    }
    let bordered = t.build();
    let mut rhs = rhs_psi.clone();
    rhs.push(0.0);
    let sol = DirectSolver::factor(&bordered)?.solve(&rhs)?;
    let psi = sol[..n].to_vec();
    let kpsi = ops.stiffness.matvec(&psi);
    let residual = kpsi.iter().zip(&rhs_psi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    // L² projection of the elementwise gradient
    let quad = ops.quadrature();
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    for (ci, cj) in grid.cells() {
        let nodes = grid.cell_nodes(ci, cj);
        let loc = ops.local(&nodes, &psi);
        for q in 0..4 {
            let (dx, dy) = quad.gradient(q, &loc);
            for a in 0..4 {
                gx[nodes[a]] += quad.weight * dx * quad.n[q][a];
                gy[nodes[a]] += quad.weight * dy * quad.n[q][a];
            }
        }
    }
    let mass = DirectSolver::factor(&ops.mass)?;
    let ux = mass.solve(&gx)?;
    let uy = mass.solve(&gy)?;
    let mut u = Vec::with_capacity(2 * n);
    for k in 0..n {
        u.push(ux[k]);
        u.push(uy[k]);
    }
    let unorm = ops.vector_h1_norm(&u);
    let data = ops.l2_norm(f.values()) + total_normal_flux.abs();
    Ok(Lifting {
        u: VectorField::new(grid, u)?,
        psi: ScalarField::new(grid, psi, BoundaryTag::Neumann)?,
        residual,
        constant: if data > 0.0 { unorm / data } else { 0.0 },
    })
}

/// `log(e_i/e_{i+1}) / log(s_i/s_{i+1})` for consecutive levels.
pub fn observed_order(values: &[f64], steps: &[f64]) -> Result<Vec<f64>> {
    if values.len() != steps.len() || values.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "need two or more levels of equal length, got {} values and {} steps",
            values.len(),
            steps.len()
        )));
    }
    if steps.windows(2).any(|w| !(w[1] < w[0])) || steps.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::DegenerateInput("steps must be positive and strictly decreasing".into()));
    }
    if let Some(i) = values.iter().position(|&e| !(e > 0.0)) {
        return Err(Error::DegenerateInput(format!("value at level {i} is {} (exact or invalid)", values[i])));
    }
    Ok(values.windows(2).zip(steps.windows(2)).map(|(e, s)| (e[0] / e[1]).ln() / (s[0] / s[1]).ln()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyQuantity {
    pub name: String,
    pub values: Vec<f64>,
    pub orders: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub title: String,
    pub parameter: String,
    pub levels: Vec<f64>,
    pub quantities: Vec<StudyQuantity>,
}

impl StudyReport {
    pub fn new(title: impl Into<String>, parameter: impl Into<String>, levels: Vec<f64>) -> Self {
        Self { title: title.into(), parameter: parameter.into(), levels, quantities: Vec::new() }
    }

    /// Adds a quantity; orders are left empty if they cannot be computed.
    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) {
        let orders = observed_order(&values, &self.levels).unwrap_or_default();
        self.quantities.push(StudyQuantity { name: name.into(), values, orders });
    }

    pub fn quantity(&self, name: &str) -> Option<&StudyQuantity> {
        self.quantities.iter().find(|q| q.name == name)
    }

    pub fn min_order(&self, name: &str) -> Option<f64> {
        self.quantity(name).and_then(|q| q.orders.iter().copied().reduce(f64::min))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {}", self.title);
        let _ = write!(s, "{:>12}", self.parameter);
        for q in &self.quantities {
            let _ = write!(s, " {:>14} {:>7}", q.name, "order");
        }
        s.push('\n');
        for (i, lvl) in self.levels.iter().enumerate() {
            let _ = write!(s, "{lvl:>12.5e}");
            for q in &self.quantities {
                let order = if i == 0 { "-".to_string() } else { q.orders.get(i - 1).map_or("-".into(), |o| format!("{o:.3}")) };
                let _ = write!(s, " {:>14.6e} {:>7}", q.values[i], order);
            }
            s.push('\n');
        }
        s
    }
}

/// Manufactured Brinkman convergence study on the unit square.
pub fn brinkman_study(params: BrinkmanParams, cells: &[usize]) -> Result<StudyReport> {
    let mut ev = Vec::new();
    let mut ep = Vec::new();
    let mut dr = Vec::new();
    let mut hs = Vec::new();
    for &n in cells {
        let grid = build_grid(1.0, 1.0, n, n)?;
        let ops = assemble(&grid);
        let sys = brinkman::assemble_brinkman(&ops, params)?;
        let load = brinkman::manufactured::load(&ops, &params);
        let g = brinkman::manufactured::g_field(&ops)?;
        let (v, p) = sys.solve(&load, &g)?;
        let (e_v, e_p) = brinkman::manufactured::errors(&ops, &v, &p);
        ev.push(e_v);
        ep.push(e_p);
        dr.push(brinkman::divergence_residual(&ops, &v, g.values()));
        hs.push(grid.h());
    }
    let mut report = StudyReport::new("Brinkman manufactured solution", "h", hs);
    report.push("velocity_l2", ev);
    report.push("pressure_l2", ep);
    report.push("div_residual", dr);
    Ok(report)
}
