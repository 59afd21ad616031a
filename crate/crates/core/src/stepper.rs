//! Time stepping of the ε-regularized Cahn–Hilliard–Brinkman–nutrient system.
//!
//! One step advances `t → t + τ` by
//! 1. refreshing the harmonic lifting `h` of `μ_Σ(t+τ)` and the divergence `g`,
//! 2. a Brinkman solve with lagged Korteweg forcing,
//! 3. a monolithic semismooth Newton solve for `(φ, μ̃)` with the convex part
//!    of the potential implicit and the concave part explicit,
//! 4. a linear nutrient solve with implicit diffusion and Robin exchange.

use std::fmt;
use std::sync::Arc;

use crate::brinkman::{self, BrinkmanParams, BrinkmanSystem};
use crate::diagnostics::{self, DiagnosticsLedger};
use crate::error::{Error, Result};
use crate::grid::{AssembledOperators, BoundaryTag, ScalarField, VectorField};
use crate::potentials::{SplitPotential, YosidaParams};
use crate::sparse::{CsrMatrix, DirectSolver, LuPattern, TripletBuilder};

/// Interpolation function `𝕙` with `𝕙(−1) = 0` and `𝕙(1) = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weight {
    /// `clamp((1 + φ)/2, 0, 1)`
    Clamp,
    /// `s²(3 − 2s)` with `s = clamp((1 + φ)/2, 0, 1)`
    Smoothstep,
}

impl Weight {
    pub fn eval(self, phi: f64) -> f64 {
        let s = (0.5 * (1.0 + phi)).clamp(0.0, 1.0);
        match self {
            Weight::Clamp => s,
            Weight::Smoothstep => s * s * (3.0 - 2.0 * s),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Weight::Clamp => "clamp",
            Weight::Smoothstep => "smoothstep",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    None,
    /// `S_φ = (Pσ − A)𝕙(φ)`, `S_σ = B(σ_c − σ) − Cσ𝕙(φ)`.
    LinearKinetic { p: f64, a: f64, b: f64, c: f64, sigma_c: f64, weight: Weight },
    /// `S_φ = −S_σ = P(φ)(σ + χ(1−φ) − μ)` with `P(φ) = p0 𝕙(φ)`.
    /// Experimental: no discrete stability result backs it.
    Phenomenological { p0: f64, weight: Weight },
}

impl SourceSpec {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &'static str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter { name, reason: format!("must be finite and nonnegative, got {v}") })
            }
        };
        match *self {
            SourceSpec::None => Ok(()),
            SourceSpec::LinearKinetic { p, a, b, c, sigma_c, .. } => {
                nonneg("source.p", p)?;
                nonneg("source.a", a)?;
                nonneg("source.b", b)?;
                nonneg("source.c", c)?;
                if !sigma_c.is_finite() {
                    return Err(Error::InvalidParameter { name: "source.sigma_c", reason: "must be finite".into() });
                }
                Ok(())
            }
            SourceSpec::Phenomenological { p0, .. } => nonneg("source.p0", p0),
        }
    }

    pub fn is_experimental(&self) -> bool {
        matches!(self, SourceSpec::Phenomenological { .. })
    }

    pub fn needs_chemical_potential(&self) -> bool {
        matches!(self, SourceSpec::Phenomenological { .. })
    }
}

/// Nodal source terms `(S_φ, S_σ)`.
pub fn source_eval(
    spec: &SourceSpec,
    phi: &ScalarField,
    sigma: &ScalarField,
    mu_plus_h: Option<&ScalarField>,
    chi: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = phi.len();
    if sigma.shape() != phi.shape() {
        return Err(Error::GridMismatch { expected: n, found: sigma.len() });
    }
    let (f, s) = (phi.values(), sigma.values());
    match *spec {
        SourceSpec::None => Ok((vec![0.0; n], vec![0.0; n])),
        SourceSpec::LinearKinetic { p, a, b, c, sigma_c, weight } => {
            let mut sp = Vec::with_capacity(n);
            let mut ss = Vec::with_capacity(n);
            for i in 0..n {
                let w = weight.eval(f[i]);
                sp.push((p * s[i] - a) * w);
                ss.push(b * (sigma_c - s[i]) - c * s[i] * w);
            }
            Ok((sp, ss))
        }
        SourceSpec::Phenomenological { p0, weight } => {
            let mu = mu_plus_h.ok_or(Error::MissingChemicalPotential)?;
            if mu.shape() != phi.shape() {
                return Err(Error::GridMismatch { expected: n, found: mu.len() });
            }
            let m = mu.values();
            let sp: Vec<f64> = (0..n).map(|i| p0 * weight.eval(f[i]) * (s[i] + chi * (1.0 - f[i]) - m[i])).collect();
            let ss = sp.iter().map(|v| -v).collect();
            Ok((sp, ss))
        }
    }
}

pub type SignalFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Space-time datum `(x, y, t) ↦ value`.
#[derive(Clone)]
pub enum Signal {
    Constant(f64),
    /// `mean + amplitude sin(2π frequency t)`
    Oscillating { mean: f64, amplitude: f64, frequency: f64 },
    /// `mean + amplitude (x/Lx − 1/2)`
    Gradient { mean: f64, amplitude: f64, lx: f64 },
    Custom(SignalFn),
}

impl fmt::Debug for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Signal::Constant(c) => write!(f, "Constant({c})"),
            Signal::Oscillating { mean, amplitude, frequency } => {
                write!(f, "Oscillating {{ mean: {mean}, amplitude: {amplitude}, frequency: {frequency} }}")
            }
            Signal::Gradient { mean, amplitude, lx } => {
                write!(f, "Gradient {{ mean: {mean}, amplitude: {amplitude}, lx: {lx} }}")
            }
            Signal::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Signal {
    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        match self {
            Signal::Constant(c) => *c,
            Signal::Oscillating { mean, amplitude, frequency } => {
                mean + amplitude * (2.0 * std::f64::consts::PI * frequency * t).sin()
            }
            Signal::Gradient { mean, amplitude, lx } => mean + amplitude * (x / lx - 0.5),
            Signal::Custom(f) => f(x, y, t),
        }
    }

    /// Boxcar average over `[t − radius, t + radius]` (eight-point midpoint rule).
    pub fn mollified(&self, x: f64, y: f64, t: f64, radius: f64) -> f64 {
        if radius <= 0.0 || matches!(self, Signal::Constant(_) | Signal::Gradient { .. }) {
            return self.eval(x, y, t);
        }
        let k = 8;
        (0..k)
            .map(|j| self.eval(x, y, t - radius + 2.0 * radius * (j as f64 + 0.5) / k as f64))
            .sum::<f64>()
            / k as f64
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Signal::Constant(c) => *c == 0.0,
            Signal::Oscillating { mean, amplitude, .. } | Signal::Gradient { mean, amplitude, .. } => {
                *mean == 0.0 && *amplitude == 0.0
            }
            Signal::Custom(_) => false,
        }
    }

    fn nodal(&self, ops: &AssembledOperators, t: f64, radius: f64) -> Vec<f64> {
        let grid = ops.grid();
        (0..grid.node_count())
            .map(|k| {
                let (x, y) = grid.node_coords(k);
                self.mollified(x, y, t, radius)
            })
            .collect()
    }

    fn boundary(&self, ops: &AssembledOperators, t: f64, radius: f64) -> Vec<f64> {
        let grid = ops.grid();
        grid.boundary_nodes()
            .iter()
            .map(|&k| {
                let (x, y) = grid.node_coords(k);
                self.mollified(x, y, t, radius)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub chi: f64,
    pub kappa: f64,
    pub brinkman: BrinkmanParams,
    pub potential: SplitPotential,
    pub source: SourceSpec,
    /// Prescribed velocity divergence.
    pub g: Signal,
    /// When false the velocity is held at zero and no Brinkman solve is done.
    pub flow: bool,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.chi.is_finite() && self.chi >= 0.0) {
            return Err(Error::InvalidParameter { name: "model.chi", reason: format!("must be nonnegative, got {}", self.chi) });
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "model.kappa",
                reason: format!("must be nonnegative, got {}", self.kappa),
            });
        }
        if self.flow {
            self.brinkman.validate()?;
        }
        self.source.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeParams {
    pub tau: f64,
    pub epsilon: f64,
    pub t_end: f64,
    pub newton_tol: f64,
    pub newton_max: usize,
    /// Time-averaging radius for `g` and `μ_Σ` (0 = off).
    pub mollify: f64,
    /// Sweeps of the Brinkman/CH/nutrient sequence per step; 1 = plain lagged splitting.
    pub coupling_iters: usize,
}

impl Default for SchemeParams {
    fn default() -> Self {
        Self {
            tau: 1e-3,
            epsilon: 1e-2,
            t_end: 0.1,
            newton_tol: 1e-10,
            newton_max: 50,
            mollify: 0.0,
            coupling_iters: 1,
        }
    }
}

impl SchemeParams {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter { name, reason: format!("must be positive, got {v}") })
            }
        };
        pos("scheme.tau", self.tau)?;
        pos("scheme.epsilon", self.epsilon)?;
        pos("scheme.newton_tol", self.newton_tol)?;
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(Error::InvalidParameter { name: "scheme.t_end", reason: format!("must be nonnegative, got {}", self.t_end) });
        }
        if self.newton_max == 0 {
            return Err(Error::InvalidParameter { name: "scheme.newton_max", reason: "must be positive".into() });
        }
        if !(self.mollify.is_finite() && self.mollify >= 0.0) {
            return Err(Error::InvalidParameter { name: "scheme.mollify", reason: "must be nonnegative".into() });
        }
        if self.coupling_iters == 0 {
            return Err(Error::InvalidParameter { name: "scheme.coupling_iters", reason: "must be positive".into() });
        }
        Ok(())
    }

    /// Number of whole steps that fit in `[0, t_end]`.
    pub fn step_count(&self) -> usize {
        (self.t_end / self.tau + 1e-9).floor() as usize
    }

    pub fn yosida(&self) -> Result<YosidaParams> {
        YosidaParams::new(self.epsilon)
    }
}

#[derive(Debug, Clone)]
pub struct BoundaryData {
    pub mu_sigma: Signal,
    pub sigma_sigma: Signal,
    pub phi0: ScalarField,
    pub sigma0: ScalarField,
}

/// Solver-side figures of the step that produced a state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    pub newton_iters: usize,
    /// Scaled max-norm of the CH residual at acceptance.
    pub ch_residual: f64,
    /// Relative residual of the nutrient equation tested with `ζ ≡ 1`.
    pub nutrient_balance: f64,
    /// Relative residual of the second CH equation tested with `z ≡ 1`.
    pub phi_balance: f64,
    /// `‖B v − M g‖` in the lumped dual norm.
    pub divergence_residual: f64,
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    pub step: usize,
    pub phi: ScalarField,
    /// Homogenized chemical potential `μ̃ = μ − h`, zero on the boundary.
    pub mu: ScalarField,
    pub sigma: ScalarField,
    pub h: ScalarField,
    pub v: VectorField,
    pub p: ScalarField,
    pub report: StepReport,
}

impl SimState {
    /// Initial state: `μ̃ = 0`, zero velocity and pressure, lifting at `t = 0`.
    pub fn initial(ops: &AssembledOperators, model: &ModelParams, scheme: &SchemeParams, data: &BoundaryData) -> Result<Self> {
        ops.check(&data.phi0)?;
        ops.check(&data.sigma0)?;
        let dom = model.potential.domain();
        for (k, &v) in data.phi0.values().iter().enumerate() {
            if !dom.contains(v) || model.potential.beta_hat(v).map(|b| !b.is_finite()).unwrap_or(true) {
                return Err(Error::InadmissibleInitialData { node: k, value: v });
            }
        }
        let grid = ops.grid();
        let h = ops.harmonic_extension(&data.mu_sigma.boundary(ops, 0.0, scheme.mollify))?;
        Ok(Self {
            t: 0.0,
            step: 0,
            phi: data.phi0.clone().with_bc(grid, BoundaryTag::Neumann),
            mu: ScalarField::zeros(grid, BoundaryTag::DirichletZero),
            sigma: data.sigma0.clone().with_bc(grid, BoundaryTag::Robin { kappa: model.kappa }),
            h,
            v: VectorField::zeros(grid),
            p: ScalarField::zeros(grid, BoundaryTag::Neumann),
            report: StepReport::default(),
        })
    }

    /// Physical chemical potential `μ̃ + h`.
    pub fn physical_mu(&self) -> Vec<f64> {
        self.mu.values().iter().zip(self.h.values()).map(|(a, b)| a + b).collect()
    }
}

/// Per-run solver context: the Brinkman factorization, the constant nutrient
/// factorization and the linear part of the CH Jacobian.
pub struct Stepper<'a> {
    ops: &'a AssembledOperators,
    model: &'a ModelParams,
    scheme: &'a SchemeParams,
    data: &'a BoundaryData,
    yosida: YosidaParams,
    brinkman: Option<BrinkmanSystem>,
    nutrient: DirectSolver,
    ch_linear: CsrMatrix,
    ch_pattern: Option<LuPattern>,
    boundary_mass_sums: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(
        ops: &'a AssembledOperators,
        model: &'a ModelParams,
        scheme: &'a SchemeParams,
        data: &'a BoundaryData,
    ) -> Result<Self> {
        let brinkman = if model.flow { Some(brinkman::assemble_brinkman(ops, model.brinkman)?) } else { None };
        Self::with_brinkman(ops, model, scheme, data, brinkman)
    }

    /// Uses an already assembled Brinkman system (ignored when flow is off).
    pub fn with_brinkman(
        ops: &'a AssembledOperators,
        model: &'a ModelParams,
        scheme: &'a SchemeParams,
        data: &'a BoundaryData,
        brinkman: Option<BrinkmanSystem>,
    ) -> Result<Self> {
        model.validate()?;
        scheme.validate()?;
        if model.flow && brinkman.is_none() {
            return Err(Error::InvalidParameter { name: "model.flow", reason: "flow is on but no Brinkman system given".into() });
        }
        let tau = scheme.tau;
        let nutrient_matrix = ops
            .mass
            .linear_combination(1.0, &ops.stiffness, tau)
            .linear_combination(1.0, &ops.boundary_mass, tau * model.kappa);
        let nutrient = DirectSolver::factor(&nutrient_matrix)?;
        Ok(Self {
            ops,
            model,
            scheme,
            data,
            yosida: scheme.yosida()?,
            brinkman: if model.flow { brinkman } else { None },
            nutrient,
            ch_linear: ch_linear_part(ops, scheme),
            ch_pattern: None,
            boundary_mass_sums: ops.boundary_mass.row_sums(),
        })
    }

    pub fn initial_state(&self) -> Result<SimState> {
        SimState::initial(self.ops, self.model, self.scheme, self.data)
    }

    /// Advances one step from `state`.
    pub fn step(&mut self, state: &SimState) -> Result<SimState> {
        self.step_with_guess(state, None)
    }

    /// Like [`Stepper::step`], with an explicit initial Newton iterate `(φ, μ̃)`.
    pub fn step_with_guess(&mut self, state: &SimState, guess: Option<(&[f64], &[f64])>) -> Result<SimState> {
        let ops = self.ops;
        let grid = ops.grid();
        let n = grid.node_count();
        let (tau, radius) = (self.scheme.tau, self.scheme.mollify);
        let t1 = state.t + tau;
        ops.check(&state.phi)?;

        // (1) lifting and divergence datum at the new time level
        let h = ops.harmonic_extension(&self.data.mu_sigma.boundary(ops, t1, radius))?;
        let g_vals = self.model.g.nodal(ops, t1, radius);
        let g = ScalarField::new(grid, g_vals, BoundaryTag::Neumann)?;
        let mu_plus_h_n = ScalarField::new(grid, add(state.mu.values(), state.h.values()), BoundaryTag::Neumann)?;
        let (s_phi, s_sigma) = source_eval(&self.model.source, &state.phi, &state.sigma, Some(&mu_plus_h_n), self.model.chi)?;

        let mut phi_k = state.phi.clone();
        let mut mu_k = state.mu.clone();
        let mut sigma_k = state.sigma.clone();
        let mut out = None;
        for sweep in 0..self.scheme.coupling_iters {
            // (2) Brinkman with Korteweg forcing from the latest iterate
            let forcing_mu = ScalarField::new(grid, add(mu_k.values(), h.values()), BoundaryTag::Neumann)?;
            let (v, p) = match &self.brinkman {
                Some(sys) => {
                    let load = brinkman::korteweg_rhs(ops, &forcing_mu, &phi_k, &sigma_k, self.model.chi)?;
                    brinkman::solve_brinkman(ops, sys, &load, &g)?
                }
                None => (VectorField::zeros(grid), ScalarField::zeros(grid, BoundaryTag::Neumann)),
            };

            // (3) Cahn–Hilliard block
            let guess = if sweep == 0 { guess } else { None };
            let ch = self.solve_ch(state, &h, &v, &g, &s_phi, guess)?;

            // (4) nutrient
            let (sigma_new, nutrient_balance) = self.solve_nutrient(state, &ch.phi, &v, &g, &s_sigma, t1)?;

            phi_k = ScalarField::new(grid, ch.phi, BoundaryTag::Neumann)?;
            mu_k = ScalarField::new(grid, ch.mu, BoundaryTag::DirichletZero)?;
            sigma_k = ScalarField::new(grid, sigma_new, BoundaryTag::Robin { kappa: self.model.kappa })?;
            let divergence_residual = brinkman::divergence_residual(ops, v.values(), g.values());
            out = Some((v, p, StepReport {
                newton_iters: ch.iters,
                ch_residual: ch.residual,
                nutrient_balance,
                phi_balance: ch.phi_balance,
                divergence_residual,
            }));
        }
        let (v, p, report) = out.expect("at least one coupling sweep");
        debug_assert_eq!(v.values().len(), 2 * n);
        Ok(SimState { t: t1, step: state.step + 1, phi: phi_k, mu: mu_k, sigma: sigma_k, h, v, p, report })
    }

    fn solve_ch(
        &mut self,
        state: &SimState,
        h: &ScalarField,
        v: &VectorField,
        g: &ScalarField,
        s_phi: &[f64],
        guess: Option<(&[f64], &[f64])>,
    ) -> Result<ChSolution> {
        let ops = self.ops;
        let grid = ops.grid();
        let n = grid.node_count();
        let interior = grid.interior_nodes();
        let (tau, eps, chi) = (self.scheme.tau, self.scheme.epsilon, self.model.chi);
        let phi_n = state.phi.values();
        let mu_n = state.mu.values();
        let sigma_n = state.sigma.values();
        let pot = &self.model.potential;

        // constant parts of both residuals
        let adv = advection_load(ops, phi_n, v.values(), g.values());
        let m_mu = ops.mass.matvec(mu_n);
        let m_phi = ops.mass.matvec(phi_n);
        let m_src = ops.mass.matvec(s_phi);
        let c1: Vec<f64> = (0..n).map(|i| eps * m_mu[i] + m_phi[i] + tau * (m_src[i] - adv[i])).collect();
        let pi_load = quad_load(ops, phi_n, |r| pot.pi_prime(r))?;
        let coupling: Vec<f64> = (0..n).map(|i| h.values()[i] + chi * sigma_n[i]).collect();
        let m_coupling = ops.mass.matvec(&coupling);
        let c2: Vec<f64> = (0..n).map(|i| eps * m_phi[i] - tau * pi_load[i] + tau * m_coupling[i]).collect();

        let (mut phi, mut mu) = match guess {
            Some((gp, gm)) if gp.len() == n && gm.len() == n => (gp.to_vec(), gm.to_vec()),
            _ => (phi_n.to_vec(), mu_n.to_vec()),
        };
        for &k in grid.boundary_nodes() {
            mu[k] = 0.0;
        }

        let scale: Vec<f64> = ops.lumped_mass.iter().map(|m| 1.0 / (tau * m)).collect();
        // R1 (interior rows only) and R2, with the scaled max-norm and term magnitude
        let eval = |phi: &[f64], mu: &[f64]| -> Result<(Vec<f64>, Vec<f64>, f64, f64)> {
            let beta = quad_load(ops, phi, |r| pot.yosida_beta(&self.yosida, r))?;
            let m_mu = ops.mass.matvec(mu);
            let k_mu = ops.stiffness.matvec(mu);
            let m_phi = ops.mass.matvec(phi);
            let k_phi = ops.stiffness.matvec(phi);
            let mut r1 = vec![0.0; n];
            let mut r2 = vec![0.0; n];
            let (mut res, mut mag) = (0.0f64, 0.0f64);
            for i in 0..n {
                if !grid.is_boundary(i) {
                    let lin = eps * m_mu[i] + m_phi[i] + tau * k_mu[i];
                    r1[i] = lin - c1[i];
                    mag = mag.max((lin.abs() + c1[i].abs()) * scale[i]);
                    res = res.max(r1[i].abs() * scale[i]);
                }
                let lin = eps * m_phi[i] + tau * k_phi[i] + tau * beta[i] - tau * m_mu[i];
                r2[i] = lin - c2[i];
                mag = mag.max((lin.abs() + c2[i].abs()) * scale[i]);
                res = res.max(r2[i].abs() * scale[i]);
            }
            if !res.is_finite() {
                return Err(Error::NonFiniteInput(res));
            }
            Ok((r1, r2, res, mag))
        };

        let (mut r1, mut r2, mut res, mut mag) = eval(&phi, &mu)?;
        // round-off floor: the residual cannot drop below a few ulps of its terms
        let tol = |mag: f64| self.scheme.newton_tol.max(256.0 * f64::EPSILON * mag);
        let mut iters = 0;
        while res > tol(mag) {
            if iters == self.scheme.newton_max {
                return Err(Error::NewtonDiverged { iters, residual: res });
            }
            let jac = self.ch_jacobian(&phi)?;
            let lu = DirectSolver::factor_symmetric(&jac, self.ch_pattern.as_ref())?;
            if self.ch_pattern.is_none() {
                self.ch_pattern = Some(lu.pattern().clone());
            }
            // symmetric ordering of the equations: [R2; −τ R1_I]
            let mut rhs = Vec::with_capacity(n + interior.len());
            rhs.extend(r2.iter().map(|v| -v));
            rhs.extend(interior.iter().map(|&k| tau * r1[k]));
            let dz = lu.solve(&rhs)?;
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..12 {
                let phi_t: Vec<f64> = phi.iter().zip(&dz[..n]).map(|(a, d)| a + alpha * d).collect();
                let mut mu_t = mu.clone();
                for (j, &k) in interior.iter().enumerate() {
                    mu_t[k] += alpha * dz[n + j];
                }
                match eval(&phi_t, &mu_t) {
                    Ok((a1, a2, rest, magt)) if rest < res || alpha < 1e-3 => {
                        accepted = Some((phi_t, mu_t, a1, a2, rest, magt));
                        break;
                    }
                    _ => alpha *= 0.5,
                }
            }
            let Some((pt, mt, a1, a2, rest, magt)) = accepted else {
                return Err(Error::NewtonDiverged { iters: iters + 1, residual: res });
            };
            (phi, mu, r1, r2, res, mag) = (pt, mt, a1, a2, rest, magt);
            iters += 1;
        }
        let _ = r1;

        // second equation tested with z ≡ 1
        let sum: f64 = r2.iter().sum();
        let abs_sum: f64 = r2.iter().zip(&c2).map(|(r, c)| (r + c).abs() + c.abs()).sum();
        let phi_balance = if abs_sum > 0.0 { sum.abs() / abs_sum } else { 0.0 };
        Ok(ChSolution { phi, mu, iters, residual: res, phi_balance })
    }

    /// Symmetric quasi-definite Newton matrix in the unknowns `[δφ; δμ̃_I]`.
    fn ch_jacobian(&self, phi: &[f64]) -> Result<CsrMatrix> {
        let ops = self.ops;
        let grid = ops.grid();
        let quad = ops.quadrature();
        let tau = self.scheme.tau;
        let m = self.ch_linear.nrows();
        let mut t = TripletBuilder::with_capacity(m, m, self.ch_linear.nnz() + 16 * grid.cell_count());
        t.add_block(0, 0, &self.ch_linear, 1.0);
        for (ci, cj) in grid.cells() {
            let nodes = grid.cell_nodes(ci, cj);
            let loc = ops.local(&nodes, phi);
            let mut d = [0.0; 4];
            for (q, dq) in d.iter_mut().enumerate() {
                *dq = self.model.potential.yosida_beta_derivative(&self.yosida, quad.value(q, &loc))?;
            }
            for a in 0..4 {
                for b in 0..4 {
                    let v: f64 = (0..4).map(|q| quad.weight * d[q] * (quad.n[q][a] * quad.n[q][b])).sum();
                    t.push(nodes[a], nodes[b], tau * v);
                }
            }
        }
        Ok(t.build())
    }

    fn solve_nutrient(
        &self,
        state: &SimState,
        phi_new: &[f64],
        v: &VectorField,
        g: &ScalarField,
        s_sigma: &[f64],
        t1: f64,
    ) -> Result<(Vec<f64>, f64)> {
        let ops = self.ops;
        let n = ops.grid().node_count();
        let (tau, chi, kappa) = (self.scheme.tau, self.model.chi, self.model.kappa);
        let sigma_n = state.sigma.values();
        let m_sigma = ops.mass.matvec(sigma_n);
        let k_phi = ops.stiffness.matvec(phi_new);
        let m_src = ops.mass.matvec(s_sigma);
        let adv = advection_load(ops, sigma_n, v.values(), g.values());
        let sig_b = self.data.sigma_sigma.nodal(ops, t1, 0.0);
        let robin = ops.boundary_mass.matvec(&sig_b);
        let rhs: Vec<f64> = (0..n)
            .map(|i| m_sigma[i] + tau * chi * k_phi[i] + tau * (m_src[i] - adv[i]) + tau * kappa * robin[i])
            .collect();
        let sigma = self.nutrient.solve(&rhs)?;

        // ∫(σⁿ⁺¹−σⁿ)/τ = ∫S_σ − ∫(∇σⁿ·v + σⁿg) + κ∫_Γ(σ_Σ − σⁿ⁺¹)
        let lm = &ops.lumped_mass;
        let change: f64 = (0..n).map(|i| lm[i] * (sigma[i] - sigma_n[i])).sum::<f64>() / tau;
        let src: f64 = m_src.iter().sum();
        let advection: f64 = adv.iter().sum();
        let exchange: f64 = (0..n).map(|i| kappa * self.boundary_mass_sums[i] * (sig_b[i] - sigma[i])).sum();
        let resid = change - src + advection - exchange;
        let magnitude = (0..n).map(|i| lm[i] * (sigma[i].abs() + sigma_n[i].abs())).sum::<f64>() / tau
            + m_src.iter().map(|v| v.abs()).sum::<f64>()
            + adv.iter().map(|v| v.abs()).sum::<f64>()
            + (0..n).map(|i| kappa * self.boundary_mass_sums[i] * (sig_b[i].abs() + sigma[i].abs())).sum::<f64>();
        let balance = if magnitude > 0.0 { resid.abs() / magnitude } else { 0.0 };
        Ok((sigma, balance))
    }
}

struct ChSolution {
    phi: Vec<f64>,
    mu: Vec<f64>,
    iters: usize,
    residual: f64,
    phi_balance: f64,
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Linear part of the symmetric CH Newton matrix
/// `[[εM + τK, −τM_{:,I}], [−τM_{I,:}, −τ(εM + τK)_{II}]]`, where `I` are the
/// interior nodes carrying the homogenized chemical potential.
fn ch_linear_part(ops: &AssembledOperators, scheme: &SchemeParams) -> CsrMatrix {
    let grid = ops.grid();
    let n = grid.node_count();
    let (tau, eps) = (scheme.tau, scheme.epsilon);
    let visc = ops.mass.linear_combination(eps, &ops.stiffness, tau);
    let mut local = vec![usize::MAX; n];
    for (j, &k) in grid.interior_nodes().iter().enumerate() {
        local[k] = n + j;
    }
    let m = n + grid.interior_nodes().len();
    let mut t = TripletBuilder::with_capacity(m, m, 4 * ops.mass.nnz());
    for i in 0..n {
        for (j, a) in visc.row(i) {
            t.push(i, j, a);
            if local[i] != usize::MAX && local[j] != usize::MAX {
                t.push(local[i], local[j], -tau * a);
            }
        }
        for (j, mij) in ops.mass.row(i) {
            if local[j] != usize::MAX {
                t.push(i, local[j], -tau * mij);
            }
            if local[i] != usize::MAX {
                t.push(local[i], j, -tau * mij);
            }
        }
    }
    t.build()
}

/// `∫ f(u_h) ψ_i` by 2×2 Gauss on the bilinear interpolant of `u`.
pub(crate) fn quad_load(ops: &AssembledOperators, u: &[f64], f: impl Fn(f64) -> Result<f64>) -> Result<Vec<f64>> {
    let grid = ops.grid();
    let quad = ops.quadrature();
    let mut out = vec![0.0; grid.node_count()];
    for (ci, cj) in grid.cells() {
        let nodes = grid.cell_nodes(ci, cj);
        let loc = ops.local(&nodes, u);
        for q in 0..4 {
            let fq = f(quad.value(q, &loc))?;
            for a in 0..4 {
                out[nodes[a]] += quad.weight * fq * quad.n[q][a];
            }
        }
    }
    Ok(out)
}

/// `∫ (∇u·v + u g) ψ_i` for nodal `u`, `g` and interleaved `v`.
fn advection_load(ops: &AssembledOperators, u: &[f64], v: &[f64], g: &[f64]) -> Vec<f64> {
    let grid = ops.grid();
    let quad = ops.quadrature();
    let mut out = vec![0.0; grid.node_count()];
    if v.iter().all(|&x| x == 0.0) && g.iter().all(|&x| x == 0.0) {
        return out;
    }
    for (ci, cj) in grid.cells() {
        let nodes = grid.cell_nodes(ci, cj);
        let lu = ops.local(&nodes, u);
        let lg = ops.local(&nodes, g);
        let lv1 = nodes.map(|k| v[2 * k]);
        let lv2 = nodes.map(|k| v[2 * k + 1]);
        for q in 0..4 {
            let (ux, uy) = quad.gradient(q, &lu);
            let val = ux * quad.value(q, &lv1) + uy * quad.value(q, &lv2) + quad.value(q, &lu) * quad.value(q, &lg);
            for a in 0..4 {
                out[nodes[a]] += quad.weight * val * quad.n[q][a];
            }
        }
    }
    out
}

/// One step with a freshly built solver context.
pub fn step(
    state: &SimState,
    ops: &AssembledOperators,
    model: &ModelParams,
    scheme: &SchemeParams,
    data: &BoundaryData,
) -> Result<SimState> {
    Stepper::new(ops, model, scheme, data)?.step(state)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Vec<SimState>,
    pub ledger: DiagnosticsLedger,
}

/// Runs all steps, keeping every `snapshot_every`-th state (plus the first
/// and last) in the trajectory.
pub fn run(
    ops: &AssembledOperators,
    model: &ModelParams,
    scheme: &SchemeParams,
    data: &BoundaryData,
    snapshot_every: usize,
) -> Result<RunOutput> {
    let mut trajectory = Vec::new();
    let ledger = run_with(ops, model, scheme, data, |s, _| {
        let last = s.step == scheme.step_count();
        if s.step == 0 || last || (snapshot_every > 0 && s.step % snapshot_every == 0) {
            trajectory.push(s.clone());
        }
        Ok(())
    })?;
    Ok(RunOutput { trajectory, ledger })
}

/// Runs all steps, calling `observe` after the ledger row of each state
/// (including the initial one) is recorded.
pub fn run_with(
    ops: &AssembledOperators,
    model: &ModelParams,
    scheme: &SchemeParams,
    data: &BoundaryData,
    mut observe: impl FnMut(&SimState, &DiagnosticsLedger) -> Result<()>,
) -> Result<DiagnosticsLedger> {
    let mut stepper = Stepper::new(ops, model, scheme, data)?;
    let mut state = stepper.initial_state()?;
    let mut ledger = DiagnosticsLedger::new();
    diagnostics::record(&mut ledger, &state, model, scheme, ops);
    observe(&state, &ledger)?;
    for k in 0..scheme.step_count() {
        state = stepper.step(&state).map_err(|e| Error::StepFailed { step: k + 1, source: Box::new(e) })?;
        diagnostics::record(&mut ledger, &state, model, scheme, ops);
        observe(&state, &ledger)?;
    }
    Ok(ledger)
}

#[derive(Debug, Clone)]
pub struct ContinuationLevel {
    pub epsilon: f64,
    pub ledger: DiagnosticsLedger,
    /// `ε^{1/2} max_t ‖μ̃(t)‖_{L²}`
    pub sqrt_eps_mu: f64,
    pub final_phi: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ContinuationReport {
    pub levels: Vec<ContinuationLevel>,
    /// `‖φ_{ε_{i+1}} − φ_{ε_i}‖_{L²(Q)}` for consecutive levels.
    pub phi_differences: Vec<f64>,
    pub sigma_differences: Vec<f64>,
}

impl ContinuationReport {
    pub fn differences_strictly_decreasing(&self) -> bool {
        self.phi_differences.windows(2).all(|w| w[1] < w[0])
    }

    /// Largest ratio `sqrt_eps_mu[i+1] / sqrt_eps_mu[i]`.
    pub fn max_growth(&self) -> f64 {
        self.levels
            .windows(2)
            .map(|w| if w[0].sqrt_eps_mu > 0.0 { w[1].sqrt_eps_mu / w[0].sqrt_eps_mu } else if w[1].sqrt_eps_mu > 0.0 { f64::INFINITY } else { 1.0 })
            .fold(0.0, f64::max)
    }
}

/// Runs the whole trajectory for each ε of a strictly decreasing schedule,
/// starting each Newton solve from the previous level's state at the same step.
pub fn eps_continuation(
    ops: &AssembledOperators,
    model: &ModelParams,
    scheme: &SchemeParams,
    data: &BoundaryData,
    schedule: &[f64],
) -> Result<ContinuationReport> {
    if schedule.is_empty() || schedule.windows(2).any(|w| !(w[1] < w[0])) || schedule.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidParameter {
            name: "eps_schedule",
            reason: "must be a nonempty strictly decreasing list of positive values".into(),
        });
    }
    let steps = scheme.step_count();
    let mut levels = Vec::with_capacity(schedule.len());
    let mut phi_differences = Vec::new();
    let mut sigma_differences = Vec::new();
    let mut previous: Option<Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>> = None;
    for &eps in schedule {
        let sch = SchemeParams { epsilon: eps, ..*scheme };
        let mut stepper = Stepper::new(ops, model, &sch, data)?;
        let mut state = stepper.initial_state()?;
        let mut ledger = DiagnosticsLedger::new();
        diagnostics::record(&mut ledger, &state, model, &sch, ops);
        let mut history = Vec::with_capacity(steps + 1);
        history.push((state.phi.values().to_vec(), state.mu.values().to_vec(), state.sigma.values().to_vec()));
        for k in 0..steps {
            let guess = previous.as_ref().map(|p| (p[k + 1].0.as_slice(), p[k + 1].1.as_slice()));
            state = stepper
                .step_with_guess(&state, guess)
                .map_err(|e| Error::StepFailed { step: k + 1, source: Box::new(e) })?;
            diagnostics::record(&mut ledger, &state, model, &sch, ops);
            history.push((state.phi.values().to_vec(), state.mu.values().to_vec(), state.sigma.values().to_vec()));
        }
        if let Some(prev) = &previous {
            let (mut dphi, mut dsig) = (0.0, 0.0);
            for k in 1..=steps {
                let a: Vec<f64> = history[k].0.iter().zip(&prev[k].0).map(|(x, y)| x - y).collect();
                let b: Vec<f64> = history[k].2.iter().zip(&prev[k].2).map(|(x, y)| x - y).collect();
                dphi += scheme.tau * ops.mass.bilinear(&a, &a);
                dsig += scheme.tau * ops.mass.bilinear(&b, &b);
            }
            phi_differences.push(dphi.sqrt());
            sigma_differences.push(dsig.sqrt());
        }
        let sqrt_eps_mu = ledger.rows().iter().map(|r| r.sqrt_eps_mu).fold(0.0, f64::max);
        levels.push(ContinuationLevel { epsilon: eps, ledger, sqrt_eps_mu, final_phi: state.phi.values().to_vec() });
        previous = Some(history);
    }
    Ok(ContinuationReport { levels, phi_differences, sigma_differences })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{assemble, build_grid};

    fn field(ops: &AssembledOperators, v: f64) -> ScalarField {
        ScalarField::constant(ops.grid(), v, BoundaryTag::Neumann)
    }

    #[test]
    fn linear_kinetic_examples() {
        let g = build_grid(1.0, 1.0, 2, 2).unwrap();
        let ops = assemble(&g);
        let spec = SourceSpec::LinearKinetic { p: 1.0, a: 1.0, b: 0.5, c: 0.3, sigma_c: 1.0, weight: Weight::Clamp };
        let (sp, _) = source_eval(&spec, &field(&ops, -1.0), &field(&ops, 0.7), None, 0.0).unwrap();
        assert!(sp.iter().all(|&v| v == 0.0));
        let spec = SourceSpec::LinearKinetic { p: 2.0, a: 1.0, b: 0.0, c: 0.0, sigma_c: 0.0, weight: Weight::Clamp };
        let (sp, _) = source_eval(&spec, &field(&ops, 1.0), &field(&ops, 1.0), None, 0.0).unwrap();
        assert!(sp.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn phenomenological_needs_mu_and_vanishes_at_equilibrium() {
        let g = build_grid(1.0, 1.0, 2, 2).unwrap();
        let ops = assemble(&g);
        let spec = SourceSpec::Phenomenological { p0: 1.0, weight: Weight::Clamp };
        assert!(matches!(
            source_eval(&spec, &field(&ops, 0.2), &field(&ops, 0.5), None, 1.0),
            Err(Error::MissingChemicalPotential)
        ));
        // σ + χ(1−φ) − μ = 0.5 + 0.8 − 1.3 = 0
        let (sp, ss) = source_eval(&spec, &field(&ops, 0.2), &field(&ops, 0.5), Some(&field(&ops, 1.3)), 1.0).unwrap();
        assert!(sp.iter().chain(&ss).all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn weights_hit_endpoints() {
        for w in [Weight::Clamp, Weight::Smoothstep] {
            assert_eq!(w.eval(-1.0), 0.0);
            assert_eq!(w.eval(1.0), 1.0);
            assert_eq!(w.eval(-3.0), 0.0);
            assert_eq!(w.eval(2.0), 1.0);
        }
    }

    #[test]
    fn step_count_uses_whole_steps() {
        let s = SchemeParams { tau: 1e-3, t_end: 0.2, ..Default::default() };
        assert_eq!(s.step_count(), 200);
        let s = SchemeParams { tau: 0.1, t_end: 0.05, ..Default::default() };
        assert_eq!(s.step_count(), 0);
    }

    #[test]
    fn mollified_constant_is_unchanged() {
        let s = Signal::Oscillating { mean: 1.0, amplitude: 0.0, frequency: 3.0 };
        assert_eq!(s.mollified(0.0, 0.0, 0.4, 0.1), 1.0);
        let s = Signal::Oscillating { mean: 0.0, amplitude: 1.0, frequency: 1.0 };
        // average of sin over a full period is zero
        assert!(s.mollified(0.0, 0.0, 0.3, 0.5).abs() < 1e-12);
    }
}
