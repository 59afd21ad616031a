//! The verification suite run by `chb verify`.
//!
//! Each check builds its own scenario, so checks are independent and may run
//! in any order or in parallel.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::brinkman::{self, BrinkmanParams};
use crate::config::parse_config;
use crate::diagnostics::{self, LedgerSummary};
use crate::error::Result;
use crate::grid::{assemble, build_grid, BoundaryTag, ScalarField, VectorField};
use crate::potentials::{PotentialSpec, SplitPotential, YosidaParams};
use crate::stepper::{eps_continuation, run};

pub const SPINODAL_REGULAR: &str = "\
[init]
preset = \"spinodal\"
seed = 1
";

pub const SPINODAL_OBSTACLE: &str = "\
[potential]
kind = \"double_obstacle\"
c = 2.0

[scheme]
tau = 5e-3
t_end = 1.0

[init]
preset = \"spinodal\"
seed = 1
";

pub const CONTINUATION: &str = "\
[grid]
nx = 32
ny = 32

[potential]
kind = \"double_obstacle\"
c = 2.0

[scheme]
tau = 5e-3
t_end = 0.5

[init]
preset = \"spinodal\"
seed = 1
";

pub const TUMOR: &str = "\
[init]
preset = \"tumor_seed\"
";

pub const CONTINUATION_SCHEDULE: [f64; 4] = [1e-1, 3e-2, 1e-2, 3e-3];

#[derive(Debug, Clone)]
pub struct Check {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Check {
    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {:<28} {} ({:.1}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

pub const CHECKS: [(usize, &str); 10] = [
    (1, "yosida calculus"),
    (2, "double obstacle closed form"),
    (3, "brinkman constant forcing"),
    (4, "brinkman convergence"),
    (5, "energy dissipation"),
    (6, "nutrient balance"),
    (7, "obstacle overshoot"),
    (8, "epsilon continuation"),
    (9, "ledger under refinement"),
    (10, "reproducibility"),
];

pub fn run_check(id: usize) -> Check {
    let name = CHECKS.iter().find(|c| c.0 == id).map_or("unknown", |c| c.1);
    let start = Instant::now();
    let outcome = match id {
        1 => yosida_calculus(),
        2 => obstacle_closed_form(),
        3 => brinkman_constant(),
        4 => brinkman_convergence(),
        5 => energy_dissipation(),
        6 => nutrient_balance(),
        7 => obstacle_overshoot(),
        8 => continuation(),
        9 => refinement(),
        10 => reproducibility(),
        _ => Ok((false, "no such check".into())),
    };
    let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    Check { id, name, passed, detail, elapsed: start.elapsed() }
}

type Outcome = Result<(bool, String)>;

const LIP_MIN_GAP: f64 = 1e-4;

fn potentials_under_test() -> Result<Vec<SplitPotential>> {
    Ok(vec![
        SplitPotential::regular(),
        SplitPotential::new(PotentialSpec::Logarithmic { theta: 1.0, theta0: 2.0 })?,
        SplitPotential::new(PotentialSpec::DoubleObstacle { c: 1.0 })?,
    ])
}

fn yosida_calculus() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut mono, mut lip, mut env, mut fd_worst) = (0usize, 0usize, 0usize, 0.0f64);
    for pot in potentials_under_test()? {
        for eps in [1e-1, 1e-2, 1e-3] {
            let y = YosidaParams::new(eps)?;
            let drawn: Vec<f64> = (0..10_000).map(|_| rng.random_range(-5.0..=5.0)).collect();
            // Lipschitz quotients over pairs in draw order; pairs closer than
            // LIP_MIN_GAP are below what rounding of β_ε can resolve at 1e-10
            for w in drawn.chunks_exact(2) {
                let dr = (w[1] - w[0]).abs();
                if dr >= LIP_MIN_GAP {
                    let db = (pot.yosida_beta(&y, w[1])? - pot.yosida_beta(&y, w[0])?).abs();
                    if db / dr > (1.0 + 1e-10) / eps {
                        lip += 1;
                    }
                }
            }
            let mut pts = drawn;
            pts.sort_by(f64::total_cmp);
            let beta: Vec<f64> = pts.iter().map(|&r| pot.yosida_beta(&y, r)).collect::<Result<_>>()?;
            mono += beta.windows(2).filter(|w| w[1] < w[0]).count();
            let d = 1e-5;
            for (&r, &b) in pts.iter().zip(&beta) {
                let m = pot.moreau_hat(&y, r)?;
                let upper = if pot.domain().contains(r) { pot.beta_hat(r)? } else { f64::INFINITY };
                if !(m >= 0.0 && m <= upper) {
                    env += 1;
                }
                let near_kink = pot.domain().lo.is_finite() && ((r.abs() - 1.0).abs() < 10.0 * d);
                if !near_kink {
                    let fd = (pot.moreau_hat(&y, r + d)? - pot.moreau_hat(&y, r - d)?) / (2.0 * d);
                    fd_worst = fd_worst.max((fd - b).abs() / b.abs().max(1.0));
                }
            }
        }
    }
    let ok = mono == 0 && lip == 0 && env == 0 && fd_worst <= 1e-5;
    Ok((ok, format!("monotone {mono}, lipschitz {lip}, envelope {env} violations; fd {fd_worst:.2e}")))
}

fn obstacle_closed_form() -> Outcome {
    let pot = SplitPotential::new(PotentialSpec::DoubleObstacle { c: 1.0 })?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for eps in [1e-1, 1e-2, 1e-3] {
        let y = YosidaParams::new(eps)?;
        for _ in 0..10_000 {
            let r: f64 = rng.random_range(-5.0..=5.0);
            worst = worst.max((pot.yosida_beta(&y, r)? - (r - r.clamp(-1.0, 1.0)) / eps).abs());
        }
    }
    Ok((worst <= 1e-14, format!("max error {worst:.2e}")))
}

fn brinkman_constant() -> Outcome {
    let grid = build_grid(1.0, 1.0, 32, 32)?;
    let ops = assemble(&grid);
    let params = BrinkmanParams { eta: 1.0, lambda: 1.0, nu: 2.0, ..BrinkmanParams::default() };
    let sys = brinkman::assemble_brinkman(&ops, params)?;
    let f = (0.7, -1.3);
    let force = VectorField::from_fn(&grid, |_, _| f)?;
    let load = brinkman::body_force_load(&ops, &force)?;
    let g = ScalarField::zeros(&grid, BoundaryTag::Neumann);
    let (v, p) = sys.solve(&load, &g)?;
    let ev = v.chunks(2).map(|c| (c[0] - f.0 / 2.0).abs().max((c[1] - f.1 / 2.0).abs())).fold(0.0, f64::max);
    let ep = p.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok((ev <= 1e-10 && ep <= 1e-9, format!("|v - f/nu| {ev:.2e}, |p| {ep:.2e}")))
}

fn brinkman_convergence() -> Outcome {
    let params = BrinkmanParams { eta: 1.0, lambda: 1.0, nu: 1.0, ..BrinkmanParams::default() };
    let report = diagnostics::brinkman_study(params, &[8, 16, 32, 64])?;
    let ov = report.min_order("velocity_l2").unwrap_or(f64::NAN);
    let op = report.min_order("pressure_l2").unwrap_or(f64::NAN);

    // superposition of two independent data sets on the same system
    let grid = build_grid(1.0, 1.0, 16, 16)?;
    let ops = assemble(&grid);
    let sys = brinkman::assemble_brinkman(&ops, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let n = grid.node_count();
    let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(-1.0..=1.0)).collect() };
    let (l1, l2) = (draw(2 * n), draw(2 * n));
    let (g1, g2) = (draw(n), draw(n));
    let (a, b) = (0.6, -1.7);
    let gf = |v: Vec<f64>| ScalarField::new(&grid, v, BoundaryTag::Neumann);
    let (v1, p1) = sys.solve(&l1, &gf(g1.clone())?)?;
    let (v2, p2) = sys.solve(&l2, &gf(g2.clone())?)?;
    let l: Vec<f64> = l1.iter().zip(&l2).map(|(x, y)| a * x + b * y).collect();
    let g: Vec<f64> = g1.iter().zip(&g2).map(|(x, y)| a * x + b * y).collect();
    let (v, p) = sys.solve(&l, &gf(g)?)?;
    let mut sup = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..v.len() {
        sup = sup.max((v[i] - a * v1[i] - b * v2[i]).abs());
        scale = scale.max(v[i].abs());
    }
    for i in 0..p.len() {
        sup = sup.max((p[i] - a * p1[i] - b * p2[i]).abs());
        scale = scale.max(p[i].abs());
    }
    let lin = sup / scale.max(1.0);
    let ok = ov >= 1.8 && op >= 0.9 && lin <= 1e-10;
    Ok((ok, format!("velocity order {ov:.3}, pressure order {op:.3}, superposition {lin:.2e}")))
}

fn summary_of(text: &str, epsilon: Option<f64>) -> Result<LedgerSummary> {
    let mut cfg = parse_config(text)?;
    if let Some(e) = epsilon {
        cfg.scheme.epsilon = e;
    }
    let s = cfg.scenario()?;
    Ok(run(&s.ops, &s.model, &s.scheme, &s.data, 0)?.ledger.summary())
}

fn energy_dissipation() -> Outcome {
    let s = summary_of(SPINODAL_REGULAR, None)?;
    let ok = s.steps == 200 && s.max_energy_eps_increase <= 1e-10;
    Ok((ok, format!("{} steps, max relative increase {:.2e}", s.steps, s.max_energy_eps_increase)))
}

fn nutrient_balance() -> Outcome {
    let s = summary_of(TUMOR, None)?;
    let ok = s.steps == 100 && s.max_nutrient_balance <= 1e-10;
    Ok((ok, format!("{} steps, max balance residual {:.2e}", s.steps, s.max_nutrient_balance)))
}

fn obstacle_overshoot() -> Outcome {
    let coarse = summary_of(SPINODAL_OBSTACLE, Some(1e-1))?.max_overshoot;
    let fine = summary_of(SPINODAL_OBSTACLE, Some(1e-3))?.max_overshoot;
    let ok = fine < coarse && fine <= 0.05;
    Ok((ok, format!("overshoot {coarse:.4} at eps=1e-1, {fine:.4} at eps=1e-3")))
}

fn continuation() -> Outcome {
    let s = parse_config(CONTINUATION)?.scenario()?;
    let r = eps_continuation(&s.ops, &s.model, &s.scheme, &s.data, &CONTINUATION_SCHEDULE)?;
    let growth = r.max_growth();
    let ok = r.differences_strictly_decreasing() && growth <= 1.1;
    let d: Vec<String> = r.phi_differences.iter().map(|x| format!("{x:.3e}")).collect();
    Ok((ok, format!("differences [{}], max growth {growth:.3}", d.join(", "))))
}

fn refinement() -> Outcome {
    let mut levels = Vec::new();
    for n in [16usize, 32, 64] {
        let mut cfg = parse_config(TUMOR)?;
        cfg.grid.nx = n;
        cfg.grid.ny = n;
        let s = cfg.scenario()?;
        levels.push(run(&s.ops, &s.model, &s.scheme, &s.data, 0)?.ledger.summary());
    }
    let (a, b) = (&levels[1], &levels[2]);
    let pairs = [
        ("v", a.v_l2v, b.v_l2v),
        ("grad_mu", a.grad_mu_l2, b.grad_mu_l2),
        ("phi", a.phi_linf_v, b.phi_linf_v),
        ("sigma", a.sigma_linf_h, b.sigma_linf_h),
        ("p", a.p_l43, b.p_l43),
    ];
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (name, x, y) in pairs {
        let rel = relative_change(x, y);
        worst = worst.max(rel);
        parts.push(format!("{name} {:.1}%", 100.0 * rel));
    }
    Ok((worst < 0.25, parts.join(", ")))
}

/// `|a − b| / max(|a|, |b|)`, 0 when both vanish.
pub fn relative_change(a: f64, b: f64) -> f64 {
    let m = a.abs().max(b.abs());
    if m == 0.0 {
        0.0
    } else {
        (a - b).abs() / m
    }
}

fn reproducibility() -> Outcome {
    let csv = || -> Result<String> {
        let mut cfg = parse_config(TUMOR)?;
        cfg.grid.nx = 16;
        cfg.grid.ny = 16;
        cfg.scheme.t_end = 0.02;
        cfg.init.noise = 0.01;
        let s = cfg.scenario()?;
        Ok(run(&s.ops, &s.model, &s.scheme, &s.data, 0)?.ledger.to_csv())
    };
    let (a, b) = (csv()?, csv()?);
    Ok((a == b, format!("{} bytes, identical: {}", a.len(), a == b)))
}
