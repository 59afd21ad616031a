//! Double-well potentials split as `F = β̂ + π̂` (convex l.s.c. part plus a
//! smooth perturbation with Lipschitz derivative) and the Moreau–Yosida
//! calculus of the convex part: resolvent `J_ε = (I + εβ)⁻¹`, the Yosida
//! approximation `β_ε = (I − J_ε)/ε` and the Moreau envelope `B̂_ε`.
//!
//! Extended reals are plain `f64` with `+∞` encoding "outside the domain of
//! β̂". NaN arguments are rejected with [`Error::NonFiniteInput`].

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Distance kept from the singular endpoints ±1 of the logarithmic potential.
const LOG_EDGE: f64 = 1e-14;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied convex/smooth split. `beta_hat` must be convex, l.s.c.,
/// nonnegative with `beta_hat(0) = 0`, and `+∞` outside `domain`.
#[derive(Clone)]
pub struct CustomPotential {
    pub name: String,
    pub beta_hat: ScalarFn,
    /// Derivative of `beta_hat` in the interior of its domain.
    pub beta: ScalarFn,
    pub beta_prime: ScalarFn,
    pub pi_hat: ScalarFn,
    pub pi: ScalarFn,
    pub pi_lipschitz: f64,
    pub domain: Interval,
    pub superquadratic: bool,
}

impl CustomPotential {
    /// `β̂(r) = a|r|^q`, `π̂(r) = −(b/2) r²`; superquadratic iff `q > 2`.
    pub fn power_law(a: f64, q: f64, b: f64) -> Self {
        Self {
            name: format!("power_law(a={a}, q={q}, b={b})"),
            beta_hat: Arc::new(move |r: f64| a * r.abs().powf(q)),
            beta: Arc::new(move |r: f64| a * q * r.abs().powf(q - 1.0) * r.signum()),
            beta_prime: Arc::new(move |r: f64| a * q * (q - 1.0) * r.abs().powf(q - 2.0)),
            pi_hat: Arc::new(move |r: f64| -0.5 * b * r * r),
            pi: Arc::new(move |r: f64| -b * r),
            pi_lipschitz: b.abs(),
            domain: Interval::REAL,
            superquadratic: q > 2.0,
        }
    }
}

impl fmt::Debug for CustomPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomPotential")
            .field("name", &self.name)
            .field("pi_lipschitz", &self.pi_lipschitz)
            .field("domain", &self.domain)
            .finish_non_exhaustive()
    }
}

/// Closed interval `[lo, hi]` of the extended real line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const REAL: Interval = Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY };
    pub const UNIT: Interval = Interval { lo: -1.0, hi: 1.0 };

    pub fn contains(&self, r: f64) -> bool {
        r >= self.lo && r <= self.hi
    }
}

#[derive(Debug, Clone)]
pub enum PotentialSpec {
    /// `¼(r²−1)²` split as `β̂ = ¼r⁴`, `π̂ = −½r² + ¼`.
    Regular,
    /// `(θ/2)[(1+r)ln(1+r) + (1−r)ln(1−r)] − (θ₀/2)r²` on `[−1,1]`.
    Logarithmic { theta: f64, theta0: f64 },
    /// `c(1−r²)` on `[−1,1]`, `+∞` elsewhere.
    DoubleObstacle { c: f64 },
    Custom(CustomPotential),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YosidaParams {
    pub epsilon: f64,
    pub root_tol: f64,
    pub max_root_iters: usize,
}

impl YosidaParams {
    pub fn new(epsilon: f64) -> Result<Self> {
        Self::with_tolerance(epsilon, 1e-12, 100)
    }

    pub fn with_tolerance(epsilon: f64, root_tol: f64, max_root_iters: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter { name: "epsilon", reason: format!("must be positive, got {epsilon}") });
        }
        if !(root_tol > 0.0) {
            return Err(Error::InvalidParameter { name: "root_tol", reason: format!("must be positive, got {root_tol}") });
        }
        if max_root_iters == 0 {
            return Err(Error::InvalidParameter { name: "max_root_iters", reason: "must be positive".into() });
        }
        Ok(Self { epsilon, root_tol, max_root_iters })
    }
}

/// A validated potential with its domain and the Lipschitz constant of `π`.
#[derive(Debug, Clone)]
pub struct SplitPotential {
    spec: PotentialSpec,
    domain: Interval,
    pi_lipschitz: f64,
    superquadratic: bool,
}

#[inline]
fn finite_input(r: f64) -> Result<f64> {
    if r.is_nan() {
        Err(Error::NonFiniteInput(r))
    } else {
        Ok(r)
    }
}

impl SplitPotential {
    pub fn new(spec: PotentialSpec) -> Result<Self> {
        let (domain, pi_lipschitz, superquadratic) = match &spec {
            PotentialSpec::Regular => (Interval::REAL, 1.0, true),
            PotentialSpec::Logarithmic { theta, theta0 } => {
                if !(*theta > 0.0 && theta < theta0 && theta0.is_finite()) {
                    return Err(Error::InvalidPotential(format!(
                        "logarithmic potential needs 0 < theta < theta0, got theta={theta}, theta0={theta0}"
                    )));
                }
                (Interval::UNIT, *theta0, true)
            }
            PotentialSpec::DoubleObstacle { c } => {
                if !(*c > 0.0 && c.is_finite()) {
                    return Err(Error::InvalidPotential(format!("double obstacle needs c > 0, got {c}")));
                }
                (Interval::UNIT, 2.0 * c, true)
            }
            PotentialSpec::Custom(cp) => {
                validate_custom(cp)?;
                (cp.domain, cp.pi_lipschitz, cp.superquadratic)
            }
        };
        Ok(Self { spec, domain, pi_lipschitz, superquadratic })
    }

    pub fn regular() -> Self {
        Self::new(PotentialSpec::Regular).expect("regular potential is always valid")
    }

    pub fn spec(&self) -> &PotentialSpec {
        &self.spec
    }

    /// Effective domain `D(β̂)`.
    pub fn domain(&self) -> Interval {
        self.domain
    }

    pub fn pi_lipschitz(&self) -> f64 {
        self.pi_lipschitz
    }

    pub fn is_superquadratic(&self) -> bool {
        self.superquadratic
    }

    pub fn kind_name(&self) -> &str {
        match &self.spec {
            PotentialSpec::Regular => "regular",
            PotentialSpec::Logarithmic { .. } => "logarithmic",
            PotentialSpec::DoubleObstacle { .. } => "double_obstacle",
            PotentialSpec::Custom(_) => "custom",
        }
    }

    /// Convex part `β̂(r) ∈ [0, +∞]`.
    pub fn beta_hat(&self, r: f64) -> Result<f64> {
        let r = finite_input(r)?;
        if !self.domain.contains(r) {
            return Ok(f64::INFINITY);
        }
        Ok(match &self.spec {
            PotentialSpec::Regular => 0.25 * r.powi(4),
            PotentialSpec::Logarithmic { theta, .. } => 0.5 * theta * entropy(r),
            PotentialSpec::DoubleObstacle { .. } => 0.0,
            PotentialSpec::Custom(cp) => (cp.beta_hat)(r),
        })
    }

    /// Smooth part `π̂(r)`.
    pub fn pi_hat(&self, r: f64) -> Result<f64> {
        let r = finite_input(r)?;
        Ok(match &self.spec {
            PotentialSpec::Regular => -0.5 * r * r + 0.25,
            PotentialSpec::Logarithmic { theta0, .. } => -0.5 * theta0 * r * r,
            PotentialSpec::DoubleObstacle { c } => c * (1.0 - r * r),
            PotentialSpec::Custom(cp) => (cp.pi_hat)(r),
        })
    }

    /// `π = π̂′`.
    pub fn pi_prime(&self, r: f64) -> Result<f64> {
        let r = finite_input(r)?;
        Ok(match &self.spec {
            PotentialSpec::Regular => -r,
            PotentialSpec::Logarithmic { theta0, .. } => -theta0 * r,
            PotentialSpec::DoubleObstacle { c } => -2.0 * c * r,
            PotentialSpec::Custom(cp) => (cp.pi)(r),
        })
    }

    /// The unregularized potential `F = β̂ + π̂`.
    pub fn f(&self, r: f64) -> Result<f64> {
        let b = self.beta_hat(r)?;
        if b.is_infinite() {
            return Ok(f64::INFINITY);
        }
        Ok(b + self.pi_hat(r)?)
    }

    /// Single-valued `β` and `β′` on the interior of the domain.
    fn beta_and_derivative(&self, s: f64) -> (f64, f64) {
        match &self.spec {
            PotentialSpec::Regular => (s * s * s, 3.0 * s * s),
            PotentialSpec::Logarithmic { theta, .. } => (theta * s.atanh(), theta / ((1.0 - s) * (1.0 + s))),
            PotentialSpec::DoubleObstacle { .. } => (0.0, 0.0),
            PotentialSpec::Custom(cp) => ((cp.beta)(s), (cp.beta_prime)(s)),
        }
    }

    /// `J_ε(r)`: the unique `s` with `s + εβ(s) ∋ r`.
    pub fn resolvent(&self, y: &YosidaParams, r: f64) -> Result<f64> {
        let r = finite_input(r)?;
        if r == 0.0 {
            return Ok(0.0);
        }
        let eps = y.epsilon;
        match &self.spec {
            PotentialSpec::DoubleObstacle { .. } => Ok(r.clamp(-1.0, 1.0)),
            PotentialSpec::Regular => Ok(regular_resolvent(eps, r)),
            PotentialSpec::Logarithmic { .. } => {
                self.bracketed_resolvent(y, r, -1.0 + LOG_EDGE, 1.0 - LOG_EDGE)
            }
            PotentialSpec::Custom(cp) => {
                let lo = if cp.domain.lo.is_finite() { cp.domain.lo } else { f64::NEG_INFINITY };
                let hi = if cp.domain.hi.is_finite() { cp.domain.hi } else { f64::INFINITY };
                self.bracketed_resolvent(y, r, lo, hi)
            }
        }
    }

    /// Safeguarded Newton–bisection for `s + εβ(s) = r`. Monotonicity of β
    /// with `β(0) = 0` puts the root between 0 and `r`, clipped to `[lo, hi]`.
    fn bracketed_resolvent(&self, y: &YosidaParams, r: f64, lo: f64, hi: f64) -> Result<f64> {
        let eps = y.epsilon;
        let g = |s: f64| {
            let (b, db) = self.beta_and_derivative(s);
            (s + eps * b - r, 1.0 + eps * db)
        };
        let (mut a, mut b) = if r > 0.0 { (0.0, r.min(hi)) } else { (r.max(lo), 0.0) };
        // root beyond the clipped end: the resolvent sits at the edge to
        // within LOG_EDGE-type precision
        if r > 0.0 && g(b).0 <= 0.0 {
            return Ok(b);
        }
        if r < 0.0 && g(a).0 >= 0.0 {
            return Ok(a);
        }
        let mut s = r / (1.0 + eps);
        if !(s > a && s < b) {
            s = 0.5 * (a + b);
        }
        let mut last_res = f64::INFINITY;
        for _ in 0..y.max_root_iters {
            let (val, der) = g(s);
            last_res = val;
            // near the singular edge Newton steps are tiny long before the
            // root is reached, so only the residual or the bracket may stop
            let (bs, _) = self.beta_and_derivative(s);
            let floor = 4.0 * f64::EPSILON * (r.abs() + s.abs() + (eps * bs).abs());
            if val.abs() <= floor.max(y.root_tol * 1e-4 * r.abs()) {
                return Ok(s);
            }
            if val < 0.0 {
                a = s;
            } else {
                b = s;
            }
            if b - a <= 4.0 * f64::EPSILON * a.abs().max(b.abs()) {
                return Ok(s);
            }
            let newton = s - val / der;
            s = if der.is_finite() && der > 0.0 && newton > a && newton < b { newton } else { 0.5 * (a + b) };
        }
        Err(Error::RootNotConverged { r, iters: y.max_root_iters, residual: last_res.abs() })
    }

    /// Yosida approximation `β_ε(r) = (r − J_ε(r))/ε`.
    pub fn yosida_beta(&self, y: &YosidaParams, r: f64) -> Result<f64> {
        let s = self.resolvent(y, r)?;
        Ok((r - s) / y.epsilon)
    }

    /// A generalized derivative of `β_ε` (Clarke element for the obstacle).
    pub fn yosida_beta_derivative(&self, y: &YosidaParams, r: f64) -> Result<f64> {
        let eps = y.epsilon;
        if let PotentialSpec::DoubleObstacle { .. } = self.spec {
            let r = finite_input(r)?;
            return Ok(if r.abs() > 1.0 { 1.0 / eps } else { 0.0 });
        }
        let s = self.resolvent(y, r)?;
        if let PotentialSpec::Logarithmic { .. } = self.spec {
            if s.abs() >= 1.0 - LOG_EDGE {
                return Ok(1.0 / eps);
            }
        }
        let (_, db) = self.beta_and_derivative(s);
        if !db.is_finite() {
            return Ok(1.0 / eps);
        }
        Ok(db / (1.0 + eps * db))
    }

    /// Both `β_ε(r)` and its generalized derivative from one resolvent solve.
    pub fn yosida_beta_with_derivative(&self, y: &YosidaParams, r: f64) -> Result<(f64, f64)> {
        let eps = y.epsilon;
        let s = self.resolvent(y, r)?;
        let val = (r - s) / eps;
        let der = match &self.spec {
            PotentialSpec::DoubleObstacle { .. } => {
                if r.abs() > 1.0 {
                    1.0 / eps
                } else {
                    0.0
                }
            }
            PotentialSpec::Logarithmic { .. } if s.abs() >= 1.0 - LOG_EDGE => 1.0 / eps,
            _ => {
                let (_, db) = self.beta_and_derivative(s);
                if db.is_finite() {
                    db / (1.0 + eps * db)
                } else {
                    1.0 / eps
                }
            }
        };
        Ok((val, der))
    }

    /// Moreau envelope `B̂_ε(r) = |J_ε r − r|²/(2ε) + β̂(J_ε r)`.
    pub fn moreau_hat(&self, y: &YosidaParams, r: f64) -> Result<f64> {
        let s = self.resolvent(y, r)?;
        let d = r - s;
        Ok(d * d / (2.0 * y.epsilon) + self.beta_hat(s)?)
    }

    /// `F_ε = B̂_ε + π̂`.
    pub fn f_eps(&self, y: &YosidaParams, r: f64) -> Result<f64> {
        Ok(self.moreau_hat(y, r)? + self.pi_hat(r)?)
    }

    /// `F_ε′ = β_ε + π`.
    pub fn f_eps_prime(&self, y: &YosidaParams, r: f64) -> Result<f64> {
        Ok(self.yosida_beta(y, r)? + self.pi_prime(r)?)
    }

    /// Largest ε for which `F_ε(r) ≥ M r² − C_M` is guaranteed: the envelope
    /// bound needs `(1 + 4M′ε)² ≤ 2` with `M′ = M + Lip(π)` to absorb `π̂`.
    pub fn coercivity_eps_threshold(&self, m: f64) -> f64 {
        (std::f64::consts::SQRT_2 - 1.0) / (4.0 * (m + self.pi_lipschitz))
    }

    /// Empirical `C_M = max_r (M r² − F_ε(r))` over `samples` points of
    /// `[−r_max, r_max]`.
    pub fn coercivity_constant(&self, y: &YosidaParams, m: f64, r_max: f64, samples: usize) -> Result<f64> {
        let mut worst = f64::NEG_INFINITY;
        for k in 0..=samples {
            let r = -r_max + 2.0 * r_max * k as f64 / samples as f64;
            worst = worst.max(m * r * r - self.f_eps(y, r)?);
        }
        Ok(worst)
    }

    /// Positive zero of `F_ε′`: the regularized well. Requires `1/ε > Lip(π)`
    /// so that `F_ε′` eventually turns positive.
    pub fn positive_well(&self, y: &YosidaParams) -> Result<f64> {
        let mut hi = 1.0;
        let mut tries = 0;
        while self.f_eps_prime(y, hi)? <= 0.0 {
            hi *= 2.0;
            tries += 1;
            if tries > 60 {
                return Err(Error::InvalidPotential("F_eps' has no positive zero (epsilon too large)".into()));
            }
        }
        let mut lo = 1e-8 * hi;
        if self.f_eps_prime(y, lo)? >= 0.0 {
            return Err(Error::InvalidPotential("F_eps' is not negative near the origin".into()));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.f_eps_prime(y, mid)? < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// `(1+r)ln(1+r) + (1−r)ln(1−r)` on `[−1, 1]`, with `0·ln 0 = 0`.
fn entropy(r: f64) -> f64 {
    let xlogx = |x: f64, lnx: f64| if x == 0.0 { 0.0 } else { x * lnx };
    xlogx(1.0 + r, r.ln_1p()) + xlogx(1.0 - r, (-r).ln_1p())
}

/// Real root of `s + εs³ = r` by Cardano's formula, polished by Newton.
fn regular_resolvent(eps: f64, r: f64) -> f64 {
    let sign = r.signum();
    let q = r.abs() / (2.0 * eps);
    let p3 = 1.0 / (3.0 * eps);
    let u = (q + (q * q + p3 * p3 * p3).sqrt()).cbrt();
    let mut s = u - p3 / u;
    if !(s.is_finite() && s >= 0.0) {
        s = 0.0;
    }
    let target = r.abs();
    for _ in 0..6 {
        let f = s + eps * s * s * s - target;
        let step = f / (1.0 + 3.0 * eps * s * s);
        s -= step;
        if step.abs() <= 1e-17 * s.abs() {
            break;
        }
    }
    sign * s
}

fn validate_custom(cp: &CustomPotential) -> Result<()> {
    if !(cp.pi_lipschitz >= 0.0 && cp.pi_lipschitz.is_finite()) {
        return Err(Error::InvalidPotential(format!("{}: Lipschitz constant of pi must be finite", cp.name)));
    }
    if !cp.domain.contains(0.0) {
        return Err(Error::InvalidPotential(format!("{}: 0 must lie in the domain", cp.name)));
    }
    let at0 = (cp.beta_hat)(0.0);
    if at0 != 0.0 {
        return Err(Error::InvalidPotential(format!("{}: beta_hat(0) = {at0}, must be 0", cp.name)));
    }
    let lo = cp.domain.lo.max(-10.0);
    let hi = cp.domain.hi.min(10.0);
    for k in 0..=1000 {
        let r = lo + (hi - lo) * k as f64 / 1000.0;
        let v = (cp.beta_hat)(r);
        if v.is_nan() || v < 0.0 {
            return Err(Error::InvalidPotential(format!("{}: beta_hat({r}) = {v} is negative", cp.name)));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_pot(theta: f64, theta0: f64) -> SplitPotential {
        SplitPotential::new(PotentialSpec::Logarithmic { theta, theta0 }).unwrap()
    }

    fn dob(c: f64) -> SplitPotential {
        SplitPotential::new(PotentialSpec::DoubleObstacle { c }).unwrap()
    }

    /// Independent oracle: plain bisection on `s + εβ(s) = r`.
    fn bisection_resolvent(beta: impl Fn(f64) -> f64, eps: f64, r: f64, lo: f64, hi: f64) -> f64 {
        let (mut a, mut b) = (lo, hi);
        while b - a > 1e-12 {
            let m = 0.5 * (a + b);
            if m + eps * beta(m) < r {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn beta_hat_examples() {
        assert_eq!(SplitPotential::regular().beta_hat(0.0).unwrap(), 0.0);
        assert_eq!(dob(1.0).beta_hat(2.0).unwrap(), f64::INFINITY);
        assert_eq!(log_pot(0.1, 0.2).beta_hat(0.0).unwrap(), 0.0);
        // value at the endpoints: θ ln 2
        let v = log_pot(0.1, 0.2).beta_hat(1.0).unwrap();
        assert!((v - 0.1 * 2f64.ln()).abs() < 1e-15);
        assert_eq!(log_pot(0.1, 0.2).beta_hat(1.0 + 1e-9).unwrap(), f64::INFINITY);
    }

    #[test]
    fn nan_is_rejected() {
        let p = SplitPotential::regular();
        assert!(matches!(p.beta_hat(f64::NAN), Err(Error::NonFiniteInput(_))));
        let y = YosidaParams::new(0.1).unwrap();
        assert!(matches!(p.resolvent(&y, f64::NAN), Err(Error::NonFiniteInput(_))));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(SplitPotential::new(PotentialSpec::Logarithmic { theta: 0.3, theta0: 0.2 }).is_err());
        assert!(SplitPotential::new(PotentialSpec::DoubleObstacle { c: 0.0 }).is_err());
        assert!(YosidaParams::new(0.0).is_err());
        assert!(YosidaParams::with_tolerance(0.1, -1.0, 10).is_err());
        let mut bad = CustomPotential::power_law(1.0, 4.0, 1.0);
        bad.beta_hat = Arc::new(|r: f64| r * r + 1.0);
        assert!(SplitPotential::new(PotentialSpec::Custom(bad)).is_err());
        let mut neg = CustomPotential::power_law(1.0, 4.0, 1.0);
        neg.beta_hat = Arc::new(|r: f64| -r.abs());
        assert!(SplitPotential::new(PotentialSpec::Custom(neg)).is_err());
    }

    #[test]
    fn resolvent_examples() {
        let y1 = YosidaParams::new(1.0).unwrap();
        assert!((SplitPotential::regular().resolvent(&y1, 2.0).unwrap() - 1.0).abs() < 1e-15);
        let y = YosidaParams::new(0.1).unwrap();
        for p in [SplitPotential::regular(), dob(1.0), log_pot(0.1, 0.2)] {
            assert_eq!(p.resolvent(&y, 0.0).unwrap(), 0.0);
        }
        assert_eq!(dob(1.0).resolvent(&y, 1.5).unwrap(), 1.0);
    }

    #[test]
    fn yosida_beta_examples() {
        let y = YosidaParams::new(0.1).unwrap();
        assert!((dob(1.0).yosida_beta(&y, 1.5).unwrap() - 5.0).abs() < 1e-14);
        let y1 = YosidaParams::new(1.0).unwrap();
        assert!((SplitPotential::regular().yosida_beta(&y1, 2.0).unwrap() - 1.0).abs() < 1e-14);
        for p in [SplitPotential::regular(), dob(1.0), log_pot(0.1, 0.2)] {
            assert_eq!(p.yosida_beta(&y, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn logarithmic_yosida_against_bisection_oracle() {
        let (theta, eps, r) = (0.2, 1e-3, 0.5);
        let p = log_pot(theta, 0.4);
        let y = YosidaParams::new(eps).unwrap();
        let s_oracle = bisection_resolvent(|s: f64| theta * s.atanh(), eps, r, 0.0, r);
        let beta_oracle = (r - s_oracle) / eps;
        let got = p.yosida_beta(&y, r).unwrap();
        assert!((got - beta_oracle).abs() < 1e-6, "{got} vs {beta_oracle}");
        // and within 1e-3 of the unregularized β(0.5) = 0.1 ln 3
        assert!((got - 0.1 * 3f64.ln()).abs() < 1e-3);
    }

    #[test]
    fn moreau_hat_examples() {
        let y = YosidaParams::new(0.1).unwrap();
        for p in [SplitPotential::regular(), dob(1.0), log_pot(0.1, 0.2)] {
            assert_eq!(p.moreau_hat(&y, 0.0).unwrap(), 0.0);
        }
        assert!((dob(1.0).moreau_hat(&y, 1.5).unwrap() - 1.25).abs() < 1e-14);
    }

    #[test]
    fn moreau_hat_matches_grid_search_infimum() {
        // oracle: brute-force infimum of |s−r|²/(2ε) + s⁴/4 over s ∈ [−3, 3]
        let eps = 0.01;
        let r = 1.0;
        let mut best = f64::INFINITY;
        let n = 600_000;
        for k in 0..=n {
            let s = -3.0 + 6.0 * k as f64 / n as f64;
            best = best.min((s - r) * (s - r) / (2.0 * eps) + 0.25 * s.powi(4));
        }
        let y = YosidaParams::new(eps).unwrap();
        let got = SplitPotential::regular().moreau_hat(&y, r).unwrap();
        assert!(got >= 0.0 && got <= 0.25);
        assert!((got - best).abs() < 1e-6, "{got} vs {best}");
    }

    #[test]
    fn pi_prime_examples() {
        assert_eq!(SplitPotential::regular().pi_prime(1.0).unwrap(), -1.0);
        assert!((log_pot(0.1, 0.2).pi_prime(0.5).unwrap() + 0.1).abs() < 1e-16);
        for p in [SplitPotential::regular(), dob(1.0), log_pot(0.1, 0.2)] {
            assert_eq!(p.pi_prime(0.0).unwrap(), 0.0);
        }
        // F = ¼(r²−1)² ⇒ F′ = r³ − r, and β + π must reproduce it
        let p = SplitPotential::regular();
        for r in [-1.7, -0.3, 0.4, 2.2] {
            assert!((r * r * r + p.pi_prime(r).unwrap() - (r.powi(3) - r)).abs() < 1e-14);
            assert!((p.f(r).unwrap() - 0.25 * (r * r - 1.0).powi(2)).abs() < 1e-14);
        }
    }

    #[test]
    fn logarithmic_split_reproduces_full_potential() {
        let (theta, theta0) = (0.15, 0.3);
        let p = log_pot(theta, theta0);
        for r in [-0.9f64, -0.2, 0.5, 0.99] {
            let full = 0.5 * theta * ((1.0 + r) * (1.0 + r).ln() + (1.0 - r) * (1.0 - r).ln()) - 0.5 * theta0 * r * r;
            assert!((p.f(r).unwrap() - full).abs() < 1e-14);
        }
        // endpoint value θ ln 2 − θ₀/2
        assert!((p.f(1.0).unwrap() - (theta * 2f64.ln() - 0.5 * theta0)).abs() < 1e-14);
    }

    #[test]
    fn f_eps_prime_examples() {
        let y1 = YosidaParams::new(1.0).unwrap();
        assert!((SplitPotential::regular().f_eps_prime(&y1, 2.0).unwrap() + 1.0).abs() < 1e-14);
        let y = YosidaParams::new(0.1).unwrap();
        assert!((dob(1.0).f_eps_prime(&y, 1.5).unwrap() - 2.0).abs() < 1e-13);
        for p in [SplitPotential::regular(), dob(1.0), log_pot(0.1, 0.2)] {
            assert_eq!(p.f_eps_prime(&y, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let y = YosidaParams::new(0.05).unwrap();
        for p in [SplitPotential::regular(), log_pot(0.2, 0.4)] {
            for r in [-2.0, -0.7, 0.1, 0.8, 3.0] {
                let h = 1e-6;
                let fd = (p.yosida_beta(&y, r + h).unwrap() - p.yosida_beta(&y, r - h).unwrap()) / (2.0 * h);
                let d = p.yosida_beta_derivative(&y, r).unwrap();
                assert!((fd - d).abs() <= 1e-5 * (1.0 + d.abs()), "{} r={r}: {fd} vs {d}", p.kind_name());
            }
        }
    }

    #[test]
    fn custom_power_law_behaves_like_regular() {
        let custom = SplitPotential::new(PotentialSpec::Custom(CustomPotential::power_law(0.25, 4.0, 1.0))).unwrap();
        let reg = SplitPotential::regular();
        let y = YosidaParams::new(0.2).unwrap();
        for r in [-3.0, -0.5, 0.25, 1.0, 4.0] {
            let a = custom.yosida_beta(&y, r).unwrap();
            let b = reg.yosida_beta(&y, r).unwrap();
            assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "r={r}: {a} vs {b}");
        }
        assert!(custom.is_superquadratic());
    }

    #[test]
    fn regularized_well_is_a_zero_of_f_eps_prime() {
        let y = YosidaParams::new(0.01).unwrap();
        for p in [SplitPotential::regular(), dob(1.0), log_pot(0.2, 0.4)] {
            let w = p.positive_well(&y).unwrap();
            assert!(p.f_eps_prime(&y, w).unwrap().abs() < 1e-10, "{}", p.kind_name());
        }
        // closed form for the obstacle: (w − 1)/ε = 2c w
        let w = dob(1.0).positive_well(&y).unwrap();
        assert!((w - 1.0 / (1.0 - 0.02)).abs() < 1e-12);
    }

    #[test]
    fn coercivity_threshold_and_constant() {
        let p = SplitPotential::regular();
        for m in [1.0, 10.0] {
            let eps_m = p.coercivity_eps_threshold(m);
            let mut prev = f64::INFINITY;
            for k in 1..=4 {
                let y = YosidaParams::new(eps_m / (k as f64 * 3.0)).unwrap();
                let c = p.coercivity_constant(&y, m, 50.0, 20_000).unwrap();
                assert!(c.is_finite());
                assert!(c <= prev + 1e-9, "C_M must not grow as eps decreases");
                prev = c;
            }
        }
    }
}
