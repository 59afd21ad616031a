//! Run configuration: a TOML document with dotted sections.
//!
//! Every key is optional. `init.preset` (default `spinodal`) selects a
//! baseline for all other keys; see [`RunConfig::baseline`]. Unknown keys and
//! unknown enum values are rejected with a suggestion where one is close.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;

use toml::Value;

use crate::brinkman::BrinkmanParams;
use crate::error::{Error, Result};
use crate::grid::{assemble, build_grid, AssembledOperators, BoundaryTag, ScalarField};
use crate::potentials::{CustomPotential, PotentialSpec, SplitPotential, YosidaParams};
use crate::presets;
use crate::stepper::{BoundaryData, ModelParams, SchemeParams, Signal, SourceSpec, Weight};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub key: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

impl ConfigErrors {
    pub fn find(&self, key: &str) -> Option<&ConfigIssue> {
        self.0.iter().find(|i| i.key == key)
    }
}

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in &self.0 {
            writeln!(f, "  {}: {}", i.key, i.reason)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitPreset {
    Spinodal,
    TumorSeed,
    Constant,
}

impl InitPreset {
    pub const NAMES: [&'static str; 3] = ["spinodal", "tumor_seed", "constant"];

    pub fn name(self) -> &'static str {
        match self {
            InitPreset::Spinodal => "spinodal",
            InitPreset::TumorSeed => "tumor_seed",
            InitPreset::Constant => "constant",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        match s {
            "spinodal" => Some(InitPreset::Spinodal),
            "tumor_seed" => Some(InitPreset::TumorSeed),
            "constant" => Some(InitPreset::Constant),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
}

/// Constant initial order parameter: a number, or the positive well of the
/// regularized potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstantPhi {
    Value(f64),
    Well,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    pub preset: InitPreset,
    pub seed: u64,
    pub mean: f64,
    pub amplitude: f64,
    pub center: (f64, f64),
    pub radius: f64,
    pub width: f64,
    pub noise: f64,
    pub phi: ConstantPhi,
    pub sigma0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// 0 writes only the first and last states.
    pub snapshot_every: usize,
    pub vtk: bool,
    pub binary: bool,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub brinkman: BrinkmanParams,
    pub potential: PotentialSpec,
    pub scheme: SchemeParams,
    pub chi: f64,
    pub kappa: f64,
    pub flow: bool,
    pub g: Signal,
    pub source: SourceSpec,
    pub mu_sigma: Signal,
    pub sigma_sigma: Signal,
    pub init: InitConfig,
    pub output: OutputConfig,
}

/// Assembled operators plus everything the stepper needs.
pub struct Scenario {
    pub ops: AssembledOperators,
    pub model: ModelParams,
    pub scheme: SchemeParams,
    pub data: BoundaryData,
}

pub const KNOWN_KEYS: &[&str] = &[
    "grid.lx",
    "grid.ly",
    "grid.nx",
    "grid.ny",
    "brinkman.eta",
    "brinkman.lambda",
    "brinkman.nu",
    "brinkman.stab_alpha",
    "potential.kind",
    "potential.theta",
    "potential.theta0",
    "potential.c",
    "potential.a",
    "potential.q",
    "potential.b",
    "potential.epsilon",
    "scheme.tau",
    "scheme.epsilon",
    "scheme.t_end",
    "scheme.newton_tol",
    "scheme.newton_max",
    "scheme.mollify",
    "scheme.coupling_iters",
    "model.chi",
    "model.kappa",
    "model.flow",
    "model.g",
    "source.kind",
    "source.p",
    "source.a",
    "source.b",
    "source.c",
    "source.sigma_c",
    "source.weight",
    "source.p0",
    "bc.mu_sigma",
    "bc.sigma_sigma",
    "init.preset",
    "init.seed",
    "init.mean",
    "init.amplitude",
    "init.center_x",
    "init.center_y",
    "init.radius",
    "init.width",
    "init.noise",
    "init.phi",
    "init.sigma0",
    "output.dir",
    "output.snapshot_every",
    "output.vtk",
    "output.binary",
];

const SIGNAL_KEYS: [&str; 6] = ["kind", "value", "mean", "amplitude", "frequency", "lx"];
const SIGNAL_KINDS: [&str; 3] = ["constant", "oscillating", "gradient"];
const POTENTIAL_KINDS: [&str; 4] = ["regular", "logarithmic", "double_obstacle", "power_law"];
const SOURCE_KINDS: [&str; 3] = ["none", "linear_kinetic", "phenomenological"];
const WEIGHTS: [&str; 2] = ["clamp", "smoothstep"];

/// Closest candidate: a unique prefix match first, then the best
/// Jaro–Winkler match above 0.8.
pub fn suggest<'a>(word: &str, candidates: &[&'a str]) -> Option<&'a str> {
    if !word.is_empty() {
        let prefixed: Vec<_> = candidates.iter().filter(|c| c.starts_with(word)).collect();
        if prefixed.len() == 1 {
            return Some(prefixed[0]);
        }
    }
    candidates
        .iter()
        .map(|c| (strsim::jaro_winkler(word, c), *c))
        .filter(|(s, _)| *s > 0.8)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c)
}

fn unknown_value(value: &str, candidates: &[&str]) -> String {
    match suggest(value, candidates) {
        Some(s) => format!("unknown value \"{value}\"; did you mean \"{s}\"?"),
        None => format!("unknown value \"{value}\"; expected one of {}", candidates.join(", ")),
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn parse_override(raw: &str) -> Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

struct Reader {
    map: BTreeMap<String, Value>,
    used: BTreeSet<String>,
    issues: Vec<ConfigIssue>,
}

impl Reader {
    fn issue(&mut self, key: &str, reason: impl Into<String>) {
        self.issues.push(ConfigIssue { key: key.to_string(), reason: reason.into() });
    }

    fn get(&mut self, key: &str) -> Option<Value> {
        let v = self.map.get(key).cloned();
        if v.is_some() {
            self.used.insert(key.to_string());
        }
        v
    }

    fn has_prefix(&self, prefix: &str) -> bool {
        let p = format!("{prefix}.");
        self.map.keys().any(|k| k.starts_with(&p))
    }

    fn f64(&mut self, key: &str, default: f64) -> f64 {
        match self.get(key) {
            None => default,
            Some(Value::Float(x)) => x,
            Some(Value::Integer(i)) => i as f64,
            Some(other) => {
                self.issue(key, format!("expected a number, got {}", other.type_str()));
                default
            }
        }
    }

    fn u64(&mut self, key: &str, default: u64) -> u64 {
        match self.get(key) {
            None => default,
            Some(Value::Integer(i)) if i >= 0 => i as u64,
            Some(Value::Integer(_)) => {
                self.issue(key, "must be nonnegative");
                default
            }
            Some(other) => {
                self.issue(key, format!("expected an integer, got {}", other.type_str()));
                default
            }
        }
    }

    fn usize(&mut self, key: &str, default: usize) -> usize {
        self.u64(key, default as u64) as usize
    }

    fn bool(&mut self, key: &str, default: bool) -> bool {
        match self.get(key) {
            None => default,
            Some(Value::Boolean(b)) => b,
            Some(other) => {
                self.issue(key, format!("expected a boolean, got {}", other.type_str()));
                default
            }
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        match self.get(key) {
            None => None,
            Some(Value::String(s)) => Some(s),
            Some(other) => {
                self.issue(key, format!("expected a string, got {}", other.type_str()));
                None
            }
        }
    }

    /// A number, or a table `{ kind = "constant" | "oscillating" | "gradient", ... }`.
    fn signal(&mut self, key: &str, default: Signal, lx: f64) -> Signal {
        if let Some(v) = self.get(key) {
            return match v {
                Value::Float(x) => Signal::Constant(x),
                Value::Integer(i) => Signal::Constant(i as f64),
                other => {
                    self.issue(key, format!("expected a number or a table, got {}", other.type_str()));
                    default
                }
            };
        }
        if !self.has_prefix(key) {
            return default;
        }
        let prefix = format!("{key}.");
        let extra: Vec<String> = self
            .map
            .keys()
            .filter_map(|k| k.strip_prefix(&prefix))
            .filter(|k| !SIGNAL_KEYS.contains(k))
            .map(|k| k.to_string())
            .collect();
        for k in extra {
            let full = format!("{prefix}{k}");
            self.used.insert(full.clone());
            let reason = match suggest(&k, &SIGNAL_KEYS) {
                Some(s) => format!("unknown key; did you mean \"{prefix}{s}\"?"),
                None => "unknown key".to_string(),
            };
            self.issue(&full, reason);
        }
        let kind = self.string(&format!("{prefix}kind")).unwrap_or_else(|| "constant".into());
        let num = |r: &mut Reader, k: &str, d: f64| r.f64(&format!("{prefix}{k}"), d);
        match kind.as_str() {
            "constant" => Signal::Constant(num(self, "value", 0.0)),
            "oscillating" => Signal::Oscillating {
                mean: num(self, "mean", 0.0),
                amplitude: num(self, "amplitude", 0.0),
                frequency: num(self, "frequency", 1.0),
            },
            "gradient" => Signal::Gradient {
                mean: num(self, "mean", 0.0),
                amplitude: num(self, "amplitude", 0.0),
                lx: num(self, "lx", lx),
            },
            other => {
                let r = unknown_value(other, &SIGNAL_KINDS);
                self.issue(&format!("{prefix}kind"), r);
                default
            }
        }
    }

    fn unknown_keys(&mut self) {
        let leftover: Vec<String> = self.map.keys().filter(|k| !self.used.contains(*k)).cloned().collect();
        for k in leftover {
            let reason = match suggest(&k, KNOWN_KEYS) {
                Some(s) => format!("unknown key; did you mean \"{s}\"?"),
                None => "unknown key".to_string(),
            };
            self.issue(&k, reason);
        }
    }
}

impl RunConfig {
    /// Defaults for a given initial-data preset.
    ///
    /// `spinodal` and `constant` are the decoupled Cahn–Hilliard regime on a
    /// 12.8 × 12.8 square (64² cells, regular potential, `τ = 10⁻³`,
    /// `ε = 10⁻²`, 200 steps). `tumor_seed` is the fully coupled regime on a
    /// 10 × 10 square (32² cells, linear kinetic sources, `χ = 0.5`, `κ = 1`,
    /// `σ_Σ = 1`, flow on, 100 steps).
    pub fn baseline(preset: InitPreset) -> Self {
        let init = InitConfig {
            preset,
            seed: 1,
            mean: 0.0,
            amplitude: 0.05,
            center: (5.0, 5.0),
            radius: 2.0,
            width: std::f64::consts::SQRT_2,
            noise: 0.0,
            phi: ConstantPhi::Value(0.0),
            sigma0: 0.0,
        };
        let output = OutputConfig { dir: None, snapshot_every: 0, vtk: true, binary: false };
        let decoupled = RunConfig {
            grid: GridConfig { lx: 12.8, ly: 12.8, nx: 64, ny: 64 },
            brinkman: BrinkmanParams::default(),
            potential: PotentialSpec::Regular,
            scheme: SchemeParams { tau: 1e-3, epsilon: 1e-2, t_end: 0.2, ..SchemeParams::default() },
            chi: 0.0,
            kappa: 0.0,
            flow: false,
            g: Signal::Constant(0.0),
            source: SourceSpec::None,
            mu_sigma: Signal::Constant(0.0),
            sigma_sigma: Signal::Constant(0.0),
            init,
            output,
        };
        match preset {
            InitPreset::Spinodal | InitPreset::Constant => decoupled,
            InitPreset::TumorSeed => RunConfig {
                grid: GridConfig { lx: 10.0, ly: 10.0, nx: 32, ny: 32 },
                scheme: SchemeParams { t_end: 0.1, ..decoupled.scheme },
                chi: 0.5,
                kappa: 1.0,
                flow: true,
                source: SourceSpec::LinearKinetic { p: 1.0, a: 0.5, b: 1.0, c: 1.0, sigma_c: 1.0, weight: Weight::Clamp },
                sigma_sigma: Signal::Constant(1.0),
                init: InitConfig { sigma0: 1.0, ..init },
                ..decoupled
            },
        }
    }

    pub fn split_potential(&self) -> Result<SplitPotential> {
        SplitPotential::new(self.potential.clone())
    }

    pub fn model(&self) -> Result<ModelParams> {
        Ok(ModelParams {
            chi: self.chi,
            kappa: self.kappa,
            brinkman: self.brinkman,
            potential: self.split_potential()?,
            source: self.source.clone(),
            g: self.g.clone(),
            flow: self.flow,
        })
    }

    /// Builds the grid, operators and initial data.
    pub fn scenario(&self) -> Result<Scenario> {
        let grid = build_grid(self.grid.lx, self.grid.ly, self.grid.nx, self.grid.ny)?;
        let model = self.model()?;
        let i = &self.init;
        let phi0 = match i.preset {
            InitPreset::Spinodal => presets::spinodal(&grid, i.mean, i.amplitude, i.seed)?,
            InitPreset::TumorSeed => presets::tumor_seed(&grid, i.center, i.radius, i.width, i.noise, i.seed)?,
            InitPreset::Constant => {
                let v = match i.phi {
                    ConstantPhi::Value(v) => v,
                    ConstantPhi::Well => model.potential.positive_well(&YosidaParams::new(self.scheme.epsilon)?)?,
                };
                presets::constant(&grid, v)
            }
        };
        let sigma0 = ScalarField::constant(&grid, i.sigma0, BoundaryTag::Robin { kappa: self.kappa });
        let ops = assemble(&grid);
        Ok(Scenario {
            ops,
            model,
            scheme: self.scheme,
            data: BoundaryData { mu_sigma: self.mu_sigma.clone(), sigma_sigma: self.sigma_sigma.clone(), phi0, sigma0 },
        })
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with(text, &[])
}

/// Parses `text`, then applies `key = value` overrides (values in TOML
/// syntax; bare words are taken as strings).
pub fn parse_config_with(text: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        Error::Config(ConfigErrors(vec![ConfigIssue { key: "<syntax>".into(), reason: e.to_string().trim().to_string() }]))
    })?;
    let mut map = BTreeMap::new();
    flatten("", &table, &mut map);
    for (k, raw) in overrides {
        let pre = format!("{k}.");
        map.retain(|key, _| !key.starts_with(&pre));
        map.insert(k.clone(), parse_override(raw));
    }
    let mut r = Reader { map, used: BTreeSet::new(), issues: Vec::new() };

    let preset = match r.string("init.preset") {
        None => InitPreset::Spinodal,
        Some(s) => InitPreset::from_name(&s).unwrap_or_else(|| {
            let reason = unknown_value(&s, &InitPreset::NAMES);
            r.issue("init.preset", reason);
            InitPreset::Spinodal
        }),
    };
    let base = RunConfig::baseline(preset);

    let grid = GridConfig {
        lx: r.f64("grid.lx", base.grid.lx),
        ly: r.f64("grid.ly", base.grid.ly),
        nx: r.usize("grid.nx", base.grid.nx),
        ny: r.usize("grid.ny", base.grid.ny),
    };
    let b = base.brinkman;
    let brinkman = BrinkmanParams {
        eta: r.f64("brinkman.eta", b.eta),
        lambda: r.f64("brinkman.lambda", b.lambda),
        nu: r.f64("brinkman.nu", b.nu),
        stab_alpha: r.f64("brinkman.stab_alpha", b.stab_alpha),
    };

    let potential = match r.string("potential.kind").as_deref() {
        None | Some("regular") => PotentialSpec::Regular,
        Some("logarithmic") => PotentialSpec::Logarithmic {
            theta: r.f64("potential.theta", 1.0),
            theta0: r.f64("potential.theta0", 2.0),
        },
        Some("double_obstacle") => PotentialSpec::DoubleObstacle { c: r.f64("potential.c", 2.0) },
        Some("power_law") => PotentialSpec::Custom(CustomPotential::power_law(
            r.f64("potential.a", 0.25),
            r.f64("potential.q", 4.0),
            r.f64("potential.b", 0.5),
        )),
        Some(other) => {
            let reason = unknown_value(other, &POTENTIAL_KINDS);
            r.issue("potential.kind", reason);
            PotentialSpec::Regular
        }
    };

    let s = base.scheme;
    let eps_alias = r.get("potential.epsilon").is_some().then(|| r.f64("potential.epsilon", s.epsilon));
    let eps_main = r.map.contains_key("scheme.epsilon").then(|| r.f64("scheme.epsilon", s.epsilon));
    let epsilon = match (eps_main, eps_alias) {
        (Some(a), Some(b)) if a != b => {
            r.issue("potential.epsilon", format!("conflicts with scheme.epsilon ({b} vs {a})"));
            a
        }
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => s.epsilon,
    };
    let scheme = SchemeParams {
        tau: r.f64("scheme.tau", s.tau),
        epsilon,
        t_end: r.f64("scheme.t_end", s.t_end),
        newton_tol: r.f64("scheme.newton_tol", s.newton_tol),
        newton_max: r.usize("scheme.newton_max", s.newton_max),
        mollify: r.f64("scheme.mollify", s.mollify),
        coupling_iters: r.usize("scheme.coupling_iters", s.coupling_iters),
    };

    let chi = r.f64("model.chi", base.chi);
    let kappa = r.f64("model.kappa", base.kappa);
    let flow = r.bool("model.flow", base.flow);
    let g = r.signal("model.g", base.g.clone(), grid.lx);

    let source_kind = r.string("source.kind");
    let (bp, ba, bb, bc, bs, bw) = match &base.source {
        SourceSpec::LinearKinetic { p, a, b, c, sigma_c, weight } => (*p, *a, *b, *c, *sigma_c, *weight),
        _ => (1.0, 0.5, 1.0, 1.0, 1.0, Weight::Clamp),
    };
    let weight = match r.string("source.weight").as_deref() {
        None => bw,
        Some("clamp") => Weight::Clamp,
        Some("smoothstep") => Weight::Smoothstep,
        Some(other) => {
            let reason = unknown_value(other, &WEIGHTS);
            r.issue("source.weight", reason);
            bw
        }
    };
    let kind = source_kind.as_deref().unwrap_or(match base.source {
        SourceSpec::None => "none",
        SourceSpec::LinearKinetic { .. } => "linear_kinetic",
        SourceSpec::Phenomenological { .. } => "phenomenological",
    });
    let source = match kind {
        "none" => SourceSpec::None,
        "linear_kinetic" => SourceSpec::LinearKinetic {
            p: r.f64("source.p", bp),
            a: r.f64("source.a", ba),
            b: r.f64("source.b", bb),
            c: r.f64("source.c", bc),
            sigma_c: r.f64("source.sigma_c", bs),
            weight,
        },
        "phenomenological" => SourceSpec::Phenomenological { p0: r.f64("source.p0", 1.0), weight },
        other => {
            let reason = unknown_value(other, &SOURCE_KINDS);
            r.issue("source.kind", reason);
            SourceSpec::None
        }
    };

    let mu_sigma = r.signal("bc.mu_sigma", base.mu_sigma.clone(), grid.lx);
    let sigma_sigma = r.signal("bc.sigma_sigma", base.sigma_sigma.clone(), grid.lx);

    let bi = base.init;
    let phi = match r.get("init.phi") {
        None => bi.phi,
        Some(Value::Float(x)) => ConstantPhi::Value(x),
        Some(Value::Integer(i)) => ConstantPhi::Value(i as f64),
        Some(Value::String(s)) if s == "well" => ConstantPhi::Well,
        Some(other) => {
            r.issue("init.phi", format!("expected a number or \"well\", got {other}"));
            bi.phi
        }
    };
    let init = InitConfig {
        preset,
        seed: r.u64("init.seed", bi.seed),
        mean: r.f64("init.mean", bi.mean),
        amplitude: r.f64("init.amplitude", bi.amplitude),
        center: (r.f64("init.center_x", grid.lx / 2.0), r.f64("init.center_y", grid.ly / 2.0)),
        radius: r.f64("init.radius", bi.radius),
        width: r.f64("init.width", bi.width),
        noise: r.f64("init.noise", bi.noise),
        phi,
        sigma0: r.f64("init.sigma0", bi.sigma0),
    };
    let output = OutputConfig {
        dir: r.string("output.dir").map(PathBuf::from),
        snapshot_every: r.usize("output.snapshot_every", base.output.snapshot_every),
        vtk: r.bool("output.vtk", base.output.vtk),
        binary: r.bool("output.binary", base.output.binary),
    };

    r.unknown_keys();
    let cfg = RunConfig {
        grid,
        brinkman,
        potential,
        scheme,
        chi,
        kappa,
        flow,
        g,
        source,
        mu_sigma,
        sigma_sigma,
        init,
        output,
    };
    validate(&cfg, &mut r);
    if r.issues.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(ConfigErrors(r.issues)))
    }
}

fn validate(cfg: &RunConfig, r: &mut Reader) {
    let positive = |r: &mut Reader, key: &str, v: f64| {
        if !(v.is_finite() && v > 0.0) {
            r.issue(key, "must be positive");
        }
    };
    positive(r, "grid.lx", cfg.grid.lx);
    positive(r, "grid.ly", cfg.grid.ly);
    positive(r, "scheme.tau", cfg.scheme.tau);
    positive(r, "scheme.epsilon", cfg.scheme.epsilon);
    positive(r, "scheme.newton_tol", cfg.scheme.newton_tol);
    let nonneg = |r: &mut Reader, key: &str, v: f64| {
        if !(v.is_finite() && v >= 0.0) {
            r.issue(key, "must be nonnegative");
        }
    };
    nonneg(r, "scheme.t_end", cfg.scheme.t_end);
    nonneg(r, "scheme.mollify", cfg.scheme.mollify);
    nonneg(r, "model.chi", cfg.chi);
    nonneg(r, "model.kappa", cfg.kappa);
    nonneg(r, "init.amplitude", cfg.init.amplitude);
    nonneg(r, "init.noise", cfg.init.noise);
    if cfg.grid.nx == 0 {
        r.issue("grid.nx", "must be at least 1");
    }
    if cfg.grid.ny == 0 {
        r.issue("grid.ny", "must be at least 1");
    }
    if cfg.scheme.newton_max == 0 {
        r.issue("scheme.newton_max", "must be positive");
    }
    if cfg.scheme.coupling_iters == 0 {
        r.issue("scheme.coupling_iters", "must be positive");
    }
    if cfg.flow {
        if let Err(Error::InvalidParameter { name, reason }) = cfg.brinkman.validate() {
            r.issue(name, reason);
        }
    }
    if let Err(e) = cfg.source.validate() {
        let key = match &e {
            Error::InvalidParameter { name, .. } => name.to_string(),
            _ => "source".into(),
        };
        let reason = match e {
            Error::InvalidParameter { reason, .. } => reason,
            other => other.to_string(),
        };
        r.issue(&key, reason);
    }
    if !cfg.g.is_zero() && !cfg.flow {
        r.issue("model.g", "a nonzero divergence needs model.flow = true");
    }
    if cfg.init.radius <= 0.0 && cfg.init.preset == InitPreset::TumorSeed {
        r.issue("init.radius", "must be positive");
    }
    if cfg.init.width <= 0.0 && cfg.init.preset == InitPreset::TumorSeed {
        r.issue("init.width", "must be positive");
    }
    let pot = match SplitPotential::new(cfg.potential.clone()) {
        Ok(p) => p,
        Err(e) => {
            r.issue("potential", e.to_string());
            return;
        }
    };
    // initial data must lie in the domain of the convex part
    let dom = pot.domain();
    let i = &cfg.init;
    let (lo, hi, key) = match i.preset {
        InitPreset::Spinodal => (i.mean - i.amplitude, i.mean + i.amplitude, "init.amplitude"),
        InitPreset::TumorSeed => (-1.0 - i.noise, 1.0 + i.noise, "init.noise"),
        InitPreset::Constant => match i.phi {
            ConstantPhi::Value(v) => (v, v, "init.phi"),
            ConstantPhi::Well => (0.0, 0.0, "init.phi"),
        },
    };
    let open_ends = matches!(cfg.potential, PotentialSpec::Logarithmic { .. });
    let outside = if i.preset == InitPreset::TumorSeed {
        (i.noise > 0.0 && !(dom.contains(lo) && dom.contains(hi))) || (open_ends && i.noise > 0.0)
    } else if open_ends {
        !(lo > dom.lo && hi < dom.hi)
    } else {
        !(dom.contains(lo) && dom.contains(hi))
    };
    if outside {
        r.issue(key, format!("initial data leaves the potential's domain [{}, {}]", dom.lo, dom.hi));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn errors(text: &str) -> ConfigErrors {
        match parse_config(text) {
            Err(Error::Config(e)) => e,
            other => panic!("expected config errors, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn minimal_spinodal_uses_defaults() {
        let c = parse_config("[init]\npreset = \"spinodal\"\n").unwrap();
        assert_eq!(c.grid, GridConfig { lx: 12.8, ly: 12.8, nx: 64, ny: 64 });
        assert_eq!(c.scheme.tau, 1e-3);
        assert_eq!(c.scheme.step_count(), 200);
        assert_eq!(c.init.amplitude, 0.05);
        assert!(matches!(c.source, SourceSpec::None));
        assert!(!c.flow);
    }

    #[test]
    fn empty_text_is_spinodal() {
        let c = parse_config("").unwrap();
        assert_eq!(c.init.preset, InitPreset::Spinodal);
    }

    #[test]
    fn negative_tau_is_rejected() {
        let e = errors("[scheme]\ntau = -1\n");
        assert_eq!(e.find("scheme.tau").unwrap().reason, "must be positive");
    }

    #[test]
    fn unknown_potential_kind_suggests() {
        let e = errors("[potential]\nkind = \"log\"\n");
        assert!(e.find("potential.kind").unwrap().reason.contains("\"logarithmic\""));
        let e = errors("[potential]\nkind = \"double_obstcle\"\n");
        assert!(e.find("potential.kind").unwrap().reason.contains("\"double_obstacle\""));
    }

    #[test]
    fn unknown_keys_are_errors() {
        let e = errors("[scheme]\ntua = 0.1\n[extra]\nx = 1\n");
        assert!(e.find("scheme.tua").unwrap().reason.contains("scheme.tau"));
        assert!(e.find("extra.x").is_some());
    }

    #[test]
    fn all_issues_reported_together() {
        let e = errors("[scheme]\ntau = 0\nepsilon = -2\n[model]\nchi = -1\n");
        assert_eq!(e.0.len(), 3);
    }

    #[test]
    fn tumor_preset_baseline() {
        let c = parse_config("[init]\npreset = \"tumor_seed\"\n").unwrap();
        assert_eq!(c.chi, 0.5);
        assert_eq!(c.kappa, 1.0);
        assert!(c.flow);
        assert!(matches!(c.source, SourceSpec::LinearKinetic { .. }));
        assert_eq!(c.grid.nx, 32);
        assert_eq!(c.scheme.step_count(), 100);
    }

    #[test]
    fn signals_parse_from_numbers_and_tables() {
        let c = parse_config(
            "[bc]\nmu_sigma = 0.5\nsigma_sigma = { kind = \"oscillating\", mean = 1.0, amplitude = 0.2, frequency = 3 }\n",
        )
        .unwrap();
        assert!(matches!(c.mu_sigma, Signal::Constant(v) if v == 0.5));
        assert!(matches!(c.sigma_sigma, Signal::Oscillating { frequency, .. } if frequency == 3.0));
        let e = errors("[bc.mu_sigma]\nkind = \"wave\"\n");
        assert!(e.find("bc.mu_sigma.kind").is_some());
        let e = errors("[bc.mu_sigma]\nkind = \"constant\"\nvalu = 1\n");
        assert!(e.find("bc.mu_sigma.valu").unwrap().reason.contains("value"));
    }

    #[test]
    fn epsilon_alias() {
        let c = parse_config("[potential]\nepsilon = 0.05\n").unwrap();
        assert_eq!(c.scheme.epsilon, 0.05);
        let e = errors("[potential]\nepsilon = 0.05\n[scheme]\nepsilon = 0.1\n");
        assert!(e.find("potential.epsilon").is_some());
    }

    #[test]
    fn inadmissible_initial_data() {
        let e = errors("[potential]\nkind = \"double_obstacle\"\n[init]\npreset = \"constant\"\nphi = 1.5\n");
        assert!(e.find("init.phi").is_some());
        let e = errors("[potential]\nkind = \"logarithmic\"\n[init]\npreset = \"constant\"\nphi = 1.0\n");
        assert!(e.find("init.phi").is_some());
        assert!(parse_config("[potential]\nkind = \"logarithmic\"\n[init]\npreset = \"constant\"\nphi = 0.9\n").is_ok());
    }

    #[test]
    fn overrides_replace_values() {
        let c = parse_config_with("[model]\nchi = 0.1\n", &[("model.chi".into(), "0.7".into()), ("potential.kind".into(), "double_obstacle".into())]).unwrap();
        assert_eq!(c.chi, 0.7);
        assert!(matches!(c.potential, PotentialSpec::DoubleObstacle { .. }));
    }

    #[test]
    fn syntax_errors_are_reported() {
        let e = errors("[scheme\ntau = 1");
        assert_eq!(e.0[0].key, "<syntax>");
    }

    #[test]
    fn scenario_builds() {
        let c = parse_config("[grid]\nnx = 4\nny = 4\n[init]\npreset = \"constant\"\nphi = \"well\"\n").unwrap();
        let s = c.scenario().unwrap();
        assert_eq!(s.ops.grid().node_count(), 25);
        assert!((s.data.phi0.values()[0] - 1.0).abs() < 0.1);
    }
}
