use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use chb_core::config::{parse_config_with, RunConfig};
use chb_core::diagnostics::{self, DiagnosticsLedger};
use chb_core::io::{self, RunWriter};
use chb_core::stepper::{eps_continuation, run_with};
use chb_core::verify;
use chb_core::{brinkman::BrinkmanParams, Error};

const EXIT_CONFIG: u8 = 1;
const EXIT_SOLVER: u8 = 2;
const EXIT_CHECK: u8 = 3;

/// Default output root when neither --out nor output.dir is given.
const OUTPUT_ROOT_VAR: &str = "CHB_OUTPUT_ROOT";

#[derive(Parser, Debug)]
#[command(name = "chb", version, about = "Cahn-Hilliard-Brinkman tumor growth simulator")]
struct Cli {
    /// Upper bound on worker threads for sweeps and the verification suite.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one simulation.
    Run {
        config: PathBuf,
        /// Output directory (overrides output.dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override a config key, e.g. --set model.chi=0.2
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run the same scenario for a decreasing list of epsilon values.
    Continuation {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        eps_list: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run the verification suite.
    Verify {
        /// Run only these checks (comma separated ids).
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
    },
    /// Brinkman convergence study against a manufactured solution.
    Manufacture {
        #[arg(long, value_delimiter = ',', default_values_t = vec![8usize, 16, 32, 64])]
        cells: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one simulation per value of a config key.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        key: String,
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        values: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Solver(String),
    Check(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Solver(_) => EXIT_SOLVER,
            Failure::Check(_) => EXIT_CHECK,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Solver(m) | Failure::Check(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidParameter { .. } | Error::InadmissibleInitialData { .. } => {
                Failure::Config(e.to_string())
            }
            other => Failure::Solver(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let result = match cli.command {
        Command::Run { config, out, set } => cmd_run(&config, out, &set),
        Command::Continuation { config, eps_list, out, set } => cmd_continuation(&config, &eps_list, out, &set),
        Command::Verify { only } => cmd_verify(&only),
        Command::Manufacture { cells, out } => cmd_manufacture(&cells, out),
        Command::Sweep { config, key, values, out } => cmd_sweep(&config, &key, &values, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message().trim_end());
            ExitCode::from(f.code())
        }
    }
}

fn parse_sets(set: &[String]) -> Result<Vec<(String, String)>, Failure> {
    set.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Failure::Config(format!("--set expects KEY=VALUE, got {s}")))
        })
        .collect()
}

fn load(path: &Path, overrides: &[(String, String)]) -> Result<(String, RunConfig), Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg = parse_config_with(&text, overrides)?;
    Ok((text, cfg))
}

/// `--out`, then `output.dir`, then `$CHB_OUTPUT_ROOT/<stem>`, then `./chb_output/<stem>`.
fn output_dir(out: Option<PathBuf>, cfg: Option<&RunConfig>, stem: &str) -> PathBuf {
    if let Some(o) = out {
        return o;
    }
    if let Some(d) = cfg.and_then(|c| c.output.dir.clone()) {
        return d;
    }
    let root = std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("chb_output"));
    root.join(stem)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into())
}

/// Config echo for the manifest: the file text plus any overrides.
fn echo(text: &str, overrides: &[(String, String)]) -> String {
    let mut s = text.to_string();
    if !overrides.is_empty() {
        s.push_str("\n# overrides\n");
        for (k, v) in overrides {
            s.push_str(&format!("# {k} = {v}\n"));
        }
    }
    s
}

fn warnings(cfg: &RunConfig) -> Vec<String> {
    let mut w = Vec::new();
    if cfg.flow {
        w.extend(cfg.brinkman.warnings());
    }
    if cfg.source.is_experimental() {
        w.push("phenomenological source is experimental".into());
    }
    w
}

fn simulate(cfg: &RunConfig, config_text: &str, dir: &Path) -> Result<DiagnosticsLedger, Failure> {
    let scenario = cfg.scenario()?;
    let io_err = |e: Error| Failure::Solver(format!("writing output: {e}"));
    let mut writer = RunWriter::create(dir, cfg.output.vtk, cfg.output.binary).map_err(io_err)?;
    let steps = cfg.scheme.step_count();
    let every = cfg.output.snapshot_every;
    let grid = scenario.ops.grid().clone();
    let result = run_with(&scenario.ops, &scenario.model, &scenario.scheme, &scenario.data, |s, _| {
        if s.step == 0 || s.step == steps || (every > 0 && s.step % every == 0) {
            writer.snapshot(&grid, s)?;
        }
        Ok(())
    });
    match result {
        Ok(ledger) => {
            writer.ledger(&ledger).map_err(io_err)?;
            writer.manifest(config_text, cfg.init.seed, steps, warnings(cfg), "completed").map_err(io_err)?;
            Ok(ledger)
        }
        Err(e) => {
            let _ = writer.manifest(config_text, cfg.init.seed, steps, warnings(cfg), &format!("failed: {e}"));
            Err(e.into())
        }
    }
}

fn cmd_run(config: &Path, out: Option<PathBuf>, set: &[String]) -> Result<(), Failure> {
    let overrides = parse_sets(set)?;
    let (text, cfg) = load(config, &overrides)?;
    let dir = output_dir(out, Some(&cfg), &stem(config));
    for w in warnings(&cfg) {
        eprintln!("warning: {w}");
    }
    let ledger = simulate(&cfg, &echo(&text, &overrides), &dir)?;
    let s = ledger.summary();
    println!("{} steps written to {}", s.steps, dir.display());
    if let (Some(first), Some(last)) = (ledger.rows().first(), ledger.last()) {
        println!("E_eps {:e} -> {:e}, max overshoot {:e}", first.energy_eps, last.energy_eps, s.max_overshoot);
    }
    Ok(())
}

fn cmd_continuation(config: &Path, eps: &[f64], out: Option<PathBuf>, set: &[String]) -> Result<(), Failure> {
    let overrides = parse_sets(set)?;
    let (text, cfg) = load(config, &overrides)?;
    let dir = output_dir(out, Some(&cfg), &format!("{}_continuation", stem(config)));
    let s = cfg.scenario()?;
    let report = eps_continuation(&s.ops, &s.model, &s.scheme, &s.data, eps)?;
    let io_err = |e: std::io::Error| Failure::Solver(format!("writing output: {e}"));
    fs::create_dir_all(&dir).map_err(io_err)?;
    let mut summary = String::from("epsilon,sqrt_eps_mu,phi_difference,sigma_difference\n");
    let mut files = Vec::new();
    for (i, level) in report.levels.iter().enumerate() {
        let name = format!("ledger_eps_{:e}.csv", level.epsilon);
        io::write_ledger(&dir.join(&name), &level.ledger)?;
        files.push(name);
        let (dp, ds) = if i == 0 {
            (String::new(), String::new())
        } else {
            (format!("{:e}", report.phi_differences[i - 1]), format!("{:e}", report.sigma_differences[i - 1]))
        };
        summary.push_str(&format!("{:e},{:e},{dp},{ds}\n", level.epsilon, level.sqrt_eps_mu));
    }
    fs::write(dir.join("continuation.csv"), &summary).map_err(io_err)?;
    files.push("continuation.csv".into());
    let m = io::Manifest {
        config_text: &echo(&text, &overrides),
        seed: cfg.init.seed,
        steps: cfg.scheme.step_count(),
        files,
        warnings: warnings(&cfg),
        status: "completed",
    };
    io::write_manifest(&dir.join("manifest.json"), &m)?;
    print!("{summary}");
    println!(
        "differences strictly decreasing: {}, max growth of sqrt(eps)|mu|: {:.3}",
        report.differences_strictly_decreasing(),
        report.max_growth()
    );
    Ok(())
}

fn cmd_verify(only: &[usize]) -> Result<(), Failure> {
    let ids: Vec<usize> = verify::CHECKS.iter().map(|c| c.0).filter(|id| only.is_empty() || only.contains(id)).collect();
    if ids.is_empty() {
        return Err(Failure::Config("no checks selected".into()));
    }
    let checks: Vec<verify::Check> = ids.par_iter().map(|&id| verify::run_check(id)).collect();
    for c in &checks {
        println!("{}", c.line());
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    if failed > 0 {
        return Err(Failure::Check(format!("{failed} check(s) failed")));
    }
    Ok(())
}

fn cmd_manufacture(cells: &[usize], out: Option<PathBuf>) -> Result<(), Failure> {
    if cells.len() < 2 || cells.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Failure::Config("--cells needs at least two strictly increasing values".into()));
    }
    let params = BrinkmanParams { eta: 1.0, lambda: 1.0, nu: 1.0, ..BrinkmanParams::default() };
    let report = diagnostics::brinkman_study(params, cells)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(dir) = out {
        fs::create_dir_all(&dir).and_then(|_| fs::write(dir.join("manufactured.txt"), &text)).map_err(|e| Failure::Solver(format!("writing output: {e}")))?;
    }
    let ov = report.min_order("velocity_l2").unwrap_or(f64::NAN);
    let op = report.min_order("pressure_l2").unwrap_or(f64::NAN);
    if ov >= 1.8 && op >= 0.9 {
        Ok(())
    } else {
        Err(Failure::Check(format!("observed orders too low: velocity {ov:.3} (need 1.8), pressure {op:.3} (need 0.9)")))
    }
}

fn cmd_sweep(config: &Path, key: &str, values: &[String], out: Option<PathBuf>) -> Result<(), Failure> {
    let text = fs::read_to_string(config).map_err(|e| Failure::Config(format!("cannot read {}: {e}", config.display())))?;
    // validate every member before running any
    let members: Vec<(String, Vec<(String, String)>, RunConfig)> = values
        .iter()
        .map(|v| {
            let ov = vec![(key.to_string(), v.clone())];
            let cfg = parse_config_with(&text, &ov)?;
            Ok((v.clone(), ov, cfg))
        })
        .collect::<Result<_, Failure>>()?;
    let root = output_dir(out, members.first().map(|m| &m.2), &format!("{}_sweep", stem(config)));
    let results: Vec<(String, Result<DiagnosticsLedger, Failure>)> = members
        .par_iter()
        .map(|(v, ov, cfg)| {
            let dir = root.join(format!("{key}={v}"));
            (v.clone(), simulate(cfg, &echo(&text, ov), &dir))
        })
        .collect();
    let mut failed = None;
    println!("{key},steps,final_energy_eps,max_overshoot,max_nutrient_balance");
    for (v, r) in results {
        match r {
            Ok(ledger) => {
                let s = ledger.summary();
                let e = ledger.last().map_or(f64::NAN, |r| r.energy_eps);
                println!("{v},{},{e:e},{:e},{:e}", s.steps, s.max_overshoot, s.max_nutrient_balance);
            }
            Err(f) => {
                println!("{v},failed,,,");
                eprintln!("{key}={v}: {}", f.message());
                failed.get_or_insert(f);
            }
        }
    }
    failed.map_or(Ok(()), Err)
}
