use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use geolin_core::catalog::{self, CatalogEntry, Check, DynamicsSetup};
use geolin_core::classify::{classify, Decision};
use geolin_core::dynamics::{apply_transform, charge_drift, noether_charge_from_generator};
use geolin_core::systems::SystemSpec;
use geolin_core::Error;

/// Decide whether a constrained Hamiltonian system is linearizable and
/// check the straightening numerically.
#[derive(Debug, Parser)]
#[command(name = "geolin", version)]
struct Cli {
    #[command(flatten)]
    run: RunConfig,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunConfig {
    /// Sampling seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Sample points per test.
    #[arg(long, global = true, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    samples: u64,
    /// Integrator step.
    #[arg(long, global = true, default_value_t = 1e-3, value_parser = positive)]
    dt: f64,
    /// Integration horizon (defaults to the catalog entry's).
    #[arg(long, global = true, value_parser = positive)]
    horizon: Option<f64>,
    /// Parameter override `name=value`, repeatable.
    #[arg(long = "set", global = true, value_name = "NAME=VALUE", value_parser = assignment)]
    set: Vec<(String, f64)>,
    /// Write to this file instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Progress and timing on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

/// A spec file or a catalog entry.
#[derive(Debug, Args)]
struct Source {
    /// System spec file.
    path: Option<PathBuf>,
    /// Built-in catalog entry instead of a file.
    #[arg(long, conflicts_with = "path")]
    catalog: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and validate a spec file.
    Validate { path: PathBuf },
    /// Classify a system.
    Analyze {
        #[command(flatten)]
        source: Source,
    },
    /// Integrate a trajectory and write it as CSV.
    Integrate {
        #[command(flatten)]
        source: Source,
        /// Initial point, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        q0: Option<Vec<f64>>,
        /// Initial direction, projected onto the constraint surface.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        direction: Option<Vec<f64>>,
    },
    /// Run dynamic checks against a system's fixtures.
    Verify {
        what: What,
        #[command(flatten)]
        source: Source,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        q0: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        direction: Option<Vec<f64>>,
    },
    /// Built-in systems.
    Catalog {
        #[command(subcommand)]
        action: CatalogAction,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum What {
    Transform,
    Charges,
    LiftRecovery,
}

#[derive(Debug, Subcommand)]
enum CatalogAction {
    List,
    Show { name: String },
    RunAll,
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(_) => Err("must be positive".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn assignment(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected NAME=VALUE")?;
    let v: f64 = v.trim().parse().map_err(|e| format!("{v}: {e}"))?;
    Ok((k.trim().to_string(), v))
}

mod code {
    pub const VALIDATION: u8 = 1;
    pub const IO: u8 = 2;
    pub const NOT_LINEARIZABLE: u8 = 3;
    pub const INDETERMINATE: u8 = 4;
    pub const NUMERIC: u8 = 5;
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Failure {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        let code = match e {
            Error::Parse { .. }
            | Error::UnknownSymbols { .. }
            | Error::Schema { .. }
            | Error::NotSymmetric { .. }
            | Error::Dimension { .. }
            | Error::NameCollision(_)
            | Error::UnknownEntry(_) => code::VALIDATION,
            _ => code::NUMERIC,
        };
        Failure::new(code, e.to_string())
    }
}

/// What the command produced and the exit status it implies.
struct Outcome {
    text: String,
    code: u8,
}

impl Outcome {
    fn ok(text: String) -> Outcome {
        Outcome { text, code: 0 }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = Instant::now();
    let result = run(&cli).and_then(|out| {
        emit(&cli.run, &out.text)?;
        Ok(out.code)
    });
    if cli.run.verbose {
        eprintln!("finished in {:.3}s", started.elapsed().as_secs_f64());
    }
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn emit(cfg: &RunConfig, text: &str) -> Result<(), Failure> {
    match &cfg.output {
        Some(p) => fs::write(p, text).map_err(|e| Failure::new(code::IO, format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    Err(Failure::new(code::IO, format!("stdout: {e}")))
                }
                _ => Ok(()),
            }
        }
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

fn read_spec(path: &Path) -> Result<SystemSpec, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::new(code::IO, format!("{}: {e}", path.display())))?;
    SystemSpec::from_json(&text).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })
}

/// The system with overrides applied, and its catalog entry if any.
fn load(source: &Source, cfg: &RunConfig) -> Result<(SystemSpec, Option<CatalogEntry>), Failure> {
    let (spec, entry) = match (&source.path, &source.catalog) {
        (Some(p), None) => (read_spec(p)?, None),
        (None, Some(name)) => {
            let e = catalog::catalog_get(name)?;
            (e.system.clone(), Some(e))
        }
        _ => return Err(Failure::new(code::VALIDATION, "give a spec file or --catalog NAME")),
    };
    let overrides: BTreeMap<String, f64> = cfg.set.iter().cloned().collect();
    let spec = if overrides.is_empty() {
        spec
    } else {
        spec.with_params(&overrides)?
    };
    if cfg.verbose {
        eprintln!(
            "loaded {} (n = {}, parameters {:?})",
            spec.name,
            spec.dim(),
            spec.params()
        );
    }
    Ok((spec, entry))
}

/// Initial data from flags, falling back to the catalog entry.
fn dynamics_setup(
    entry: Option<&CatalogEntry>,
    q0: &Option<Vec<f64>>,
    direction: &Option<Vec<f64>>,
    cfg: &RunConfig,
) -> Result<DynamicsSetup, Failure> {
    let base = entry.and_then(|e| e.dynamics.clone());
    let q0 = q0.clone().or_else(|| base.as_ref().map(|b| b.q0.clone()));
    let direction = direction.clone().or_else(|| base.as_ref().map(|b| b.direction.clone()));
    let (Some(q0), Some(direction)) = (q0, direction) else {
        return Err(Failure::new(
            code::VALIDATION,
            "no initial data: pass --q0 and --direction",
        ));
    };
    let horizon = cfg.horizon.or(base.as_ref().map(|b| b.horizon)).unwrap_or(1.0);
    Ok(DynamicsSetup {
        q0,
        direction,
        horizon,
        dt: cfg.dt,
    })
}

fn run(cli: &Cli) -> Result<Outcome, Failure> {
    let cfg = &cli.run;
    match &cli.command {
        Command::Validate { path } => {
            let s = read_spec(path)?;
            Ok(Outcome::ok(pretty(&json!({
                "valid": true,
                "system": s.name,
                "coordinates": s.coords(),
                "parameters": s.params(),
            }))))
        }
        Command::Analyze { source } => {
            let (s, _) = load(source, cfg)?;
            let v = classify(&s, cfg.samples as usize, cfg.seed)?;
            let code = match v.decision {
                Decision::Linearizable => 0,
                Decision::NotLinearizable => code::NOT_LINEARIZABLE,
                Decision::Indeterminate => code::INDETERMINATE,
            };
            Ok(Outcome {
                text: pretty(&v.to_json()),
                code,
            })
        }
        Command::Integrate { source, q0, direction } => {
            let (s, entry) = load(source, cfg)?;
            let setup = dynamics_setup(entry.as_ref(), q0, direction, cfg)?;
            integrate(&s, &setup, cfg)
        }
        Command::Verify {
            what,
            source,
            q0,
            direction,
        } => {
            let (s, entry) = load(source, cfg)?;
            verify(*what, &s, entry.as_ref(), q0, direction, cfg)
        }
        Command::Catalog { action } => match action {
            CatalogAction::List => {
                let names = catalog::catalog_list();
                Ok(Outcome::ok(match cfg.format {
                    Some(Format::Json) => pretty(&json!(names)),
                    _ => names.iter().map(|n| format!("{n}\n")).collect(),
                }))
            }
            CatalogAction::Show { name } => Ok(Outcome::ok(pretty(&catalog::catalog_get(name)?.to_json()))),
            CatalogAction::RunAll => {
                let claims = catalog::run_all(cfg.seed);
                if cfg.verbose {
                    for c in claims.iter().filter(|c| c.pass == Some(false)) {
                        eprintln!("FAIL {} / {}: measured {}", c.entry, c.claim, c.measured);
                    }
                }
                let code = if catalog::all_pass(&claims) { 0 } else { code::NUMERIC };
                Ok(Outcome {
                    text: pretty(&serde_json::to_value(&claims).expect("claims serialize")),
                    code,
                })
            }
        },
    }
}

fn integrate(s: &SystemSpec, setup: &DynamicsSetup, cfg: &RunConfig) -> Result<Outcome, Failure> {
    let mut traj = catalog::run_dynamics(s, setup)?;
    for tr in &s.transforms {
        match apply_transform(tr, &traj, s.params()) {
            Ok(cols) if cols.rows.len() == traj.len() => traj.push_columns(&cols),
            Ok(_) => eprintln!(
                "warning: transform {} undefined along part of the run; columns omitted",
                tr.name
            ),
            Err(e) => eprintln!("warning: transform {}: {e}", tr.name),
        }
    }
    for g in &s.generators {
        let ch = noether_charge_from_generator(s, g)?;
        match charge_drift(s, &ch, &traj) {
            Ok((values, _)) => traj.extra.push((g.name.clone(), values)),
            Err(e) => eprintln!("warning: charge {}: {e}", g.name),
        }
    }
    if cfg.verbose {
        eprintln!(
            "{} steps, max |H| = {:e}",
            traj.len().saturating_sub(1),
            traj.max_abs_h()
        );
    }
    if let Some(t) = traj.truncated_at {
        eprintln!("warning: trajectory left the admissible region at t = {t}");
    }
    let text = match cfg.format {
        Some(Format::Json) => {
            let mut cols = serde_json::Map::new();
            cols.insert("t".into(), json!(traj.t));
            for (i, c) in traj.coords.iter().enumerate() {
                cols.insert(c.clone(), json!(traj.q.iter().map(|q| q[i]).collect::<Vec<_>>()));
                cols.insert(
                    format!("d{c}/dt"),
                    json!(traj.qd.iter().map(|q| q[i]).collect::<Vec<_>>()),
                );
            }
            cols.insert("H".into(), json!(traj.h));
            cols.insert("tau".into(), json!(traj.tau));
            for (name, col) in &traj.extra {
                cols.insert(name.clone(), json!(col));
            }
            pretty(&json!({
                "system": traj.system,
                "parameters": s.params(),
                "dt": setup.dt,
                "horizon": setup.horizon,
                "truncated_at": traj.truncated_at,
                "columns": cols,
            }))
        }
        _ => traj.to_csv(),
    };
    Ok(Outcome::ok(text))
}

fn verify(
    what: What,
    s: &SystemSpec,
    entry: Option<&CatalogEntry>,
    q0: &Option<Vec<f64>>,
    direction: &Option<Vec<f64>>,
    cfg: &RunConfig,
) -> Result<Outcome, Failure> {
    let missing = |kind: &str| Failure::new(code::VALIDATION, format!("system {} has no {kind}", s.name));
    let checks: Vec<Check> = match what {
        What::Transform => {
            if s.transforms.is_empty() {
                return Err(missing("transforms"));
            }
            let setup = dynamics_setup(entry, q0, direction, cfg).ok();
            let only = entry.map(|e| e.flatness_only.clone()).unwrap_or_default();
            catalog::verify_transforms(s, setup.as_ref(), &only, cfg.samples as usize, cfg.seed)?
        }
        What::Charges => {
            if s.generators.is_empty() {
                return Err(missing("generators"));
            }
            catalog::verify_charges(s, &dynamics_setup(entry, q0, direction, cfg)?, true)?
        }
        What::LiftRecovery => catalog::verify_lift_recovery(s, &dynamics_setup(entry, q0, direction, cfg)?)?,
    };
    let pass = checks.iter().all(|c| c.pass != Some(false));
    let report = json!({
        "system": s.name,
        "check": what.to_possible_value().expect("named").get_name(),
        "parameters": s.params(),
        "pass": pass,
        "items": checks,
    });
    Ok(Outcome {
        text: pretty(&report),
        code: if pass { 0 } else { code::NUMERIC },
    })
}
