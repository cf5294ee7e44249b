//! The `get` command-line driver: configuration, run orchestration and
//! exports for Gaussian-ensemble topology optimization.

pub mod commands;
pub mod config;
pub mod error;
pub mod export;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{bench, evaluate, post, run, Study};
use crate::config::{load_config, parse_counts, parse_layout, Exports, RunConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "get", version, about = "Topology optimization with ensembles of Gaussian fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize a benchmark or a configured problem and write its exports.
    Run(RunArgs),
    /// Re-evaluate a saved design, optionally on another mesh.
    Evaluate(EvaluateArgs),
    /// Re-export a saved design without optimizing.
    Post(PostArgs),
    /// Run the parameter studies: layouts, epsilon, threshold, mesh.
    Bench(BenchArgs),
}

/// Flags shared by `run` and `bench`; each overrides the config key it names.
#[derive(Debug, Args)]
pub struct ProblemArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub benchmark: Option<String>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// NXxNYxK or NXxNYxNZxK.
    #[arg(long)]
    pub layout: Option<String>,
    /// NXxNY or NXxNYxNZ.
    #[arg(long)]
    pub mesh: Option<String>,
    #[arg(long)]
    pub solver: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Exports to write (comma separated): design, history, timings, density,
    /// contours, curvature, stress, binary, summary, or all.
    #[arg(long, value_delimiter = ',')]
    pub export: Option<Vec<String>>,
    /// Extra meshes to re-evaluate the final design on (repeatable).
    #[arg(long = "eval-mesh")]
    pub eval_mesh: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// A design.json written by `run` or `post`.
    pub design: PathBuf,
    #[arg(long)]
    pub mesh: Option<String>,
    #[arg(long)]
    pub solver: Option<String>,
}

#[derive(Debug, Args)]
pub struct PostArgs {
    pub design: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub export: Option<Vec<String>>,
    #[arg(long = "eval-mesh")]
    pub eval_mesh: Vec<String>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// layouts, epsilon, threshold, mesh or all.
    #[arg(long, default_value = "all")]
    pub study: String,
    /// Training meshes of the mesh study (repeatable); the last is also the
    /// evaluation mesh.
    #[arg(long = "study-mesh")]
    pub study_mesh: Vec<String>,
}

/// The effective configuration: the config file (or defaults) with flags applied.
pub fn resolve_config(args: &ProblemArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(b) = &args.benchmark {
        cfg.benchmark = Some(b.clone());
        cfg.problem = None;
    }
    if let Some(n) = args.iters {
        cfg.optimizer.max_iters = n;
    }
    if let Some(e) = args.epsilon {
        cfg.projection.epsilon = e;
    }
    if let Some(t) = args.threshold {
        cfg.projection.threshold = t;
    }
    if let Some(m) = &args.mesh {
        cfg.mesh = Some(parse_counts(m)?);
    }
    if let Some(s) = &args.solver {
        cfg.solver = s.clone();
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    if let Some(l) = &args.layout {
        let base = match &cfg.layout {
            Some(l) => l.clone(),
            None => cfg.definition_without_layout()?.layout,
        };
        cfg.layout = Some(parse_layout(l, &base)?);
    }
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    fn definition_without_layout(&self) -> Result<gaussian_topo::problems::ProblemDefinition, CliError> {
        let mut c = self.clone();
        c.layout = None;
        c.mesh = None;
        c.definition()
    }
}

/// Caps rayon's worker count from `GET_THREADS`.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("GET_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("GET_THREADS must be a positive integer, got '{v}'")))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Run(a) => {
            let mut cfg = resolve_config(&a.problem)?;
            if let Some(names) = &a.export {
                cfg.export = Exports::from_names(names)?;
            }
            for m in &a.eval_mesh {
                cfg.evaluation_meshes.push(parse_counts(m)?);
            }
            let r = run(&cfg, err)?;
            let s = &r.summary;
            let _ = writeln!(
                out,
                "{} = {}  V_f = {}  M_nd = {}%",
                s.objective_name, s.objective, s.volume_fraction, s.nondiscreteness
            );
            if let Some(b) = &s.binary {
                let _ = writeln!(
                    out,
                    "binary {} = {}  V_f = {}  overshoot = {}%",
                    s.objective_name, b.objective, b.volume_fraction, b.volume_overshoot
                );
            }
            let _ = writeln!(out, "wrote {}", cfg.out.display());
        }
        Command::Evaluate(a) => {
            let mesh = a.mesh.as_deref().map(parse_counts).transpose()?;
            let r = evaluate(&a.design, mesh.as_deref(), a.solver.as_deref())?;
            let _ = writeln!(
                out,
                "mesh {}  {} = {}  V_f = {}  M_nd = {}%",
                r.mesh.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("x"),
                r.objective_name,
                r.objective,
                r.volume_fraction,
                r.nondiscreteness
            );
            let _ = writeln!(
                out,
                "binary {} = {}  V_f = {}  M_nd = {}%",
                r.objective_name, r.binary.objective, r.binary.volume_fraction, r.binary.nondiscreteness
            );
        }
        Command::Post(a) => {
            let exports = match &a.export {
                Some(n) => Exports::from_names(n)?,
                None => Exports::default(),
            };
            let meshes = a.eval_mesh.iter().map(|m| parse_counts(m)).collect::<Result<Vec<_>, _>>()?;
            let s = post(&a.design, &a.out, &exports, &meshes)?;
            let _ = writeln!(out, "{} = {}  V_f = {}", s.objective_name, s.objective, s.volume_fraction);
            let _ = writeln!(out, "wrote {}", a.out.display());
        }
        Command::Bench(a) => {
            let cfg = resolve_config(&a.problem)?;
            let studies = Study::parse(&a.study)?;
            let meshes = a.study_mesh.iter().map(|m| parse_counts(m)).collect::<Result<Vec<_>, _>>()?;
            let meshes = (!meshes.is_empty()).then_some(meshes);
            let _ = writeln!(err, "{}", commands::BENCH_HEADER);
            let rows = bench(&cfg, &studies, meshes.as_deref(), err)?;
            let _ = writeln!(out, "{} cases written to {}", rows.len(), cfg.out.display());
        }
    }
    Ok(())
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match execute(cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
