//! Command-line front end: `solve`, `correct`, `compare`, `grazing`,
//! `validate` and `kernel`.
//!
//! Each command prints a JSON summary on stdout and writes its artifacts to
//! the output directory; progress and timings go to stderr, so summaries are
//! reproducible byte for byte. Exit codes: 0 success, 2 configuration error,
//! 3 numerical failure, 4 inconclusive configuration.

pub mod artifacts;
pub mod checks;
pub mod commands;
pub mod config;

pub use config::{DataKind, RunConfig, KEYS, OUTPUT_DIR_ENV};

use crate::error::MilneError;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

/// Successful run.
pub const EXIT_OK: i32 = 0;
/// Invalid configuration or parameter.
pub const EXIT_CONFIG: i32 = 2;
/// Numerical failure (including failed validation checks).
pub const EXIT_NUMERICAL: i32 = 3;
/// The requested comparison cannot be certified.
pub const EXIT_INCONCLUSIVE: i32 = 4;

/// Exit code of an error.
pub fn exit_code(err: &MilneError) -> i32 {
    match err {
        MilneError::Config(_) | MilneError::Parameter(_) => EXIT_CONFIG,
        MilneError::Inconclusive(_) => EXIT_INCONCLUSIVE,
        _ => EXIT_NUMERICAL,
    }
}

/// Discrete-velocity laboratory for the half-space Milne problem with
/// geometric correction.
#[derive(Debug, Parser)]
#[command(name = "milne", version)]
pub struct Cli {
    /// Command to run.
    #[command(subcommand)]
    pub command: Command,
}

/// Subcommands.
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one half-space problem and write its solution.
    Solve(CommonArgs),
    /// Build T, correct the boundary data and optionally adjust the mass flux.
    Correct(CorrectArgs),
    /// Compare classical and geometric layers over an (ε, n) sweep.
    Compare(CompareArgs),
    /// Measure the blow-up of the wall normal derivative near grazing.
    Grazing(GrazingArgs),
    /// Run the numerical checks of every module.
    Validate(ValidateArgs),
    /// Build (or load) the collision operator and write its cache.
    Kernel(CommonArgs),
}

/// Options shared by every command; each overrides the matching file key.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML configuration file (flat dotted keys).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Artifact directory (`output.dir`).
    #[arg(long)]
    pub output_dir: Option<String>,
    /// Curvature parameter ε (`problem.epsilon`).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// `classical` or `geometric` (`problem.mode`).
    #[arg(long)]
    pub mode: Option<String>,
    /// Velocity truncation radius (`grid.v_max`).
    #[arg(long)]
    pub v_max: Option<f64>,
    /// Rings of the velocity grid (`grid.n_rings`).
    #[arg(long)]
    pub n_rings: Option<usize>,
    /// Angles per ring (`grid.n_theta`).
    #[arg(long)]
    pub n_theta: Option<usize>,
    /// Inflow data kind (`data.kind`).
    #[arg(long)]
    pub data: Option<String>,
    /// Counterexample concentration (`data.m`).
    #[arg(long)]
    pub m: Option<f64>,
    /// Imposed mass flux (`data.mass_flux`).
    #[arg(long)]
    pub mass_flux: Option<f64>,
    /// Initial slab length (`slab.length`).
    #[arg(long)]
    pub slab_length: Option<f64>,
    /// Operator cache to load (`kernel.cache`).
    #[arg(long)]
    pub cache: Option<String>,
    /// Seed of randomized checks (`run.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (does not affect results).
    #[arg(long)]
    pub threads: Option<usize>,
}

/// `correct` options.
#[derive(Debug, Clone, Args)]
pub struct CorrectArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Target of `h̃₀ + h̃₃` (`data.target_c0`).
    #[arg(long)]
    pub target_c0: Option<f64>,
}

/// `compare` options.
#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated ε values (`compare.epsilons`).
    #[arg(long)]
    pub eps: Option<String>,
    /// Comma-separated probe multipliers (`compare.ns`).
    #[arg(long)]
    pub n: Option<String>,
    /// Skip the concentration calibration (`compare.calibrate = false`).
    #[arg(long)]
    pub no_calibrate: bool,
}

/// `grazing` options.
#[derive(Debug, Clone, Args)]
pub struct GrazingArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated decreasing probe velocities (`grazing.ladder`).
    #[arg(long)]
    pub ladder: Option<String>,
}

/// `validate` options.
#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Random trials of the Rayleigh check (`validate.trials`).
    #[arg(long)]
    pub trials: Option<usize>,
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Solve(c) | Command::Kernel(c) => c,
            Command::Correct(a) => &a.common,
            Command::Compare(a) => &a.common,
            Command::Grazing(a) => &a.common,
            Command::Validate(a) => &a.common,
        }
    }

    /// Command name.
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve(_) => "solve",
            Command::Correct(_) => "correct",
            Command::Compare(_) => "compare",
            Command::Grazing(_) => "grazing",
            Command::Validate(_) => "validate",
            Command::Kernel(_) => "kernel",
        }
    }
}

fn set_str(cfg: &mut RunConfig, key: &str, s: &str) -> crate::Result<()> {
    cfg.set(key, &toml::Value::String(s.to_string()))
}

fn set_f64(cfg: &mut RunConfig, key: &str, x: f64) -> crate::Result<()> {
    cfg.set(key, &toml::Value::Float(x))
}

fn set_list(cfg: &mut RunConfig, key: &str, s: &str) -> crate::Result<()> {
    let list = config::parse_list(key, s)?;
    cfg.set(key, &toml::Value::Array(list.into_iter().map(toml::Value::Float).collect()))
}

/// Resolves the configuration of a command: defaults, then the file, then
/// `MILNE_OUTPUT_DIR`, then flags; finally validates it.
pub fn resolve_config(command: &Command, env_output_dir: Option<String>) -> crate::Result<RunConfig> {
    let common = command.common();
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    if let Some(dir) = env_output_dir.filter(|d| !d.is_empty()) {
        cfg.output.dir = dir;
    }
    if let Some(d) = &common.output_dir {
        cfg.output.dir = d.clone();
    }
    if let Some(x) = common.epsilon {
        set_f64(&mut cfg, "problem.epsilon", x)?;
    }
    if let Some(s) = &common.mode {
        set_str(&mut cfg, "problem.mode", s)?;
    }
    if let Some(x) = common.v_max {
        set_f64(&mut cfg, "grid.v_max", x)?;
    }
    if let Some(n) = common.n_rings {
        cfg.grid.n_rings = n;
    }
    if let Some(n) = common.n_theta {
        cfg.grid.n_theta = n;
    }
    if let Some(s) = &common.data {
        set_str(&mut cfg, "data.kind", s)?;
    }
    if let Some(x) = common.m {
        set_f64(&mut cfg, "data.m", x)?;
    }
    if let Some(x) = common.mass_flux {
        set_f64(&mut cfg, "data.mass_flux", x)?;
    }
    if let Some(x) = common.slab_length {
        set_f64(&mut cfg, "slab.length", x)?;
    }
    if let Some(s) = &common.cache {
        cfg.kernel.cache = Some(s.clone());
    }
    if let Some(s) = common.seed {
        cfg.run.seed = s;
    }
    match command {
        Command::Correct(a) => {
            if let Some(c) = a.target_c0 {
                set_f64(&mut cfg, "data.target_c0", c)?;
            }
        }
        Command::Compare(a) => {
            if let Some(s) = &a.eps {
                set_list(&mut cfg, "compare.epsilons", s)?;
            }
            if let Some(s) = &a.n {
                set_list(&mut cfg, "compare.ns", s)?;
            }
            if a.no_calibrate {
                cfg.compare.calibrate = false;
            }
        }
        Command::Grazing(a) => {
            if let Some(s) = &a.ladder {
                set_list(&mut cfg, "grazing.ladder", s)?;
            }
        }
        Command::Validate(a) => {
            if let Some(t) = a.trials {
                cfg.validate.trials = t;
            }
        }
        Command::Solve(_) | Command::Kernel(_) => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `args` (including the program name), runs the command, prints
/// the summary and returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match resolve_config(&cli.command, std::env::var(OUTPUT_DIR_ENV).ok()) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    if let Some(n) = cli.command.common().threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: could not set thread count: {e}");
        }
    }
    eprintln!("milne {}: config hash {}, seed {}", cli.command.name(), cfg.hash(), cfg.run.seed);
    let start = std::time::Instant::now();
    let outcome = commands::run(&cli.command, &cfg);
    eprintln!("elapsed: {:.2} s", start.elapsed().as_secs_f64());
    match outcome {
        Ok(out) => {
            match serde_json::to_string_pretty(&out.summary) {
                Ok(text) => println!("{text}"),
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_NUMERICAL;
                }
            }
            out.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
