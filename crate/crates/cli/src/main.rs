//! `picard-mpe`: run the solvers from a JSON configuration and write CSV data.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "picard-mpe", version, about = "Markov perfect equilibria of symmetric finite-state games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset model (overrides the config file).
    #[arg(long)]
    preset: Option<String>,
    /// `key=value` override; dotted keys address config sections, bare keys preset parameters.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for all random streams.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Picard weight in [0, 1).
    #[arg(long, value_parser = parse_rho)]
    rho: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// ODE-based (weighted) Picard iteration.
    Picard(Common),
    /// Direct solve of the coupled equilibrium system.
    Direct(Common),
    /// Exploitability certificate of a control file.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Control CSV as written by `picard`.
        #[arg(long)]
        control: PathBuf,
    },
    /// Monte Carlo simulation with given controls.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Control CSV of the tagged player.
        #[arg(long)]
        control: PathBuf,
        /// Control CSV of the other players (default: same as --control).
        #[arg(long)]
        population: Option<PathBuf>,
    },
    /// Simulation-based Picard iteration with neural best responses.
    Neural(Common),
    /// Picard iteration with injected control errors.
    Noise(Common),
    /// List the built-in models and their parameters.
    PresetsList,
}

fn parse_rho(s: &str) -> Result<f64, String> {
    let rho: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..1.0).contains(&rho) {
        Ok(rho)
    } else {
        Err(format!("rho must lie in [0, 1), got {rho}"))
    }
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Solver(String),
}

impl From<picard_mpe::Error> for Failure {
    fn from(e: picard_mpe::Error) -> Self {
        use picard_mpe::Error as E;
        match e {
            E::InvalidArgument(_)
            | E::NotOnSimplex { .. }
            | E::IndexOutOfRange { .. }
            | E::TooLarge { .. }
            | E::DimensionMismatch(_)
            | E::Json(_)
            | E::Csv(_) => Failure::Config(e.to_string()),
            E::Io(_) => Failure::Solver(e.to_string()),
            E::StepUnderflow { .. } | E::NonFinite { .. } | E::Simulation(_) | E::Diverged { .. } => {
                Failure::Solver(e.to_string())
            }
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Solver(e.to_string())
    }
}

fn load_config(c: &Common) -> Result<RunConfig, Failure> {
    let mut doc = match &c.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
        None => serde_json::json!({}),
    };
    let mut sets = Vec::new();
    if let Some(p) = &c.preset {
        // a preset on the command line replaces whatever model the file had
        doc.as_object_mut()
            .ok_or_else(|| Failure::Config("config must be a JSON object".into()))?
            .insert("model".into(), serde_json::json!({}));
        sets.push(format!("model.preset=\"{p}\""));
    }
    sets.extend(c.set.iter().cloned());
    if let Some(seed) = c.seed {
        for key in ["mc.seed", "noise.seed", "neural.seed"] {
            sets.push(format!("{key}={seed}"));
        }
    }
    if let Some(rho) = c.rho {
        sets.push(format!("picard.rho={rho}"));
        sets.push(format!("neural.rho={rho}"));
    }
    let mut cfg = RunConfig::from_value(doc, &sets)?;
    if let Some(out) = &c.out {
        cfg.out = out.clone();
    }
    if cfg.out.as_os_str().is_empty() {
        cfg.out = PathBuf::from("out");
    }
    Ok(cfg)
}

fn setup(c: &Common) -> Result<RunConfig, Failure> {
    if let Some(k) = c.threads {
        if k == 0 {
            return Err(Failure::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    let cfg = load_config(c)?;
    std::fs::create_dir_all(&cfg.out)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Picard(c) => commands::picard(&setup(&c)?),
        Command::Direct(c) => commands::direct(&setup(&c)?),
        Command::Verify { common, control } => commands::verify(&setup(&common)?, &control),
        Command::Simulate {
            common,
            control,
            population,
        } => commands::simulate(&setup(&common)?, &control, population.as_deref()),
        Command::Neural(c) => commands::neural(&setup(&c)?),
        Command::Noise(c) => commands::noise(&setup(&c)?),
        Command::PresetsList => {
            commands::presets_list();
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("solver failure: {msg}");
            ExitCode::from(3)
        }
    }
}
