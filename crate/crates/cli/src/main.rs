//! `macrobell` command-line interface.
//!
//! Every subcommand reads an optional flat `key = value` config file and
//! applies flag overrides on top. Exit codes: 0 success, 1 validation
//! error, 2 crosscheck failure.

mod commands;
mod config;
mod io;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Schema { column: String, reason: String },
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "{m}"),
            CliError::Schema { column, reason } => write!(f, "schema error in column `{column}`: {reason}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "macrobell", version, about = "Macroscopic Bell state simulator and analysis toolkit")]
struct Cli {
    /// Flat key = value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// NRF table for all states and cross-arm pairings, three engines.
    Table1,
    /// One curve: closed form, both engines and a Monte-Carlo sweep.
    Curve,
    /// Witness report from exact moments, or from records with `--input`.
    Witness,
    /// Pulse records (settings=witness|identity|model) or a sweep CSV (settings=sweep).
    Simulate,
    /// Fit efficiency and mean photon number to a sweep CSV.
    Fit,
    /// Engine-equivalence suite; exit code 2 on a threshold breach.
    Crosscheck,
}

/// Flag overrides; each maps to the config key of the same name.
#[derive(Args, Default)]
struct Overrides {
    /// Bell state: phi+, phi-, psi+, psi-.
    #[arg(long, global = true)]
    state: Option<String>,
    /// Parametric gain (exclusive with --n-mean).
    #[arg(long, global = true)]
    gamma: Option<String>,
    /// Mean photons per mode (exclusive with --gamma).
    #[arg(long, global = true)]
    n_mean: Option<String>,
    /// Efficiency: one value or four comma-separated (AH,AV,BH,BV).
    #[arg(long, global = true)]
    eta: Option<String>,
    #[arg(long, global = true)]
    schmidt_modes: Option<String>,
    #[arg(long, global = true)]
    n_max: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Degrees: start:stop:step or a comma list.
    #[arg(long, global = true)]
    angles: Option<String>,
    #[arg(long, global = true)]
    pulses: Option<String>,
    /// Output file (stdout when absent).
    #[arg(long, short, global = true)]
    output: Option<String>,
    /// Input CSV (records for witness, sweep for fit).
    #[arg(long, short, global = true)]
    input: Option<String>,
    /// nrf-hwp, var-hwp-pair, var-qwp-triplet, var-global-rotation.
    #[arg(long, global = true)]
    model: Option<String>,
    /// plus or minus.
    #[arg(long, global = true)]
    branch: Option<String>,
    /// Degrees.
    #[arg(long, global = true)]
    base_angle: Option<String>,
    #[arg(long, global = true)]
    noise_sd: Option<String>,
    #[arg(long, global = true)]
    resamples: Option<String>,
    /// inverse-variance or uniform.
    #[arg(long, global = true)]
    weights: Option<String>,
    #[arg(long, global = true)]
    settings: Option<String>,
    #[arg(long, global = true)]
    significance: Option<String>,
    /// Random settings per state in crosscheck.
    #[arg(long, global = true)]
    samples: Option<String>,
    /// Crosscheck threshold, replacing 1e-8 plus the truncation allowance.
    #[arg(long, global = true)]
    tolerance: Option<String>,
}

impl Overrides {
    fn apply(&self, map: &mut BTreeMap<String, String>) {
        let pairs = [
            ("state", &self.state),
            ("gamma", &self.gamma),
            ("n_mean", &self.n_mean),
            ("eta", &self.eta),
            ("schmidt_modes", &self.schmidt_modes),
            ("n_max", &self.n_max),
            ("seed", &self.seed),
            ("angles", &self.angles),
            ("pulses", &self.pulses),
            ("output", &self.output),
            ("input", &self.input),
            ("model", &self.model),
            ("branch", &self.branch),
            ("base_angle", &self.base_angle),
            ("noise_sd", &self.noise_sd),
            ("resamples", &self.resamples),
            ("weights", &self.weights),
            ("settings", &self.settings),
            ("significance", &self.significance),
            ("samples", &self.samples),
            ("tolerance", &self.tolerance),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                map.insert(key.to_string(), v.clone());
            }
        }
        // A flag for one of the exclusive source keys replaces the other from the file.
        if self.gamma.is_some() && self.n_mean.is_none() {
            map.remove("n_mean");
        }
        if self.n_mean.is_some() && self.gamma.is_none() {
            map.remove("gamma");
        }
    }
}

fn emit(cfg: &config::RunConfig, text: &str) -> Result<(), CliError> {
    match &cfg.output {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    let mut map = match &cli.config {
        Some(path) => config::read_file(path)?,
        None => BTreeMap::new(),
    };
    cli.overrides.apply(&mut map);
    let cfg = config::RunConfig::from_map(&map)?;
    let (text, ok) = match cli.command {
        Command::Table1 => (commands::table1(&cfg)?, true),
        Command::Curve => (commands::curve(&cfg)?, true),
        Command::Witness => (commands::witness(&cfg)?, true),
        Command::Simulate => (commands::simulate(&cfg)?, true),
        Command::Fit => (commands::fit(&cfg)?, true),
        Command::Crosscheck => commands::crosscheck(&cfg)?,
    };
    emit(&cfg, &text)?;
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("crosscheck failed: a discrepancy exceeds its threshold");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
