//! Command-line front end for bllab: configuration, experiment runs and
//! report files.

pub mod commands;
pub mod config;
pub mod output;
pub mod selftest;
pub mod svg;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use bllab::functionals::FunctionalError;
use bllab::measures::MeasureError;
use bllab::muckenhoupt::MuckenhouptError;
use bllab::quad::QuadError;
use bllab::spectral::SpectralError;
use bllab::stability::StabilityError;
use bllab::superbl::SuperBlError;
use clap::{Parser, Subcommand};

use config::{ExperimentConfig, Overrides};
use output::{Artifacts, RunContext};

/// Environment variable that overrides the output directory of the config.
pub const OUT_DIR_ENV: &str = "BLLAB_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "bllab-out";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Invariant(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<MeasureError> for CliError {
    fn from(e: MeasureError) -> Self {
        // Every measure comes from the config, so a bad one is a config problem.
        CliError::Config(e.to_string())
    }
}

impl From<QuadError> for CliError {
    fn from(e: QuadError) -> Self {
        match e {
            QuadError::LevelOutOfRange(_) | QuadError::DimensionCap(_) => CliError::Config(e.to_string()),
            QuadError::NonFinite(_) => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<FunctionalError> for CliError {
    fn from(e: FunctionalError) -> Self {
        match e {
            FunctionalError::Quadrature(q) => q.into(),
            FunctionalError::DimensionMismatch { .. } => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<SuperBlError> for CliError {
    fn from(e: SuperBlError) -> Self {
        match e {
            SuperBlError::Functional(f) => f.into(),
            SuperBlError::OutOfRange { .. } | SuperBlError::DimensionCap { .. } | SuperBlError::InvalidMeasure(_) => {
                CliError::Config(e.to_string())
            }
            SuperBlError::HypothesisViolation(_) => CliError::Invariant(e.to_string()),
            SuperBlError::DComputationFailure(_) | SuperBlError::EmptyFamily => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<SpectralError> for CliError {
    fn from(e: SpectralError) -> Self {
        match e {
            SpectralError::MeshSize { .. } | SpectralError::DimensionCap { .. } | SpectralError::InvalidS(_) => {
                CliError::Config(e.to_string())
            }
            SpectralError::SingularWeight { .. } | SpectralError::EigenFailure(_) => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<MuckenhouptError> for CliError {
    fn from(e: MuckenhouptError) -> Self {
        match e {
            MuckenhouptError::SuperBl(s) => s.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<StabilityError> for CliError {
    fn from(e: StabilityError) -> Self {
        match e {
            StabilityError::Functional(f) => f.into(),
            StabilityError::OutOfRange { .. } => CliError::Config(e.to_string()),
            StabilityError::ZeroDeficit { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "bllab", version, about = "Numerical laboratory for Brascamp-Lieb stability and super-BL profiles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML experiment config; defaults apply to everything it omits.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (beats BLLAB_OUT_DIR, which beats the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print the primary JSON document to stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Leave the generation time out of SVG files.
    #[arg(long, global = true)]
    pub no_timestamp: bool,
    /// Quadrature level.
    #[arg(long, global = true)]
    pub level: Option<u32>,
    /// Spectral mesh sizes, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub mesh: Option<Vec<usize>>,
    /// Battery seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Measure shorthand: gaussian, gaussian(a), power(p), power(p,r); a trailing + means half-line.
    #[arg(long, global = true)]
    pub measure: Option<String>,
    /// β choice: log or const(c).
    #[arg(long, global = true)]
    pub beta: Option<String>,
    /// φ choice: log, one_plus_log or affine_log(a,b).
    #[arg(long, global = true)]
    pub phi: Option<String>,
    /// C_φ for convert-phi.
    #[arg(long, global = true)]
    pub c_phi: Option<f64>,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Deficit, distances and BGG bound over the battery.
    Deficit,
    /// Stability constant chain verified on the battery.
    Stability,
    /// Empirical β(s) profile with cutoffs and eigen adversaries.
    BetaProfile,
    /// φ → β conversion.
    ConvertPhi,
    /// β → φ conversion.
    ConvertBeta,
    /// Muckenhoupt-type constants B_log, B(β), B_s.
    Muckenhoupt,
    /// Sharp stability eigenvalues, convergence table and witnesses.
    Spectral,
    /// Tensorisation check on a product of two measures.
    TensorCheck,
    /// Entropic inequality and Rothaus checks.
    EntropicCheck,
    /// The invariant suite.
    Selftest,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Deficit => "deficit",
            Command::Stability => "stability",
            Command::BetaProfile => "beta-profile",
            Command::ConvertPhi => "convert-phi",
            Command::ConvertBeta => "convert-beta",
            Command::Muckenhoupt => "muckenhoupt",
            Command::Spectral => "spectral",
            Command::TensorCheck => "tensor-check",
            Command::EntropicCheck => "entropic-check",
            Command::Selftest => "selftest",
        }
    }
}

impl Cli {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            level: self.level,
            seed: self.seed,
            mesh: self.mesh.clone(),
            measure: self.measure.clone(),
            beta: self.beta.clone(),
            phi: self.phi.clone(),
            c_phi: self.c_phi,
        }
    }

    pub fn resolve_config(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply(&self.overrides())?;
        Ok(cfg)
    }

    pub fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }
}

/// Runs one command against a resolved config and returns its artifacts,
/// without touching the filesystem.
pub fn execute(command: Command, cfg: &ExperimentConfig, timestamp: Option<u64>) -> Result<Artifacts, CliError> {
    let ctx = RunContext { command: command.name().to_string(), config_hash: cfg.hash(), seed: cfg.battery.seed, timestamp };
    let mut a = Artifacts::new(ctx);
    match command {
        Command::Deficit => commands::deficit(cfg, &mut a)?,
        Command::Stability => commands::stability(cfg, &mut a)?,
        Command::BetaProfile => commands::beta_profile(cfg, &mut a)?,
        Command::ConvertPhi => commands::convert_phi(cfg, &mut a)?,
        Command::ConvertBeta => commands::convert_beta(cfg, &mut a)?,
        Command::Muckenhoupt => commands::muckenhoupt(cfg, &mut a)?,
        Command::Spectral => commands::spectral(cfg, &mut a)?,
        Command::TensorCheck => commands::tensor(cfg, &mut a)?,
        Command::EntropicCheck => commands::entropic(cfg, &mut a)?,
        Command::Selftest => selftest::selftest(cfg, &mut a)?,
    }
    Ok(a)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = cli.resolve_config()?;
    let timestamp = if cli.no_timestamp {
        None
    } else {
        Some(SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0))
    };
    let arts = execute(cli.command, &cfg, timestamp)?;
    let dir = cli.out_dir(&cfg);
    let written = arts.write_all(&dir)?;
    if cli.json {
        if let Some(j) = &arts.primary_json {
            print!("{j}");
        }
    } else {
        for line in &arts.summary {
            println!("{line}");
        }
        for p in &written {
            println!("wrote {}", p.display());
        }
    }
    if arts.violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(arts.violations.join("; ")))
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
