//! `tfus`: run single pipeline stages or the paired rCT/sCT comparison.
//!
//! Exit status: 0 success, 2 invalid configuration or arguments, 3 file
//! problems, 4 the computation could not proceed.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tfus_core::config::RunConfig;
use tfus_core::{Error, ErrorClass, WorldPoint};

#[derive(Debug, Parser)]
#[command(name = "tfus", version, about = "Transcranial focused-ultrasound planning and sCT evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// JSON run configuration; built-in defaults fill anything missing.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config value, e.g. `--set pipeline.simulation.n_cycles=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[arg(long, default_value = "out", global = true)]
    pub out_dir: PathBuf,
    /// Seed for phantom perturbation and the cohort generator.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Validate the configuration, print it resolved, and exit without writing.
    #[arg(long, global = true)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Args)]
pub struct Pose {
    /// Target in world mm as `x,y,z` (default: the grid centre).
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    pub target: Option<WorldPoint>,
    /// Fixed tilt in degrees; both default to the configured pose or the optimizer.
    #[arg(long, allow_hyphen_values = true)]
    pub tilt_x: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub tilt_y: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Threshold, keep the largest component and dilate: writes the mask and the masked CT.
    Extract {
        #[arg(long)]
        ct: PathBuf,
    },
    /// Write the configured shell phantom (rct.nii) and its perturbed copy (sct.nii).
    Phantom {
        /// Write every cohort pair instead (caseNNN_rct.nii, caseNNN_sct.nii).
        #[arg(long)]
        cohort: bool,
    },
    /// Ray-based targeting metrics (NAE, SDR, ST) for one pose.
    Plan {
        #[arg(long)]
        ct: PathBuf,
        #[command(flatten)]
        pose: Pose,
    },
    /// Sound speed, density and absorption maps of the extracted skull.
    Map {
        #[arg(long)]
        ct: PathBuf,
    },
    /// Full-wave simulation; writes the RMS pressure field and a JSON summary.
    Simulate {
        #[arg(long)]
        ct: PathBuf,
        #[command(flatten)]
        pose: Pose,
    },
    /// Paired rCT/sCT comparison of one case, or the generated cohort with `--cohort`.
    Compare {
        #[arg(long, required_unless_present = "cohort")]
        rct: Option<PathBuf>,
        #[arg(long, required_unless_present = "cohort")]
        sct: Option<PathBuf>,
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        target: Option<WorldPoint>,
        #[arg(long, default_value = "case")]
        case_id: String,
        #[arg(long, conflicts_with_all = ["rct", "sct", "target"])]
        cohort: bool,
    },
    /// Aggregate statistics of a report CSV.
    Report {
        #[arg(long)]
        csv: PathBuf,
    },
    /// HTTP planning server.
    Serve {
        /// Overrides `server.bind`.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Configuration helpers.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum ConfigAction {
    /// Print the built-in defaults as JSON.
    PrintDefaults,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Extract { .. } => "extract",
            Command::Phantom { .. } => "phantom",
            Command::Plan { .. } => "plan",
            Command::Map { .. } => "map",
            Command::Simulate { .. } => "simulate",
            Command::Compare { .. } => "compare",
            Command::Report { .. } => "report",
            Command::Serve { .. } => "serve",
            Command::Config { .. } => "config",
        }
    }
}

fn parse_point(s: &str) -> Result<WorldPoint, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("{s:?}: {e}"))?;
    match v[..] {
        [x, y, z] => Ok(WorldPoint::new(x, y, z)),
        _ => Err(format!("{s:?}: expected x,y,z")),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Validation => 2,
        ErrorClass::Io => 3,
        ErrorClass::Numerical => 4,
    }
}

fn resolve_config(g: &Global) -> tfus_core::Result<RunConfig> {
    let mut cfg = RunConfig::load(g.config.as_deref(), &g.overrides)?;
    if let Some(seed) = g.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> tfus_core::Result<()> {
    if let Command::Config { action: ConfigAction::PrintDefaults } = cli.command {
        println!("{}", RunConfig::default().to_json_pretty());
        return Ok(());
    }
    let cfg = resolve_config(&cli.global)?;
    if cli.global.dry_run {
        println!("{}", cfg.to_json_pretty());
        return Ok(());
    }
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(Error::InvalidParameter("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    }
    commands::dispatch(&cli, cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let name = cli.command.name();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let stage = e.stage().map_or(String::new(), |s| format!(" [{s}]"));
            eprintln!("tfus {name}{stage}: {}", e.root());
            ExitCode::from(exit_code(&e))
        }
    }
}
