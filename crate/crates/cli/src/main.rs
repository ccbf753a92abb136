use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use epdt_cli::commands;
use epdt_cli::config::{MapConfig, RunConfig};
use epdt_cli::CliError;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "epdt", version, about = "Criticality, simulation and blow-up certificates for weakly coupled Euler-Poisson-Darboux-Tricomi systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `outputs.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for random data, overriding `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the FFT batches.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Region verdict for the configured parameters.
    Classify(Common),
    /// Verdict grid over (p, q), written as CSV and SVG.
    Map {
        #[command(flatten)]
        common: Common,
        /// `lo,hi`
        #[arg(long, value_parser = parse_range)]
        p_range: Option<(f64, f64)>,
        #[arg(long, value_parser = parse_range)]
        q_range: Option<(f64, f64)>,
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Run the nonlinear system.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Repeat at twice the resolution and compare outcomes.
        #[arg(long)]
        refine: bool,
    },
    /// Simulate and fit the weighted-norm decay rates.
    DecayFit(Common),
    /// Check the linear decay rate and source scaling.
    VerifyLinear(Common),
    /// Integral identities over the configured radii.
    Certify {
        #[command(flatten)]
        common: Common,
        /// Snapshot file from an earlier `simulate`.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected `lo,hi`")?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    Ok((lo, hi))
}

fn setup(c: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(out) = &c.out {
        cfg.outputs.directory = out.display().to_string();
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(n) = c.threads {
        // Only fails when a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(cfg)
}

fn emit(value: &impl Serialize) -> Result<(), CliError> {
    let line = serde_json::to_string(value).map_err(|e| CliError::runtime("write json", e))?;
    println!("{line}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Classify(c) => emit(&commands::classify(&setup(&c)?)?),
        Command::Map {
            common,
            p_range,
            q_range,
            resolution,
        } => {
            let cfg = setup(&common)?;
            let sweep = match (p_range, q_range, resolution) {
                (None, None, None) => None,
                (p, q, r) => {
                    let base = cfg.map;
                    let pick = |v: Option<(f64, f64)>, d: Option<(f64, f64)>, name: &str| {
                        v.or(d).ok_or_else(|| CliError::Config(format!("missing field `{name}`")))
                    };
                    Some(MapConfig {
                        p_range: pick(p, base.map(|b| b.p_range), "p_range")?,
                        q_range: pick(q, base.map(|b| b.q_range), "q_range")?,
                        resolution: r
                            .or(base.map(|b| b.resolution))
                            .ok_or_else(|| CliError::Config("missing field `resolution`".into()))?,
                    })
                }
            };
            emit(&commands::map(&cfg, sweep)?)
        }
        Command::Simulate { common, refine } => emit(&commands::simulate(&setup(&common)?, refine)?.summary),
        Command::DecayFit(c) => emit(&commands::decay_fit(&setup(&c)?)?),
        Command::VerifyLinear(c) => emit(&commands::verify_linear(&setup(&c)?)?),
        Command::Certify { common, trajectory } => {
            emit(&commands::certify(&setup(&common)?, trajectory.as_deref())?)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("epdt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
