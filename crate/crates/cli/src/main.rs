use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use log::{error, info, warn};

use dyad_ggc::fixtures::{update_fixture, verify_fixture, write_session};
use dyad_ggc::force::CoefficientTable;
use dyad_ggc::io::{ingest, Session};
use dyad_ggc::pipeline::{analyze_session, null_threshold, render_plots, PipelineConfig};
use dyad_ggc::sim::SessionConfig;
use dyad_ggc::surrogate::DEFAULT_N_PERM;
use dyad_ggc::Error;

const EXIT_PARTIAL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

/// Directional force coupling in dyads: spectral Granger-Geweke causality
/// with permutation thresholds, band edges and behavioral metrics.
#[derive(Parser)]
#[command(name = "dyad-ggc", version)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline on a session directory and write a report.
    Analyze {
        /// Directory with manifest.toml and trial CSVs.
        #[arg(long)]
        input: PathBuf,
        /// Pipeline config (TOML). Defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the surrogate seed of the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate synthetic trials with known coupling.
    Simulate {
        /// Session config (TOML): `dyads` plus a `[sim]` table.
        #[arg(long)]
        config: PathBuf,
        /// Trials per dyad.
        #[arg(long)]
        trials: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the permutation threshold of a session.
    Surrogate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_N_PERM)]
        n_perm: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Threshold CSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Pipeline config for preprocessing and estimation settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Redraw the SVG plots of a report directory from its CSV tables.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Rerun a pinned fixture and compare its digests.
    VerifyFixture {
        id: String,
        #[arg(long, default_value = "fixtures")]
        fixtures: PathBuf,
        /// Rewrite the stored digests instead of checking them.
        #[arg(long)]
        update: bool,
    },
}

/// Failures that stop a command, with their exit status.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::Parse { .. }
            | Error::NotFound(_)
            | Error::InvalidBand { .. }
            | Error::InvalidMass(_)
            | Error::InvalidCutoff { .. }
            | Error::InvalidRatio { .. } => Failure::Config(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    Ok(match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    })
}

fn load_session(input: &Path, cfg: &PipelineConfig) -> Result<Session, Failure> {
    let table = match &cfg.coefficient_table {
        Some(p) => CoefficientTable::from_path(p)?,
        None => CoefficientTable::de_leva(),
    };
    let session = ingest(input, &table)?;
    for f in &session.failures {
        warn!("{}: {}", f.file, f.error);
    }
    Ok(session)
}

fn analyze(input: &Path, config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<u8, Failure> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.surrogate.seed = s;
    }
    let session = load_session(input, &cfg)?;
    let report = analyze_session(&session, &cfg)?;
    report.write(out)?;
    for d in &report.dyads {
        let high = d.influence.get(1);
        println!(
            "{}\tdelta_high={}\tab={}\tba={}{}",
            d.dyad_id,
            high.map_or("-".into(), |b| format!("{:.6}", b.delta)),
            high.map_or("-".into(), |b| format!("{:.6}", b.integral_ab)),
            high.map_or("-".into(), |b| format!("{:.6}", b.integral_ba)),
            if d.excluded { "\texcluded" } else { "" }
        );
    }
    if let Some(b) = &report.bands {
        println!("bands\tf1={}\tf2={}", b.boundaries.f1, b.boundaries.f2);
    }
    for f in &report.failures {
        error!("{} failed at {}: {}", f.dyad_id, f.stage, f.error);
    }
    info!("report written to {}", out.display());
    Ok(report.exit_code() as u8)
}

fn simulate(config: &Path, trials: usize, out: &Path) -> Result<u8, Failure> {
    let cfg = SessionConfig::load(config)?;
    let files = write_session(&cfg.sim, cfg.dyads, trials, out)?;
    println!("{} trial files and manifest written to {}", files.len() - 1, out.display());
    Ok(0)
}

fn surrogate(input: &Path, n_perm: usize, seed: u64, out: &Path, config: Option<&Path>) -> Result<u8, Failure> {
    let mut cfg = load_config(config)?;
    cfg.surrogate.n_perm = n_perm;
    cfg.surrogate.seed = seed;
    cfg.validate()?;
    let session = load_session(input, &cfg)?;
    let thr = null_threshold(&session.trials, &cfg)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))
            .map_err(Failure::Runtime)?;
    }
    let f = fs::File::create(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(Failure::Runtime)?;
    thr.write_csv(std::io::BufWriter::new(f))?;
    println!("threshold from {} surrogate spectra written to {}", thr.n_perm, out.display());
    Ok(u8::from(!session.failures.is_empty()) * EXIT_PARTIAL)
}

fn verify(id: &str, root: &Path, update: bool) -> Result<u8, Failure> {
    if update {
        let n = update_fixture(root, id)?;
        println!("{id}: {n} digests updated");
        return Ok(0);
    }
    let report = verify_fixture(root, id)?;
    if report.passed() {
        println!("{id}: pass ({} files)", report.files.len());
        Ok(0)
    } else {
        println!("{id}: FAIL");
        for line in report.diff() {
            println!("  {line}");
        }
        Ok(EXIT_PARTIAL)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Analyze { input, config, out, seed } => analyze(input, config.as_deref(), out, *seed),
        Command::Simulate { config, trials, out } => simulate(config, *trials, out),
        Command::Surrogate {
            input,
            n_perm,
            seed,
            out,
            config,
        } => surrogate(input, *n_perm, *seed, out, config.as_deref()),
        Command::Report { dir } => render_plots(dir)
            .map(|n| {
                println!("{n} plots written to {}", dir.join("plots").display());
                0
            })
            .map_err(Failure::from),
        Command::VerifyFixture { id, fixtures, update } => verify(id, fixtures, *update),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_PARTIAL)
        }
    }
}
