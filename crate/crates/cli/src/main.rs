use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use conecraft::harness::{parse_config_with, run, ExperimentConfig, RunOptions};
use conecraft::simulate::{fmt_f64, read_path_csv};
use conecraft::skorokhod::{reflect_half_line, solve_sp};
use conecraft::{Error, PolyhedralCone};

const SOLVER_REFINE: f64 = 1e-3;

#[derive(Parser)]
#[command(name = "conecraft", version, about = "Reflected diffusions in polyhedral cones")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config; exit 0 on PASS or completion, 2 when
    /// INCONCLUSIVE, 1 on FAIL or error.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config's `output`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Master seed (overrides the config's `seed`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parse and validate a config and print it with defaults filled in.
    Validate { config: PathBuf },
    /// Reference computations for cross-checks.
    Oracle {
        #[command(subcommand)]
        oracle: Oracle,
    },
}

#[derive(Subcommand)]
enum Oracle {
    /// One-dimensional reflection at zero of a piecewise-linear path given
    /// as `t,value` rows. Prints `t,psi,phi,eta` and the largest deviation
    /// from the general solver on stderr.
    Sp1d { path: PathBuf },
}

fn load(config: &Path, seed: Option<u64>) -> anyhow::Result<ExperimentConfig> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    match parse_config_with(&text, seed) {
        Ok(c) => Ok(c),
        Err(Error::Config(errors)) => {
            for e in &errors {
                eprintln!("{}: {e}", config.display());
            }
            bail!("{} config error(s)", errors.len())
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_run(config: PathBuf, out: Option<PathBuf>, threads: Option<usize>, seed: Option<u64>) -> anyhow::Result<i32> {
    if let Some(n) = threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let parsed = load(&config, seed)?;
    let base_dir = config.parent().map(Path::to_path_buf).unwrap_or_default();
    let outcome = run(&parsed, &RunOptions { out_dir: out, base_dir })?;
    let m = &outcome.manifest;
    // The summary is informational; a closed stdout must not change the
    // exit status of a finished run.
    let mut out = io::stdout().lock();
    let _ = writeln!(out, "{} {} ({:.2} s)", parsed.kind.name(), m.status, m.wall_clock_seconds);
    for f in &m.files {
        let _ = writeln!(out, "  {}  {}", f.sha256, outcome.out_dir.join(&f.name).display());
    }
    Ok(m.exit_code)
}

fn cmd_validate(config: PathBuf) -> anyhow::Result<i32> {
    let parsed = load(&config, None)?;
    writeln!(io::stdout().lock(), "{:#}", parsed.to_json())?;
    Ok(0)
}

fn cmd_sp1d(path: PathBuf) -> anyhow::Result<i32> {
    let file = fs::File::open(&path).with_context(|| format!("reading {}", path.display()))?;
    let psi = read_path_csv(BufReader::new(file))?;
    if psi.dim() != 1 {
        bail!("sp1d needs a one-dimensional path, got {} value columns", psi.dim());
    }
    let values: Vec<f64> = (0..psi.len()).map(|i| psi.value(i)[0]).collect();
    let (phi, eta) = reflect_half_line(&values);
    // The general solver needs psi(0) in the cone; the formula does not.
    let deviation = solve_sp(&PolyhedralCone::orthant(1), &psi, SOLVER_REFINE).ok().map(|solved| {
        psi.times()
            .iter()
            .zip(&phi)
            .map(|(&t, &p)| (solved.phi_eval(t)[0] - p).abs())
            .fold(0.0, f64::max)
    });
    let stdout = io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "t,psi,phi,eta")?;
    for (i, &t) in psi.times().iter().enumerate() {
        writeln!(out, "{},{},{},{}", fmt_f64(t), fmt_f64(values[i]), fmt_f64(phi[i]), fmt_f64(eta[i]))?;
    }
    match deviation {
        Some(d) => eprintln!("max |oracle - solver| at breakpoints: {d:.3e}"),
        None => eprintln!("path starts below zero; solver comparison skipped"),
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            threads,
            seed,
        } => cmd_run(config, out, threads, seed),
        Command::Validate { config } => cmd_validate(config),
        Command::Oracle {
            oracle: Oracle::Sp1d { path },
        } => cmd_sp1d(path),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
