use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use g2x::inference::Propagation;
use g2x::scenario::{
    cmd_analyze, cmd_correlate, cmd_simulate, cmd_sweep, region_table, write_sweep_table, AnalysisOptions,
    ScenarioConfig, SweepAxis,
};
use g2x::Error;

/// Coherent-fraction measurement from interferometric photon correlations.
#[derive(Parser)]
#[command(name = "g2x", version)]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write both detector streams as PTS1 files.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output prefix; files are <prefix>_A.pts and <prefix>_B.pts.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Histogram the time differences between two PTS1 streams.
    Correlate {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value = "2e-9")]
        bin_width: f64,
        #[arg(long, default_value = "2e-6")]
        window: f64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Fit the zero-delay dip of a histogram and bound the coherent fraction.
    Analyze {
        histogram: PathBuf,
        /// Interferometer delay whose bunching features are excluded; 0 disables.
        #[arg(long, default_value = "900e-9")]
        delta: f64,
        #[arg(long, default_value_t = 0.9)]
        confidence: f64,
        /// Largest |tau| used in the fit.
        #[arg(long)]
        window: Option<f64>,
        /// Propagate with this many Monte-Carlo samples instead of quadrature.
        #[arg(long)]
        monte_carlo: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Result record (TOML); printed to stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Plot data: tau, g, sigma, fitted curve, included flag.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Run a scenario over a list of values of one parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// One of rho, r_alpha, tau_c, rate.
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        confidence: Option<f64>,
        /// Table output; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Allowed region of the uncorrelated g2(0) versus g2x(0).
    Region {
        #[arg(long, default_value_t = 301)]
        points: usize,
        #[arg(long, default_value_t = 1.5)]
        max: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonConvergence(_) => 3,
        Error::NonPhysical(_) => 4,
        _ => 2,
    }
}

fn emit(text: &str, output: Option<&Path>) -> g2x::Result<()> {
    match output {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(cli: Cli) -> g2x::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate { config, seed, output } => {
            let mut cfg = ScenarioConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.simulation.seed = s;
            }
            let prefix = output.unwrap_or_else(|| cfg.output.prefix.clone());
            println!("{}", cmd_simulate(&cfg, &prefix)?);
        }
        Command::Correlate {
            a,
            b,
            bin_width,
            window,
            output,
        } => {
            let h = cmd_correlate(&a, &b, bin_width, window, &output)?;
            println!(
                "{} bins, {} pairs, r_A = {:.6e} /s, r_B = {:.6e} /s -> {}",
                h.len(),
                h.counts.iter().sum::<u64>(),
                h.rate_a,
                h.rate_b,
                output.display()
            );
        }
        Command::Analyze {
            histogram,
            delta,
            confidence,
            window,
            monte_carlo,
            seed,
            output,
            plot,
        } => {
            let opts = AnalysisOptions {
                delta: (delta > 0.0).then_some(delta),
                confidence,
                propagation: match monte_carlo {
                    Some(samples) => Propagation::MonteCarlo { samples, seed },
                    None => Propagation::default(),
                },
                fit_window: window,
            };
            let record = cmd_analyze(&histogram, &opts, output.as_deref(), plot.as_deref())?;
            if output.is_none() {
                emit(&record.to_toml_string()?, None)?;
            }
        }
        Command::Sweep {
            config,
            axis,
            values,
            seed,
            delta,
            confidence,
            output,
        } => {
            let mut cfg = ScenarioConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.simulation.seed = s;
            }
            if let Some(d) = delta {
                cfg.interferometer.delay = d;
            }
            if let Some(c) = confidence {
                cfg.fit.confidence = c;
            }
            let rows = cmd_sweep(&cfg, axis, &values)?;
            let mut buf = Vec::new();
            write_sweep_table(axis, &rows, &mut buf)?;
            emit(&String::from_utf8_lossy(&buf), output.as_deref())?;
        }
        Command::Region { points, max, output } => {
            emit(&region_table(points, max)?, output.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
