use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use robustfit_cli::commands;
use robustfit_cli::settings::{Method, Overrides};

/// Robust kernel registration: datasets, single runs, benchmarks and
/// partition tables. Set ROBUSTFIT_TABLE_CACHE to choose the table cache
/// directory.
#[derive(Parser)]
#[command(name = "robustfit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic registration dataset.
    Generate {
        /// JSON config: {"version": 1, "n_points": ..., "seed": ...}.
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Register one dataset and report the learned kernel trace.
    Register {
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        /// Residual scale s; residuals are divided by it.
        #[arg(long)]
        scale: Option<f64>,
        /// Shape grid, `start:step:stop` or a comma list.
        #[arg(long, allow_hyphen_values = true)]
        alpha_grid: Option<String>,
        /// Scale grid, `start:step:stop` or a comma list.
        #[arg(long)]
        c_grid: Option<String>,
        /// Truncation bound of the partition integral.
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        max_outer: Option<usize>,
        /// Gauss-Newton steps per kernel refit.
        #[arg(long)]
        gn_steps: Option<usize>,
        #[arg(long)]
        huber_k: Option<f64>,
        /// Initial Geman-McClure scale for gnc.
        #[arg(long)]
        gnc_mu0: Option<f64>,
        /// JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every (trial, method, scale) cell of a suite.
    Benchmark {
        /// Suite JSON.
        #[arg(long)]
        suite: PathBuf,
        /// Per-row CSV; aggregate and settings files are written beside it.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the suite base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for plot-ready CSVs.
        #[arg(long)]
        plot_dir: Option<PathBuf>,
    },
    /// Export a partition table as CSV.
    Table {
        #[arg(long, allow_hyphen_values = true, default_value = "-4:0.25:2")]
        alpha_grid: String,
        #[arg(long, default_value = "0.05:0.05:2")]
        c_grid: String,
        #[arg(long, default_value_t = 10.0)]
        tau: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate { config, out, seed } => {
            let meta = commands::generate(&config, &out, seed)?;
            println!(
                "wrote {} (n={}, seed={}, {} outlier pairs, noise sigma {})",
                out.display(),
                meta.n_points,
                meta.seed,
                meta.outlier_count,
                meta.noise_sigma
            );
        }
        Command::Register {
            data,
            method,
            scale,
            alpha_grid,
            c_grid,
            tau,
            max_outer,
            gn_steps,
            huber_k,
            gnc_mu0,
            out,
        } => {
            let overrides = Overrides {
                scale,
                alpha_grid,
                c_grid,
                tau,
                max_outer,
                gn_steps,
                huber_k,
                gnc_mu0,
            };
            let report = commands::register(&data, method, &overrides, out.as_deref())?;
            print!("{}", report.summary());
        }
        Command::Benchmark {
            suite,
            out,
            seed,
            plot_dir,
        } => {
            let report = commands::benchmark(&suite, &out, seed, plot_dir.as_deref())?;
            commands::print_benchmark(&report);
        }
        Command::Table {
            alpha_grid,
            c_grid,
            tau,
            out,
        } => {
            let table = commands::table(&alpha_grid, &c_grid, tau, &out)?;
            let (na, nc) = table.shape();
            println!("wrote {} ({} rows)", out.display(), na * nc);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
