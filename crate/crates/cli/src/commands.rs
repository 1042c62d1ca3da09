use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};

use robustfit::io::{load_instance, save_instance, Metadata};
use robustfit::partition::{GridSpec, PartitionTable, Quadrature, TableCache};
use robustfit::registration::{generate_synthetic, rmse, SyntheticConfig};

use crate::benchmark::{format_aggregates, run_suite, write_report, BenchmarkReport, Suite};
use crate::report::{trace_rows, RegisterReport, RegisterResult, REPORT_VERSION};
use crate::settings::{parse_grid, Method, Overrides, Settings};
use crate::SUPPORTED_VERSION;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Parses a generation config: `{"version": 1, ...instance fields}`.
/// Syntax errors carry line and column; schema errors name the field.
pub fn parse_generate_config(text: &str) -> Result<SyntheticConfig> {
    let mut value: serde_json::Value = serde_json::from_str(text)?;
    let object = value
        .as_object_mut()
        .context("config must be a JSON object")?;
    match object.remove("version").and_then(|v| v.as_u64()) {
        Some(v) if v == SUPPORTED_VERSION as u64 => {}
        Some(v) => bail!("unsupported config version {v} (expected {SUPPORTED_VERSION})"),
        None => bail!("config is missing an integer 'version' field"),
    }
    let cfg: SyntheticConfig = serde_json::from_value(value)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn generate(config: &Path, out: &Path, seed: Option<u64>) -> Result<Metadata> {
    let mut cfg = parse_generate_config(&read(config)?)
        .with_context(|| format!("in config {}", config.display()))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let instance = generate_synthetic(&cfg)?;
    save_instance(out, &instance).with_context(|| format!("writing dataset to {}", out.display()))?;
    Ok(Metadata::for_instance(&instance).expect("generated instances carry metadata"))
}

pub fn register(
    data: &Path,
    method: Method,
    overrides: &Overrides,
    out: Option<&Path>,
) -> Result<RegisterReport> {
    let settings = Settings::resolve(method, overrides)?;
    let (instance, has_truth) =
        load_instance(data).with_context(|| format!("loading dataset {}", data.display()))?;
    let table = settings.load_table(&TableCache::from_env())?;
    let start = Instant::now();
    let solution = settings.run(&instance, table.as_ref())?;
    let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    let report = RegisterReport {
        version: REPORT_VERSION,
        dataset: data.display().to_string(),
        result: RegisterResult {
            rmse: has_truth.then(|| rmse(&solution.theta, &instance)),
            iterations: solution.iterations,
            converged: solution.converged,
            final_kernel: (&solution.final_kernel()).into(),
            pose: (&solution.theta).into(),
            wall_time_ms,
        },
        trace: trace_rows(&solution),
        settings,
    };
    if let Some(path) = out {
        let text = serde_json::to_string_pretty(&report)? + "\n";
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(report)
}

pub fn benchmark(
    suite_path: &Path,
    out: &Path,
    seed: Option<u64>,
    plot_dir: Option<&Path>,
) -> Result<BenchmarkReport> {
    let suite = Suite::from_json(&read(suite_path)?)
        .with_context(|| format!("in suite {}", suite_path.display()))?;
    let report = run_suite(&suite, seed, &TableCache::from_env())?;
    write_report(&report, &suite, suite.seed_list(seed)?, out, plot_dir)?;
    Ok(report)
}

pub fn table(alpha_grid: &str, c_grid: &str, tau: f64, out: &Path) -> Result<PartitionTable> {
    let grid = GridSpec::new(parse_grid(alpha_grid)?, parse_grid(c_grid)?)?;
    let table = PartitionTable::build(&grid, tau, Quadrature::default())?;
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    fs::write(out, buf).with_context(|| format!("writing {}", out.display()))?;
    Ok(table)
}

pub fn print_benchmark(report: &BenchmarkReport) {
    let failed = report.rows.iter().filter(|r| !r.error.is_empty()).count();
    print!("{}", format_aggregates(&report.aggregates));
    if failed > 0 {
        println!("{failed} of {} cells failed; see the error column", report.rows.len());
    }
}
