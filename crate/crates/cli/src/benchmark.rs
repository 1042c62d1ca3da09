//! Multi-trial benchmarks over seeded synthetic instances.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use robustfit::partition::{PartitionTable, TableCache};
use robustfit::registration::{generate_synthetic, rmse, RegistrationInstance, SyntheticConfig};

use crate::report::{trace_rows, KernelState};
use crate::settings::{Method, Overrides, Settings};
use crate::SUPPORTED_VERSION;

/// Suite file. Exactly one of `seeds` and `trials` must be given; `trials`
/// uses seeds `base_seed, base_seed + 1, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suite {
    pub version: u32,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub trials: Option<usize>,
    #[serde(default)]
    pub base_seed: u64,
    /// Instance template; its `seed` is replaced per trial.
    #[serde(default)]
    pub instance: SyntheticConfig,
    pub methods: Vec<Method>,
    #[serde(default = "default_scales")]
    pub scales: Vec<f64>,
    #[serde(default)]
    pub options: Overrides,
}

fn default_scales() -> Vec<f64> {
    vec![1.0]
}

impl Suite {
    pub fn from_json(text: &str) -> Result<Self> {
        let suite: Suite = serde_json::from_str(text)?;
        if suite.version != SUPPORTED_VERSION {
            bail!("unsupported suite version {} (expected {SUPPORTED_VERSION})", suite.version);
        }
        if suite.methods.is_empty() || suite.scales.is_empty() {
            bail!("suite needs at least one method and one scale");
        }
        suite.seed_list(None)?;
        Ok(suite)
    }

    /// Trial seeds; `base_override` replaces `base_seed` for `trials` suites.
    pub fn seed_list(&self, base_override: Option<u64>) -> Result<Vec<u64>> {
        match (&self.seeds, self.trials) {
            (Some(seeds), None) if !seeds.is_empty() => {
                if base_override.is_some() {
                    bail!("--seed cannot be combined with an explicit seed list");
                }
                Ok(seeds.clone())
            }
            (None, Some(n)) if n > 0 => {
                let base = base_override.unwrap_or(self.base_seed);
                Ok((0..n as u64).map(|t| base + t).collect())
            }
            _ => bail!("suite must give either a non-empty 'seeds' list or a positive 'trials' count"),
        }
    }

    pub fn settings(&self, method: Method, scale: f64) -> Result<Settings> {
        let overrides = Overrides {
            scale: Some(scale),
            ..self.options.clone()
        };
        Settings::resolve(method, &overrides)
            .with_context(|| format!("settings for {method} at scale {scale}"))
    }
}

/// One (trial, method, scale) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub trial: usize,
    pub seed: u64,
    pub method: Method,
    pub scale: f64,
    pub alpha_final: Option<f64>,
    pub alpha_min: Option<f64>,
    pub alpha_max: Option<f64>,
    pub c_final: Option<f64>,
    pub c_min: Option<f64>,
    pub c_max: Option<f64>,
    pub mu_final: Option<f64>,
    pub rmse: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub wall_time_ms: f64,
    pub error: String,
}

pub const ROW_COLUMNS: [&str; 16] = [
    "trial", "seed", "method", "scale", "alpha_final", "alpha_min", "alpha_max", "c_final",
    "c_min", "c_max", "mu_final", "rmse", "iterations", "converged", "wall_time_ms", "error",
];

/// Mean over the rows of one (method, scale) that finished without error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub scale: f64,
    pub trials: usize,
    pub failures: usize,
    pub mean_rmse: Option<f64>,
    pub mean_iterations: Option<f64>,
}

pub const AGGREGATE_COLUMNS: [&str; 6] =
    ["method", "scale", "trials", "failures", "mean_rmse", "mean_iterations"];

/// Learned kernel per iteration, for plotting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TracePoint {
    pub trial: usize,
    pub method: Method,
    pub scale: f64,
    pub iteration: usize,
    pub alpha: Option<f64>,
    pub c: Option<f64>,
    pub mu: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub rows: Vec<Row>,
    pub aggregates: Vec<Aggregate>,
    pub trace: Vec<TracePoint>,
    pub settings: Vec<Settings>,
}

fn min_max(values: impl Iterator<Item = f64> + Clone) -> (Option<f64>, Option<f64>) {
    let min = values.clone().reduce(f64::min);
    let max = values.reduce(f64::max);
    (min, max)
}

fn run_cell(
    trial: usize,
    seed: u64,
    settings: &Settings,
    instance: &Result<RegistrationInstance, String>,
    table: Option<&PartitionTable>,
) -> (Row, Vec<TracePoint>) {
    let mut row = Row {
        trial,
        seed,
        method: settings.method,
        scale: settings.residual_scale,
        alpha_final: None,
        alpha_min: None,
        alpha_max: None,
        c_final: None,
        c_min: None,
        c_max: None,
        mu_final: None,
        rmse: None,
        iterations: None,
        converged: None,
        wall_time_ms: 0.0,
        error: String::new(),
    };
    let instance = match instance {
        Ok(i) => i,
        Err(e) => {
            row.error = format!("instance generation failed: {e}");
            return (row, Vec::new());
        }
    };
    let start = Instant::now();
    let outcome = settings.run(instance, table);
    row.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    let solution = match outcome {
        Ok(s) => s,
        Err(e) => {
            row.error = format!("{e:#}");
            return (row, Vec::new());
        }
    };
    let trace = trace_rows(&solution);
    let states: Vec<KernelState> = trace.iter().map(|t| t.kernel).collect();
    let last = states.last().copied().expect("trace has the initial entry");
    (row.alpha_min, row.alpha_max) = min_max(states.iter().filter_map(|k| k.alpha));
    (row.c_min, row.c_max) = min_max(states.iter().filter_map(|k| k.c));
    row.alpha_final = last.alpha;
    row.c_final = last.c;
    row.mu_final = last.mu;
    row.rmse = Some(rmse(&solution.theta, instance));
    row.iterations = Some(solution.iterations);
    row.converged = Some(solution.converged);
    let points = trace
        .iter()
        .map(|t| TracePoint {
            trial,
            method: settings.method,
            scale: settings.residual_scale,
            iteration: t.iteration,
            alpha: t.kernel.alpha,
            c: t.kernel.c,
            mu: t.kernel.mu,
        })
        .collect();
    (row, points)
}

pub fn aggregate(rows: &[Row], methods: &[Method], scales: &[f64]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for &method in methods {
        for &scale in scales {
            let cell: Vec<&Row> = rows
                .iter()
                .filter(|r| r.method == method && r.scale == scale)
                .collect();
            let ok: Vec<&Row> = cell.iter().copied().filter(|r| r.error.is_empty()).collect();
            let mean = |f: &dyn Fn(&Row) -> f64| {
                (!ok.is_empty()).then(|| ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64)
            };
            out.push(Aggregate {
                method,
                scale,
                trials: cell.len(),
                failures: cell.len() - ok.len(),
                mean_rmse: mean(&|r| r.rmse.unwrap_or(f64::NAN)),
                mean_iterations: mean(&|r| r.iterations.unwrap_or(0) as f64),
            });
        }
    }
    out
}

/// Runs every (trial, method, scale) cell. Cells run in parallel; the
/// returned rows are ordered by trial, then method and scale as listed.
pub fn run_suite(suite: &Suite, base_seed: Option<u64>, cache: &TableCache) -> Result<BenchmarkReport> {
    let seeds = suite.seed_list(base_seed)?;
    let mut settings = Vec::new();
    for &method in &suite.methods {
        for &scale in &suite.scales {
            settings.push(suite.settings(method, scale)?);
        }
    }
    // Tables depend on the method grid only, not on the scale.
    let mut tables: BTreeMap<Method, PartitionTable> = BTreeMap::new();
    for s in &settings {
        if let Entry::Vacant(slot) = tables.entry(s.method) {
            if let Some(t) = s.load_table(cache)? {
                slot.insert(t);
            }
        }
    }
    let instances: Vec<Result<RegistrationInstance, String>> = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = SyntheticConfig {
                seed,
                ..suite.instance.clone()
            };
            generate_synthetic(&cfg).map_err(|e| e.to_string())
        })
        .collect();

    let cells: Vec<(usize, &Settings)> = (0..seeds.len())
        .flat_map(|t| settings.iter().map(move |s| (t, s)))
        .collect();
    let results: Vec<(Row, Vec<TracePoint>)> = cells
        .par_iter()
        .map(|&(t, s)| run_cell(t, seeds[t], s, &instances[t], tables.get(&s.method)))
        .collect();

    let mut rows = Vec::with_capacity(results.len());
    let mut trace = Vec::new();
    for (row, points) in results {
        rows.push(row);
        trace.extend(points);
    }
    let aggregates = aggregate(&rows, &suite.methods, &suite.scales);
    Ok(BenchmarkReport {
        rows,
        aggregates,
        trace,
        settings,
    })
}

fn write_csv<T: Serialize>(path: &Path, records: &[T], header: &[&str]) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    writer.write_record(header)?;
    for r in records {
        writer.serialize(r)?;
    }
    let bytes = writer.into_inner().context("flushing CSV")?;
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// `results.csv` -> `results_<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("benchmark");
    path.with_file_name(format!("{stem}_{suffix}"))
}

#[derive(Serialize)]
struct RmsePoint {
    trial: usize,
    seed: u64,
    method: Method,
    scale: f64,
    rmse: Option<f64>,
}

#[derive(Serialize)]
struct SettingsFile<'a> {
    version: u32,
    suite: &'a Suite,
    seeds: Vec<u64>,
    settings: &'a [Settings],
}

/// Writes the per-row CSV to `out`, plus `<stem>_aggregate.csv` and
/// `<stem>_settings.json` beside it; plot data goes to `plot_dir`.
pub fn write_report(
    report: &BenchmarkReport,
    suite: &Suite,
    seeds: Vec<u64>,
    out: &Path,
    plot_dir: Option<&Path>,
) -> Result<()> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_csv(out, &report.rows, &ROW_COLUMNS)?;
    write_csv(&sibling(out, "aggregate.csv"), &report.aggregates, &AGGREGATE_COLUMNS)?;
    let settings = SettingsFile {
        version: SUPPORTED_VERSION,
        suite,
        seeds,
        settings: &report.settings,
    };
    let mut json = serde_json::to_vec_pretty(&settings)?;
    json.write_all(b"\n")?;
    fs::write(sibling(out, "settings.json"), json)?;

    if let Some(dir) = plot_dir {
        fs::create_dir_all(dir)?;
        write_csv(
            &dir.join("learned_kernel.csv"),
            &report.trace,
            &["trial", "method", "scale", "iteration", "alpha", "c", "mu"],
        )?;
        let points: Vec<RmsePoint> = report
            .rows
            .iter()
            .map(|r| RmsePoint {
                trial: r.trial,
                seed: r.seed,
                method: r.method,
                scale: r.scale,
                rmse: r.rmse,
            })
            .collect();
        write_csv(
            &dir.join("rmse_per_trial.csv"),
            &points,
            &["trial", "seed", "method", "scale", "rmse"],
        )?;
    }
    Ok(())
}

/// Fixed-width aggregate table for stdout.
pub fn format_aggregates(aggregates: &[Aggregate]) -> String {
    let mut out = format!("{:<10} {:>8} {:>7} {:>9} {:>14}\n", "method", "scale", "trials", "failures", "mean_rmse");
    for a in aggregates {
        let rmse = a.mean_rmse.map_or("-".to_string(), |v| format!("{v:.6e}"));
        out += &format!("{:<10} {:>8} {:>7} {:>9} {:>14}\n", a.method, a.scale, a.trials, a.failures, rmse);
    }
    out
}
