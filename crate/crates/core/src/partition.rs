//! Truncated normalization of the loss family and likelihood-based grid
//! search over shape and scale.
//!
//! `e^{-rho(x, alpha, c)}` is normalized on `[-tau, tau]`:
//!
//! ```text
//! Z(alpha, c) = integral_{-tau}^{tau} exp(-rho(x, alpha, c)) dx
//! nll(x; alpha, c) = sum_i rho(x_i, alpha, c) + N log Z(alpha, c)
//! ```
//!
//! `Z` is tabulated once over a [`GridSpec`] in log domain; the shape and
//! scale fits are then exact argmins over one grid row or column.

use std::collections::hash_map::DefaultHasher;
use std::fs;
use std::hash::{Hash, Hasher};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::kernel::KernelParams;

/// Environment variable that overrides the partition table cache directory.
pub const CACHE_ENV: &str = "ROBUSTFIT_TABLE_CACHE";

/// Two grid values closer than this are the same grid point.
const GRID_MATCH_TOL: f64 = 1e-9;

/// NLL values within this distance of the minimum are ties.
pub const TIE_TOL: f64 = 1e-12;

const CACHE_VERSION: u32 = 1;

/// Values `start, start + step, ..., stop` with round-off trimmed to 1e-12.
pub fn grid_range(start: f64, step: f64, stop: f64) -> Result<Vec<f64>> {
    if !(start.is_finite() && step.is_finite() && stop.is_finite()) || step <= 0.0 || stop < start
    {
        return Err(domain(format!("invalid range {start}:{step}:{stop}")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    alpha_values: Vec<f64>,
    c_values: Vec<f64>,
}

impl GridSpec {
    pub fn new(alpha_values: Vec<f64>, c_values: Vec<f64>) -> Result<Self> {
        check_axis("alpha", &alpha_values)?;
        check_axis("c", &c_values)?;
        // Validates alpha <= 2 and c > 0 through the kernel constructor.
        for &a in &alpha_values {
            KernelParams::new(a, c_values[0], 1.0)?;
        }
        for &c in &c_values {
            KernelParams::new(alpha_values[0], c, 1.0)?;
        }
        Ok(Self {
            alpha_values,
            c_values,
        })
    }

    pub fn alpha_values(&self) -> &[f64] {
        &self.alpha_values
    }

    pub fn c_values(&self) -> &[f64] {
        &self.c_values
    }

    pub fn alpha_index(&self, alpha: f64) -> Option<usize> {
        find(&self.alpha_values, alpha)
    }

    pub fn c_index(&self, c: f64) -> Option<usize> {
        find(&self.c_values, c)
    }

    pub fn contains(&self, alpha: f64, c: f64) -> bool {
        self.alpha_index(alpha).is_some() && self.c_index(c).is_some()
    }
}

fn check_axis(name: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(domain(format!("{name} grid is empty")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(domain(format!("{name} grid contains NaN")));
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(domain(format!("{name} grid must be strictly increasing")));
    }
    Ok(())
}

fn find(values: &[f64], v: f64) -> Option<usize> {
    values
        .iter()
        .position(|&g| g == v || (g - v).abs() <= GRID_MATCH_TOL)
}

/// Composite Simpson rule on a fixed, odd number of uniform nodes.
///
/// The error estimate compares against the same rule on every other node
/// (Richardson, order 4); a relative estimate above `rel_tol` is an error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub nodes: usize,
    pub rel_tol: f64,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            nodes: 4001,
            rel_tol: 1e-6,
        }
    }
}

impl Quadrature {
    fn validate(&self) -> Result<()> {
        if self.nodes < 5 || !(self.nodes - 1).is_multiple_of(4) {
            return Err(domain(format!(
                "quadrature node count must be 4k + 1 and at least 5, got {}",
                self.nodes
            )));
        }
        if !(self.rel_tol > 0.0) {
            return Err(domain("quadrature tolerance must be positive"));
        }
        Ok(())
    }

    /// Returns `(integral, estimated relative error)`.
    fn simpson(&self, lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
        let intervals = self.nodes - 1;
        let h = (hi - lo) / intervals as f64;
        let values: Vec<f64> = (0..self.nodes).map(|i| f(lo + i as f64 * h)).collect();
        let fine = simpson_sum(&values, 1) * h / 3.0;
        let coarse = simpson_sum(&values, 2) * 2.0 * h / 3.0;
        let estimate = (fine - coarse).abs() / 15.0 / fine.abs();
        (fine, estimate)
    }
}

fn simpson_sum(values: &[f64], stride: usize) -> f64 {
    let n = (values.len() - 1) / stride;
    let mut sum = values[0] + values[n * stride];
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * values[k * stride];
    }
    sum
}

/// Truncated normalization constant with the default quadrature.
pub fn z_hat(alpha: f64, c: f64, tau: f64) -> Result<f64> {
    z_hat_with(alpha, c, tau, &Quadrature::default())
}

pub fn z_hat_with(alpha: f64, c: f64, tau: f64, quad: &Quadrature) -> Result<f64> {
    quad.validate()?;
    let p = KernelParams::new(alpha, c, tau)?;
    let (value, estimate) = quad.simpson(-tau, tau, |x| (-p.rho(x)).exp());
    if !(value.is_finite() && value > 0.0) || estimate > quad.rel_tol {
        return Err(Error::Quadrature {
            alpha,
            c,
            tau,
            nodes: quad.nodes,
            estimate,
            tolerance: quad.rel_tol,
        });
    }
    Ok(value)
}

/// `log Z(alpha, c)` over a grid. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionTable {
    grid: GridSpec,
    tau: f64,
    quadrature: Quadrature,
    /// Row-major: `log_z[i * n_c + j]` for alpha index `i`, c index `j`.
    log_z: Vec<f64>,
}

pub fn build_table(grid: &GridSpec, tau: f64) -> Result<PartitionTable> {
    PartitionTable::build(grid, tau, Quadrature::default())
}

impl PartitionTable {
    pub fn build(grid: &GridSpec, tau: f64, quadrature: Quadrature) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(domain(format!("tau must be positive, got {tau}")));
        }
        quadrature.validate()?;
        let n_c = grid.c_values.len();
        let log_z = (0..grid.alpha_values.len() * n_c)
            .into_par_iter()
            .map(|k| {
                let alpha = grid.alpha_values[k / n_c];
                let c = grid.c_values[k % n_c];
                z_hat_with(alpha, c, tau, &quadrature).map(f64::ln)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(Self {
            grid: grid.clone(),
            tau,
            quadrature,
            log_z,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn quadrature(&self) -> Quadrature {
        self.quadrature
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.grid.alpha_values.len(), self.grid.c_values.len())
    }

    pub fn log_z(&self, alpha_index: usize, c_index: usize) -> f64 {
        self.log_z[alpha_index * self.grid.c_values.len() + c_index]
    }

    pub fn params(&self, alpha_index: usize, c_index: usize) -> KernelParams {
        KernelParams::new(
            self.grid.alpha_values[alpha_index],
            self.grid.c_values[c_index],
            self.tau,
        )
        .expect("grid points are validated at construction")
    }

    fn index(&self, alpha: f64, c: f64) -> Result<(usize, usize)> {
        match (self.grid.alpha_index(alpha), self.grid.c_index(c)) {
            (Some(i), Some(j)) => Ok((i, j)),
            _ => Err(Error::OffGrid { alpha, c }),
        }
    }

    /// NLL at grid indices. Residuals are assumed non-empty and finite.
    pub fn nll_at(&self, residuals: &[f64], alpha_index: usize, c_index: usize) -> f64 {
        let p = self.params(alpha_index, c_index);
        let cost: f64 = residuals.iter().map(|&x| p.rho(x)).sum();
        cost + residuals.len() as f64 * self.log_z(alpha_index, c_index)
    }

    /// Same grid, truncation and quadrature settings.
    pub fn matches(&self, grid: &GridSpec, tau: f64, quadrature: &Quadrature) -> bool {
        self.grid == *grid && self.tau == tau && self.quadrature == *quadrature
    }

    /// CSV dump: a `#` settings line, then `alpha,c,log_z` rows in alpha-major order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# partition-table v{CACHE_VERSION} tau={} nodes={} rel_tol={}",
            self.tau, self.quadrature.nodes, self.quadrature.rel_tol
        )?;
        writeln!(out, "alpha,c,log_z")?;
        for (i, &alpha) in self.grid.alpha_values.iter().enumerate() {
            for (j, &c) in self.grid.c_values.iter().enumerate() {
                writeln!(out, "{alpha},{c},{}", self.log_z(i, j))?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut lines = BufReader::new(input).lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| parse_err(1, "empty table file"))?;
        let (tau, quadrature) = parse_settings(&header)?;
        match lines.next().transpose()? {
            Some(h) if h.trim() == "alpha,c,log_z" => {}
            _ => return Err(parse_err(2, "expected column header alpha,c,log_z")),
        }
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            let line = line?;
            let line_no = k + 3;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(parse_err(line_no, "expected 3 fields"));
            }
            let mut parsed = [0.0; 3];
            for (slot, field) in parsed.iter_mut().zip(&fields) {
                *slot = field
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(line_no, &format!("bad number {field:?}")))?;
            }
            rows.push(parsed);
        }
        let mut alphas: Vec<f64> = Vec::new();
        let mut cs: Vec<f64> = Vec::new();
        for r in &rows {
            if !alphas.contains(&r[0]) {
                alphas.push(r[0]);
            }
            if !cs.contains(&r[1]) {
                cs.push(r[1]);
            }
        }
        let grid = GridSpec::new(alphas, cs)?;
        let n_c = grid.c_values.len();
        if rows.len() != grid.alpha_values.len() * n_c {
            return Err(parse_err(0, "table rows do not form a full grid"));
        }
        let mut log_z = vec![f64::NAN; rows.len()];
        for r in &rows {
            let i = grid.alpha_index(r[0]).expect("collected above");
            let j = grid.c_index(r[1]).expect("collected above");
            log_z[i * n_c + j] = r[2];
        }
        if log_z.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(0, "table has missing or non-finite entries"));
        }
        Ok(Self {
            grid,
            tau,
            quadrature,
            log_z,
        })
    }
}

fn parse_err(line: usize, message: &str) -> Error {
    Error::Parse {
        line,
        message: message.to_string(),
    }
}

fn parse_settings(header: &str) -> Result<(f64, Quadrature)> {
    let rest = header
        .strip_prefix(&format!("# partition-table v{CACHE_VERSION} "))
        .ok_or_else(|| parse_err(1, "missing or unsupported partition-table header"))?;
    let mut tau = None;
    let mut nodes = None;
    let mut rel_tol = None;
    for item in rest.split_whitespace() {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| parse_err(1, &format!("bad setting {item:?}")))?;
        let bad = || parse_err(1, &format!("bad value for {key}"));
        match key {
            "tau" => tau = Some(value.parse::<f64>().map_err(|_| bad())?),
            "nodes" => nodes = Some(value.parse::<usize>().map_err(|_| bad())?),
            "rel_tol" => rel_tol = Some(value.parse::<f64>().map_err(|_| bad())?),
            _ => return Err(parse_err(1, &format!("unknown setting {key}"))),
        }
    }
    match (tau, nodes, rel_tol) {
        (Some(tau), Some(nodes), Some(rel_tol)) => Ok((tau, Quadrature { nodes, rel_tol })),
        _ => Err(parse_err(1, "header must set tau, nodes and rel_tol")),
    }
}

/// On-disk cache of built tables, one file per (grid, tau, quadrature).
#[derive(Debug, Clone)]
pub struct TableCache {
    dir: PathBuf,
}

impl TableCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// `$ROBUSTFIT_TABLE_CACHE` if set, otherwise a directory under the system temp dir.
    pub fn from_env() -> Self {
        match std::env::var_os(CACHE_ENV) {
            Some(dir) if !dir.is_empty() => Self::new(dir),
            _ => Self::new(std::env::temp_dir().join("robustfit-partition-cache")),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, grid: &GridSpec, tau: f64, quadrature: &Quadrature) -> PathBuf {
        let mut hasher = DefaultHasher::new();
        for v in grid.alpha_values.iter().chain(&grid.c_values) {
            v.to_bits().hash(&mut hasher);
        }
        grid.alpha_values.len().hash(&mut hasher);
        tau.to_bits().hash(&mut hasher);
        quadrature.nodes.hash(&mut hasher);
        quadrature.rel_tol.to_bits().hash(&mut hasher);
        self.dir
            .join(format!("partition-v{CACHE_VERSION}-{:016x}.csv", hasher.finish()))
    }

    /// Loads a matching cached table or builds and stores a fresh one.
    /// Unreadable or stale cache files are rebuilt; write failures are ignored.
    pub fn load_or_build(
        &self,
        grid: &GridSpec,
        tau: f64,
        quadrature: Quadrature,
    ) -> Result<PartitionTable> {
        let path = self.path_for(grid, tau, &quadrature);
        if let Ok(file) = fs::File::open(&path) {
            if let Ok(table) = PartitionTable::read_csv(file) {
                if table.matches(grid, tau, &quadrature) {
                    return Ok(table);
                }
            }
        }
        let table = PartitionTable::build(grid, tau, quadrature)?;
        let _ = fs::create_dir_all(&self.dir).and_then(|_| {
            let tmp = path.with_extension(format!("tmp{}", std::process::id()));
            let mut buf = Vec::new();
            table.write_csv(&mut buf).map_err(std::io::Error::other)?;
            fs::write(&tmp, buf)?;
            fs::rename(&tmp, &path)
        });
        Ok(table)
    }
}

fn check_residuals(residuals: &[f64]) -> Result<()> {
    if residuals.is_empty() {
        return Err(domain("residual list is empty"));
    }
    if let Some(x) = residuals.iter().find(|x| !x.is_finite()) {
        return Err(domain(format!("residual must be finite, got {x}")));
    }
    Ok(())
}

/// Negative log-likelihood of `residuals` under the truncated density at an on-grid `(alpha, c)`.
pub fn nll(residuals: &[f64], alpha: f64, c: f64, table: &PartitionTable) -> Result<f64> {
    check_residuals(residuals)?;
    let (i, j) = table.index(alpha, c)?;
    Ok(table.nll_at(residuals, i, j))
}

/// Index of the minimum; ties within [`TIE_TOL`] go to the value closest to
/// `current`, then to the larger value.
pub(crate) fn argmin_with_ties(nlls: &[f64], values: &[f64], current: f64) -> usize {
    let best = nlls.iter().copied().fold(f64::INFINITY, f64::min);
    let mut chosen: Option<usize> = None;
    for (k, &v) in nlls.iter().enumerate() {
        if v > best + TIE_TOL {
            continue;
        }
        chosen = Some(match chosen {
            None => k,
            Some(prev) => {
                let d_prev = (values[prev] - current).abs();
                let d_new = (values[k] - current).abs();
                if d_new < d_prev || (d_new == d_prev && values[k] > values[prev]) {
                    k
                } else {
                    prev
                }
            }
        });
    }
    chosen.expect("grid axes are non-empty")
}

/// Shape minimizing the NLL at fixed on-grid `c`. `current_alpha` breaks ties.
pub fn fit_alpha(
    residuals: &[f64],
    c: f64,
    current_alpha: f64,
    table: &PartitionTable,
) -> Result<f64> {
    check_residuals(residuals)?;
    let j = table
        .grid
        .c_index(c)
        .ok_or(Error::OffGrid { alpha: current_alpha, c })?;
    let nlls: Vec<f64> = (0..table.grid.alpha_values.len())
        .map(|i| table.nll_at(residuals, i, j))
        .collect();
    let i = argmin_with_ties(&nlls, &table.grid.alpha_values, current_alpha);
    Ok(table.grid.alpha_values[i])
}

/// Scale minimizing the NLL at fixed on-grid `alpha`. `current_c` breaks ties.
pub fn fit_c(residuals: &[f64], alpha: f64, current_c: f64, table: &PartitionTable) -> Result<f64> {
    check_residuals(residuals)?;
    let i = table
        .grid
        .alpha_index(alpha)
        .ok_or(Error::OffGrid { alpha, c: current_c })?;
    let nlls: Vec<f64> = (0..table.grid.c_values.len())
        .map(|j| table.nll_at(residuals, i, j))
        .collect();
    let j = argmin_with_ties(&nlls, &table.grid.c_values, current_c);
    Ok(table.grid.c_values[j])
}

/// Alternates [`fit_alpha`] and [`fit_c`] from `(alpha, c)` until neither
/// changes or `max_rounds` is reached. Returns the final pair.
pub fn fit_alternating(
    residuals: &[f64],
    mut alpha: f64,
    mut c: f64,
    table: &PartitionTable,
    max_rounds: usize,
) -> Result<(f64, f64)> {
    for _ in 0..max_rounds {
        let next_alpha = fit_alpha(residuals, c, alpha, table)?;
        let next_c = fit_c(residuals, next_alpha, c, table)?;
        let done = next_alpha == alpha && next_c == c;
        alpha = next_alpha;
        c = next_c;
        if done {
            break;
        }
    }
    Ok((alpha, c))
}
