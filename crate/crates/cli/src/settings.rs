//! Registration methods, their default settings and how to run them.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use robustfit::kernel::BaselineKernel;
use robustfit::partition::{grid_range, GridSpec, PartitionTable, Quadrature, TableCache};
use robustfit::registration::{Pose, RegistrationInstance};
use robustfit::solver::{
    gnc_geman_solve, irls_solve, lsq_solve, rko_solve, srko_solve, Damping, GncSchedule,
    Solution, SolverConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Huber,
    Rko,
    Srko,
    SrkoStar,
    Gnc,
    Lsq,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Huber => "huber",
            Method::Rko => "rko",
            Method::Srko => "srko",
            Method::SrkoStar => "srko-star",
            Method::Gnc => "gnc",
            Method::Lsq => "lsq",
        }
    }

    /// Methods that fit kernel parameters and therefore need a partition table.
    pub fn learns_kernel(self) -> bool {
        matches!(self, Method::Rko | Method::Srko | Method::SrkoStar)
    }

    fn default_c_grid(self) -> Vec<f64> {
        match self {
            Method::Srko => grid_range(1.0, 0.25, 3.0),
            Method::SrkoStar => grid_range(0.05, 0.05, 2.0),
            _ => Ok(vec![1.0]),
        }
        .expect("static range")
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Grid `start:step:stop` (inclusive) or a comma-separated list.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let number = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .with_context(|| format!("invalid number '{}' in grid '{text}'", s.trim()))
    };
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        let [start, step, stop] = parts.as_slice() else {
            bail!("grid range '{text}' must have the form start:step:stop");
        };
        Ok(grid_range(number(start)?, number(step)?, number(stop)?)?)
    } else {
        text.split(',').map(number).collect()
    }
}

/// Optional overrides of the per-method defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    pub scale: Option<f64>,
    pub alpha_grid: Option<String>,
    pub c_grid: Option<String>,
    pub tau: Option<f64>,
    pub max_outer: Option<usize>,
    pub gn_steps: Option<usize>,
    pub huber_k: Option<f64>,
    pub gnc_mu0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GncSettings {
    pub mu0: f64,
    pub factor: f64,
    pub iters_per_stage: usize,
    pub mu_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DampingSettings {
    pub enabled: bool,
    pub first: f64,
    pub increase: f64,
    pub decrease: f64,
    pub max: f64,
}

/// Every knob of one run, resolved. Written into reports verbatim.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub method: Method,
    pub residual_scale: f64,
    #[serde(serialize_with = "crate::report::ser_alphas")]
    pub alpha_grid: Vec<f64>,
    pub c_grid: Vec<f64>,
    pub tau: f64,
    pub quadrature_nodes: usize,
    pub quadrature_rel_tol: f64,
    pub init_alpha: f64,
    pub init_c: f64,
    pub max_outer: usize,
    pub gn_steps_per_outer: usize,
    pub step_tol: f64,
    pub huber_k: f64,
    pub gnc: GncSettings,
    pub damping: DampingSettings,
}

impl Settings {
    pub fn resolve(method: Method, overrides: &Overrides) -> Result<Self> {
        let base = SolverConfig::default();
        let alpha_grid = match &overrides.alpha_grid {
            Some(g) => parse_grid(g)?,
            None => base.grid.alpha_values().to_vec(),
        };
        let c_grid = match &overrides.c_grid {
            Some(g) => parse_grid(g)?,
            None => method.default_c_grid(),
        };
        let gnc = GncSchedule {
            mu0: overrides.gnc_mu0.unwrap_or(base.gnc.mu0),
            ..base.gnc
        };
        let settings = Self {
            method,
            residual_scale: overrides.scale.unwrap_or(1.0),
            alpha_grid,
            c_grid,
            tau: overrides.tau.unwrap_or(base.tau),
            quadrature_nodes: base.quadrature.nodes,
            quadrature_rel_tol: base.quadrature.rel_tol,
            init_alpha: base.init_alpha,
            init_c: base.init_c,
            max_outer: overrides.max_outer.unwrap_or(base.max_outer),
            gn_steps_per_outer: overrides.gn_steps.unwrap_or(base.gn_steps_per_outer),
            step_tol: base.step_tol,
            huber_k: overrides.huber_k.unwrap_or(1.3),
            gnc: GncSettings {
                mu0: gnc.mu0,
                factor: gnc.factor,
                iters_per_stage: gnc.iters_per_stage,
                mu_min: gnc.mu_min,
            },
            damping: DampingSettings {
                enabled: base.damping.enabled,
                first: base.damping.first,
                increase: base.damping.increase,
                decrease: base.damping.decrease,
                max: base.damping.max,
            },
        };
        settings.solver_config()?.validate()?;
        if method == Method::Gnc {
            gnc.validate()?;
        }
        if method == Method::Huber {
            BaselineKernel::huber(settings.huber_k)?;
        }
        Ok(settings)
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        Ok(SolverConfig {
            grid: GridSpec::new(self.alpha_grid.clone(), self.c_grid.clone())?,
            tau: self.tau,
            quadrature: Quadrature {
                nodes: self.quadrature_nodes,
                rel_tol: self.quadrature_rel_tol,
            },
            residual_scale: self.residual_scale,
            init_alpha: self.init_alpha,
            init_c: self.init_c,
            max_outer: self.max_outer,
            gn_steps_per_outer: self.gn_steps_per_outer,
            step_tol: self.step_tol,
            damping: Damping {
                enabled: self.damping.enabled,
                first: self.damping.first,
                increase: self.damping.increase,
                decrease: self.damping.decrease,
                max: self.damping.max,
            },
            gnc: GncSchedule {
                mu0: self.gnc.mu0,
                factor: self.gnc.factor,
                iters_per_stage: self.gnc.iters_per_stage,
                mu_min: self.gnc.mu_min,
            },
        })
    }

    /// Partition table for kernel-learning methods, through the on-disk cache.
    pub fn load_table(&self, cache: &TableCache) -> Result<Option<PartitionTable>> {
        if !self.method.learns_kernel() {
            return Ok(None);
        }
        let cfg = self.solver_config()?;
        let table = cache
            .load_or_build(&cfg.grid, cfg.tau, cfg.quadrature)
            .context("building partition table")?;
        Ok(Some(table))
    }

    /// Registers the instance from the identity pose.
    pub fn run(
        &self,
        instance: &RegistrationInstance,
        table: Option<&PartitionTable>,
    ) -> Result<Solution<Pose>> {
        let cfg = self.solver_config()?;
        let problem = instance.problem()?;
        let start = Pose::identity();
        let need_table = || table.context("kernel-learning method run without a partition table");
        let solution = match self.method {
            Method::Huber => irls_solve(
                &problem,
                start,
                BaselineKernel::huber(self.huber_k)?.into(),
                &cfg,
            )?,
            Method::Rko => rko_solve(&problem, start, &cfg, need_table()?)?,
            Method::Srko | Method::SrkoStar => srko_solve(&problem, start, &cfg, need_table()?)?,
            Method::Gnc => gnc_geman_solve(&problem, start, &cfg)?,
            Method::Lsq => lsq_solve(&problem, start, &cfg)?,
        };
        Ok(solution)
    }
}
