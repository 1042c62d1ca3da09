//! Weighted Gauss-Newton (IRLS) over an abstract residual problem, and the
//! outer loops that choose the kernel for each reweighting pass:
//!
//! - [`irls_solve`]: one fixed kernel throughout.
//! - [`rko_solve`]: refit the shape `alpha` by likelihood at fixed `c`.
//! - [`srko_solve`]: refit `alpha`, then `c`, by likelihood.
//! - [`gnc_geman_solve`]: Geman-McClure with a shrinking scale schedule.
//!
//! Every kernel sees residuals divided by the configured residual scale `s`.

use nalgebra::{DMatrix, DVector};

use crate::error::{domain, Error, Result};
use crate::kernel::{BaselineKernel, Kernel, KernelParams};
use crate::partition::{fit_alpha, fit_c, grid_range, GridSpec, PartitionTable, Quadrature};

/// An estimation problem linearized around a parameter value.
///
/// Residuals come in blocks of [`block_dim`](Self::block_dim) rows. The
/// kernel sees one scalar per block: the value itself for 1-D blocks, the
/// Euclidean norm otherwise. Each block gets one weight.
pub trait ResidualProblem {
    type Param: Clone;

    /// Dimension of the update vector.
    fn dimension(&self) -> usize;

    fn block_dim(&self) -> usize {
        1
    }

    /// Stacked block residuals.
    fn residuals(&self, theta: &Self::Param) -> Result<DVector<f64>>;

    /// Derivative of [`residuals`](Self::residuals) with respect to the update vector.
    fn jacobian(&self, theta: &Self::Param) -> Result<DMatrix<f64>>;

    /// Applies an update of length [`dimension`](Self::dimension).
    fn retract(&self, theta: &Self::Param, delta: &DVector<f64>) -> Self::Param;
}

/// Scalar residuals seen by the kernel, one per block.
pub fn kernel_residuals(block_dim: usize, residuals: &DVector<f64>) -> Vec<f64> {
    if block_dim == 1 {
        residuals.iter().copied().collect()
    } else {
        residuals
            .as_slice()
            .chunks(block_dim)
            .map(|b| b.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }
}

/// `r = A theta - b` over plain vectors.
#[derive(Debug, Clone)]
pub struct LinearProblem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl ResidualProblem for LinearProblem {
    type Param = DVector<f64>;

    fn dimension(&self) -> usize {
        self.a.ncols()
    }

    fn residuals(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.a * theta - &self.b)
    }

    fn jacobian(&self, _theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.a.clone())
    }

    fn retract(&self, theta: &DVector<f64>, delta: &DVector<f64>) -> DVector<f64> {
        theta + delta
    }
}

/// Levenberg damping `lambda * diag(J^T W J)` applied when a step raises the robust cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Damping {
    /// When false every Gauss-Newton step is accepted as computed.
    pub enabled: bool,
    /// First nonzero value tried after a rejected undamped step.
    pub first: f64,
    pub increase: f64,
    pub decrease: f64,
    pub max: f64,
}

impl Default for Damping {
    fn default() -> Self {
        Self {
            enabled: true,
            first: 1e-4,
            increase: 10.0,
            decrease: 0.5,
            max: 1e8,
        }
    }
}

impl Damping {
    pub fn undamped() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

/// Geman-McClure scale schedule: start at `mu0`, divide by `factor` every
/// `iters_per_stage` outer iterations, stop at `mu_min`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GncSchedule {
    pub mu0: f64,
    pub factor: f64,
    pub iters_per_stage: usize,
    pub mu_min: f64,
}

impl Default for GncSchedule {
    fn default() -> Self {
        Self {
            mu0: 1.0,
            factor: 1.4,
            iters_per_stage: 4,
            mu_min: 0.025 * 0.025,
        }
    }
}

impl GncSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_min.is_finite() && self.mu_min > 0.0) {
            return Err(domain("gnc mu_min must be positive"));
        }
        if !(self.mu0.is_finite() && self.mu0 >= self.mu_min) {
            return Err(domain("gnc mu0 must be finite and >= mu_min"));
        }
        if !(self.factor > 1.0) {
            return Err(domain("gnc division factor must exceed 1"));
        }
        if self.iters_per_stage == 0 {
            return Err(domain("gnc iterations per stage must be at least 1"));
        }
        Ok(())
    }

    /// Scale used at 1-based outer iteration `iteration`.
    pub fn mu_at(&self, iteration: usize) -> f64 {
        let stage = (iteration - 1) / self.iters_per_stage;
        let mut mu = self.mu0;
        for _ in 0..stage {
            if mu <= self.mu_min {
                break;
            }
            mu = (mu / self.factor).max(self.mu_min);
        }
        mu
    }

    /// Outer iterations spent before `mu` reaches `mu_min`.
    pub fn ramp_iterations(&self) -> usize {
        let mut mu = self.mu0;
        let mut stages = 0;
        while mu > self.mu_min {
            mu = (mu / self.factor).max(self.mu_min);
            stages += 1;
        }
        stages * self.iters_per_stage
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub grid: GridSpec,
    pub tau: f64,
    pub quadrature: Quadrature,
    /// Residuals are divided by this before fitting and weighting.
    pub residual_scale: f64,
    pub init_alpha: f64,
    pub init_c: f64,
    pub max_outer: usize,
    pub gn_steps_per_outer: usize,
    /// Converged once the last step norm is below this and the kernel is stable.
    pub step_tol: f64,
    pub damping: Damping,
    pub gnc: GncSchedule,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::new(
                grid_range(-4.0, 0.25, 2.0).expect("static range"),
                grid_range(0.05, 0.05, 2.0).expect("static range"),
            )
            .expect("static grid"),
            tau: 10.0,
            quadrature: Quadrature::default(),
            residual_scale: 1.0,
            init_alpha: 2.0,
            init_c: 1.0,
            max_outer: 50,
            gn_steps_per_outer: 1,
            step_tol: 1e-9,
            damping: Damping::default(),
            gnc: GncSchedule::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_scale.is_finite() && self.residual_scale > 0.0) {
            return Err(domain("residual scale must be positive"));
        }
        if self.max_outer == 0 || self.gn_steps_per_outer == 0 {
            return Err(domain("iteration caps must be at least 1"));
        }
        if !(self.step_tol > 0.0) {
            return Err(domain("step tolerance must be positive"));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(domain("tau must be positive"));
        }
        if !self.grid.contains(self.init_alpha, self.init_c) {
            return Err(Error::OffGrid {
                alpha: self.init_alpha,
                c: self.init_c,
            });
        }
        let d = &self.damping;
        if d.enabled && !(d.first > 0.0 && d.increase > 1.0 && d.decrease > 0.0 && d.decrease < 1.0 && d.max >= d.first) {
            return Err(domain("invalid damping schedule"));
        }
        Ok(())
    }

    /// Partition table for this configuration's grid, tau and quadrature.
    pub fn build_table(&self) -> Result<PartitionTable> {
        PartitionTable::build(&self.grid, self.tau, self.quadrature)
    }

    fn check_table(&self, table: &PartitionTable) -> Result<()> {
        if !table.matches(&self.grid, self.tau, &self.quadrature) {
            return Err(domain("partition table does not match the solver configuration"));
        }
        Ok(())
    }

    fn init_kernel(&self) -> Result<KernelParams> {
        KernelParams::new(self.init_alpha, self.init_c, self.tau)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    /// Kernel used for this outer iteration's reweighting.
    pub kernel: Kernel,
    /// Minimized NLL for fitted kernels.
    pub nll: Option<f64>,
    /// Norm of the last update taken in this iteration.
    pub step_norm: f64,
    /// Robust cost on scaled residuals after the update.
    pub cost: f64,
    /// RMS of the unscaled kernel residuals after the update.
    pub residual_rms: f64,
    pub damping: f64,
}

#[derive(Debug, Clone)]
pub struct Solution<T> {
    pub theta: T,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    pub iterations: usize,
    /// Kernel state before the first refit.
    pub initial_kernel: Kernel,
    pub residual_scale: f64,
}

impl<T> Solution<T> {
    pub fn final_kernel(&self) -> Kernel {
        self.trace
            .last()
            .map(|e| e.kernel)
            .unwrap_or(self.initial_kernel)
    }
}

#[derive(Debug, Clone)]
pub struct Step<T> {
    pub theta: T,
    pub delta: DVector<f64>,
}

fn normal_equations(
    jacobian: &DMatrix<f64>,
    residuals: &DVector<f64>,
    weights: &[f64],
    block_dim: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if jacobian.nrows() != residuals.len() || residuals.len() != weights.len() * block_dim {
        return Err(domain(format!(
            "dimension mismatch: jacobian {}x{}, {} residual rows, {} weights of block size {block_dim}",
            jacobian.nrows(),
            jacobian.ncols(),
            residuals.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(domain(format!("weights must be positive and finite, got {w}")));
    }
    let mut wj = jacobian.clone();
    let mut wr = residuals.clone();
    for (row, (mut jrow, r)) in wj.row_iter_mut().zip(wr.iter_mut()).enumerate() {
        let w = weights[row / block_dim];
        jrow *= w;
        *r *= w;
    }
    let h = jacobian.transpose() * wj;
    let g = jacobian.transpose() * wr;
    Ok((h, g))
}

fn solve_damped(h: &DMatrix<f64>, g: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let mut a = h.clone();
    if lambda > 0.0 {
        for i in 0..a.nrows() {
            a[(i, i)] += lambda * h[(i, i)];
        }
    }
    a.cholesky().map(|ch| -ch.solve(g))
}

/// One weighted Gauss-Newton update
/// `theta' = theta (+) -(J^T W J + lambda diag(J^T W J))^{-1} J^T W r`
/// with one weight per residual block.
pub fn irls_step<P: ResidualProblem>(
    problem: &P,
    theta: &P::Param,
    weights: &[f64],
    lambda: f64,
) -> Result<Step<P::Param>> {
    let r = problem.residuals(theta)?;
    let j = problem.jacobian(theta)?;
    let (h, g) = normal_equations(&j, &r, weights, problem.block_dim())?;
    let delta = solve_damped(&h, &g, lambda).ok_or(Error::Singular { damping: lambda })?;
    Ok(Step {
        theta: problem.retract(theta, &delta),
        delta,
    })
}

struct Evaluated {
    residuals: DVector<f64>,
    scaled: Vec<f64>,
}

fn evaluate<P: ResidualProblem>(
    problem: &P,
    theta: &P::Param,
    scale: f64,
    iteration: usize,
) -> Result<Evaluated> {
    let residuals = problem.residuals(theta)?;
    let scaled: Vec<f64> = kernel_residuals(problem.block_dim(), &residuals)
        .into_iter()
        .map(|x| x / scale)
        .collect();
    if scaled.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteResidual { iteration });
    }
    Ok(Evaluated { residuals, scaled })
}

fn robust_cost(kernel: &Kernel, scaled: &[f64]) -> f64 {
    scaled.iter().map(|&x| kernel.rho(x)).sum()
}

fn rms(scaled: &[f64], scale: f64) -> f64 {
    let n = scaled.len().max(1) as f64;
    (scaled.iter().map(|x| x * x).sum::<f64>() / n).sqrt() * scale
}

/// Mutable inner-loop state for one solve.
struct Inner<'a, P: ResidualProblem> {
    problem: &'a P,
    config: &'a SolverConfig,
    lambda: f64,
}

impl<P: ResidualProblem> Inner<'_, P> {
    /// Takes one accepted step from `theta` (whose evaluation is `current`).
    /// Returns the new parameter, its evaluation and the step norm. A step
    /// that cannot lower the cost before damping hits its cap is a zero step.
    fn step(
        &mut self,
        theta: &P::Param,
        current: &Evaluated,
        kernel: &Kernel,
        iteration: usize,
    ) -> Result<(P::Param, Evaluated, f64)> {
        let scale = self.config.residual_scale;
        let weights: Vec<f64> = current.scaled.iter().map(|&x| kernel.weight(x)).collect();
        let jac = self.problem.jacobian(theta)?;
        let (h, g) = normal_equations(&jac, &current.residuals, &weights, self.problem.block_dim())?;
        let damping = self.config.damping;
        let cost0 = robust_cost(kernel, &current.scaled);
        loop {
            let delta = match solve_damped(&h, &g, self.lambda) {
                Some(d) => d,
                None if damping.enabled && self.escalate() => continue,
                None => return Err(Error::Singular { damping: self.lambda }),
            };
            let next = self.problem.retract(theta, &delta);
            let eval = evaluate(self.problem, &next, scale, iteration)?;
            if !damping.enabled {
                return Ok((next, eval, delta.norm()));
            }
            let cost1 = robust_cost(kernel, &eval.scaled);
            if cost1 <= cost0 + 1e-12 * cost0.abs() {
                self.lambda *= damping.decrease;
                if self.lambda < damping.first {
                    self.lambda = 0.0;
                }
                return Ok((next, eval, delta.norm()));
            }
            if !self.escalate() {
                let same = evaluate(self.problem, theta, scale, iteration)?;
                return Ok((theta.clone(), same, 0.0));
            }
        }
    }

    /// Raises lambda; false once it would pass the cap.
    fn escalate(&mut self) -> bool {
        let d = self.config.damping;
        let next = if self.lambda == 0.0 {
            d.first
        } else {
            self.lambda * d.increase
        };
        if next > d.max {
            return false;
        }
        self.lambda = next;
        true
    }
}

/// What an outer loop decided for one iteration.
struct Refit {
    kernel: Kernel,
    nll: Option<f64>,
    /// Kernel unchanged since the previous iteration (or schedule finished).
    stable: bool,
}

fn outer_loop<P, F>(
    problem: &P,
    theta0: P::Param,
    config: &SolverConfig,
    initial_kernel: Kernel,
    max_iterations: usize,
    steps_per_outer: usize,
    mut refit: F,
) -> Result<Solution<P::Param>>
where
    P: ResidualProblem,
    F: FnMut(usize, &[f64]) -> Result<Refit>,
{
    config.validate()?;
    let scale = config.residual_scale;
    let mut inner = Inner {
        problem,
        config,
        lambda: 0.0,
    };
    let mut theta = theta0;
    let mut eval = evaluate(problem, &theta, scale, 1)?;
    let mut trace = Vec::new();
    let mut converged = false;
    for iteration in 1..=max_iterations {
        let fit = refit(iteration, &eval.scaled)?;
        let mut step_norm = 0.0;
        for _ in 0..steps_per_outer {
            let (next, next_eval, norm) = inner.step(&theta, &eval, &fit.kernel, iteration)?;
            theta = next;
            eval = next_eval;
            step_norm = norm;
            if norm < config.step_tol {
                break;
            }
        }
        trace.push(TraceEntry {
            kernel: fit.kernel,
            nll: fit.nll,
            step_norm,
            cost: robust_cost(&fit.kernel, &eval.scaled),
            residual_rms: rms(&eval.scaled, scale),
            damping: inner.lambda,
        });
        if fit.stable && step_norm < config.step_tol {
            converged = true;
            break;
        }
    }
    Ok(Solution {
        theta,
        iterations: trace.len(),
        trace,
        converged,
        initial_kernel,
        residual_scale: scale,
    })
}

/// IRLS with one fixed kernel. One Gauss-Newton step per iteration.
pub fn irls_solve<P: ResidualProblem>(
    problem: &P,
    theta0: P::Param,
    kernel: Kernel,
    config: &SolverConfig,
) -> Result<Solution<P::Param>> {
    if let Kernel::Baseline(b) = kernel {
        b.validate()?;
    }
    outer_loop(problem, theta0, config, kernel, config.max_outer, 1, |_, _| {
        Ok(Refit {
            kernel,
            nll: None,
            stable: true,
        })
    })
}

/// Plain nonlinear least squares: the quadratic kernel with unit scale.
pub fn lsq_solve<P: ResidualProblem>(
    problem: &P,
    theta0: P::Param,
    config: &SolverConfig,
) -> Result<Solution<P::Param>> {
    let kernel = KernelParams::new(2.0, 1.0, config.tau)?;
    let mut cfg = config.clone();
    cfg.residual_scale = 1.0;
    irls_solve(problem, theta0, kernel.into(), &cfg)
}

/// Alternates a likelihood fit of `alpha` at fixed `c = init_c` with IRLS.
pub fn rko_solve<P: ResidualProblem>(
    problem: &P,
    theta0: P::Param,
    config: &SolverConfig,
    table: &PartitionTable,
) -> Result<Solution<P::Param>> {
    config.check_table(table)?;
    let init = config.init_kernel()?;
    let c = config.init_c;
    let mut alpha = config.init_alpha;
    outer_loop(
        problem,
        theta0,
        config,
        init.into(),
        config.max_outer,
        config.gn_steps_per_outer,
        |_, scaled| {
            let next = fit_alpha(scaled, c, alpha, table)?;
            let stable = next == alpha;
            alpha = next;
            Ok(Refit {
                kernel: init.with_alpha(alpha)?.into(),
                nll: Some(crate::partition::nll(scaled, alpha, c, table)?),
                stable,
            })
        },
    )
}

/// Alternates likelihood fits of `alpha` then `c` with IRLS.
pub fn srko_solve<P: ResidualProblem>(
    problem: &P,
    theta0: P::Param,
    config: &SolverConfig,
    table: &PartitionTable,
) -> Result<Solution<P::Param>> {
    config.check_table(table)?;
    let init = config.init_kernel()?;
    let mut alpha = config.init_alpha;
    let mut c = config.init_c;
    outer_loop(
        problem,
        theta0,
        config,
        init.into(),
        config.max_outer,
        config.gn_steps_per_outer,
        |_, scaled| {
            let next_alpha = fit_alpha(scaled, c, alpha, table)?;
            let next_c = fit_c(scaled, next_alpha, c, table)?;
            let stable = next_alpha == alpha && next_c == c;
            alpha = next_alpha;
            c = next_c;
            Ok(Refit {
                kernel: KernelParams::new(alpha, c, config.tau)?.into(),
                nll: Some(crate::partition::nll(scaled, alpha, c, table)?),
                stable,
            })
        },
    )
}

/// Geman-McClure IRLS under the configured scale schedule. The iteration
/// budget is the schedule ramp plus `max_outer`.
pub fn gnc_geman_solve<P: ResidualProblem>(
    problem: &P,
    theta0: P::Param,
    config: &SolverConfig,
) -> Result<Solution<P::Param>> {
    let schedule = config.gnc;
    schedule.validate()?;
    let initial = BaselineKernel::geman_mcclure(schedule.mu0)?;
    let budget = schedule.ramp_iterations() + config.max_outer;
    outer_loop(problem, theta0, config, initial.into(), budget, 1, |iteration, _| {
        let mu = schedule.mu_at(iteration);
        Ok(Refit {
            kernel: BaselineKernel::geman_mcclure(mu)?.into(),
            nll: None,
            stable: mu <= schedule.mu_min,
        })
    })
}
