//! The general adaptive robust loss family and the two fixed baselines.
//!
//! One shape parameter `alpha` sweeps the family
//!
//! | `alpha` | loss                    |
//! |---------|-------------------------|
//! | 2       | quadratic               |
//! | 0       | Cauchy / Lorentzian     |
//! | -2      | Geman-McClure           |
//! | -inf    | Welsch                  |
//!
//! and `c` sets the residual magnitude where the loss leaves its quadratic
//! bowl. `alpha = -inf` is represented by [`WELSCH`] (`f64::NEG_INFINITY`),
//! which selects the exponential branch directly.
//!
//! With `z = (x / c)^2` and `b = |alpha - 2|`:
//!
//! ```text
//! rho(x)  = z / 2                                   alpha = 2
//!         = log(z / 2 + 1)                          alpha = 0
//!         = 1 - exp(-z / 2)                         alpha = -inf
//!         = b / alpha * ((z / b + 1)^(alpha/2) - 1) otherwise
//! w(x)    = rho'(x) / x,  w(0) = 1 / c^2
//! ```

use crate::error::{domain, Result};

/// Shape sentinel for the Welsch (`alpha = -inf`) member of the family.
pub const WELSCH: f64 = f64::NEG_INFINITY;

/// Distance from 0 or 2 within which the exact special-case branch is used.
pub const BRANCH_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Branch {
    Quadratic,
    Cauchy,
    Welsch,
    General { alpha: f64, b: f64 },
}

fn branch(alpha: f64) -> Branch {
    if alpha == WELSCH {
        Branch::Welsch
    } else if (alpha - 2.0).abs() < BRANCH_TOL {
        Branch::Quadratic
    } else if alpha.abs() < BRANCH_TOL {
        Branch::Cauchy
    } else {
        Branch::General {
            alpha,
            b: (alpha - 2.0).abs(),
        }
    }
}

/// One member `(alpha, c)` of the loss family together with the truncation
/// bound `tau` used when the loss is normalized into a density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    alpha: f64,
    c: f64,
    tau: f64,
}

impl KernelParams {
    /// `alpha` may exceed 2 by less than [`BRANCH_TOL`]; such values evaluate
    /// on the quadratic branch.
    pub fn new(alpha: f64, c: f64, tau: f64) -> Result<Self> {
        if !(alpha == WELSCH || alpha.is_finite()) {
            return Err(domain(format!("alpha must be finite or WELSCH, got {alpha}")));
        }
        if alpha >= 2.0 + BRANCH_TOL {
            return Err(domain(format!("alpha must be <= 2, got {alpha}")));
        }
        if !(c.is_finite() && c > 0.0) {
            return Err(domain(format!("c must be positive and finite, got {c}")));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(domain(format!("tau must be positive and finite, got {tau}")));
        }
        Ok(Self { alpha, c, tau })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn with_alpha(self, alpha: f64) -> Result<Self> {
        Self::new(alpha, self.c, self.tau)
    }

    pub fn with_c(self, c: f64) -> Result<Self> {
        Self::new(self.alpha, c, self.tau)
    }

    /// Loss value. Non-finite `x` propagates; use [`rho`] for a checked call.
    pub fn rho(&self, x: f64) -> f64 {
        let z = (x / self.c).powi(2);
        match branch(self.alpha) {
            Branch::Quadratic => 0.5 * z,
            Branch::Cauchy => (0.5 * z).ln_1p(),
            Branch::Welsch => -(-0.5 * z).exp_m1(),
            Branch::General { alpha, b } => b / alpha * (0.5 * alpha * (z / b).ln_1p()).exp_m1(),
        }
    }

    pub fn drho_dx(&self, x: f64) -> f64 {
        x * self.weight(x)
    }

    /// IRLS weight `rho'(x) / x`, continuous at zero.
    pub fn weight(&self, x: f64) -> f64 {
        let c2 = self.c * self.c;
        let z = x * x / c2;
        match branch(self.alpha) {
            Branch::Quadratic => 1.0 / c2,
            Branch::Cauchy => 2.0 / (x * x + 2.0 * c2),
            Branch::Welsch => (-0.5 * z).exp() / c2,
            Branch::General { alpha, b } => ((0.5 * alpha - 1.0) * (z / b).ln_1p()).exp() / c2,
        }
    }
}

fn check_residual(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("residual must be finite, got {x}")))
    }
}

pub fn rho(x: f64, p: &KernelParams) -> Result<f64> {
    check_residual(x)?;
    Ok(p.rho(x))
}

pub fn drho_dx(x: f64, p: &KernelParams) -> Result<f64> {
    check_residual(x)?;
    Ok(p.drho_dx(x))
}

pub fn weight(x: f64, p: &KernelParams) -> Result<f64> {
    check_residual(x)?;
    Ok(p.weight(x))
}

/// Fixed-shape kernels used as comparison baselines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineKernel {
    /// Threshold `k` in residual units.
    Huber { k: f64 },
    /// Scale `mu` in squared residual units.
    GemanMcClure { mu: f64 },
}

impl BaselineKernel {
    pub fn huber(k: f64) -> Result<Self> {
        let kernel = BaselineKernel::Huber { k };
        kernel.validate()?;
        Ok(kernel)
    }

    pub fn geman_mcclure(mu: f64) -> Result<Self> {
        let kernel = BaselineKernel::GemanMcClure { mu };
        kernel.validate()?;
        Ok(kernel)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BaselineKernel::Huber { k } if !(k.is_finite() && k > 0.0) => {
                Err(domain(format!("Huber threshold must be positive, got {k}")))
            }
            BaselineKernel::GemanMcClure { mu } if !(mu.is_finite() && mu > 0.0) => {
                Err(domain(format!("Geman-McClure scale must be positive, got {mu}")))
            }
            _ => Ok(()),
        }
    }

    pub fn weight(&self, x: f64) -> f64 {
        match *self {
            BaselineKernel::Huber { k } => {
                if x.abs() <= k {
                    1.0
                } else {
                    k / x.abs()
                }
            }
            BaselineKernel::GemanMcClure { mu } => {
                let d = mu + x * x;
                mu * mu / (d * d)
            }
        }
    }

    /// Loss whose `rho'(x) / x` is [`BaselineKernel::weight`].
    pub fn rho(&self, x: f64) -> f64 {
        match *self {
            BaselineKernel::Huber { k } => {
                let a = x.abs();
                if a <= k {
                    0.5 * x * x
                } else {
                    k * a - 0.5 * k * k
                }
            }
            BaselineKernel::GemanMcClure { mu } => 0.5 * mu * x * x / (mu + x * x),
        }
    }
}

pub fn baseline_weight(x: f64, k: &BaselineKernel) -> Result<f64> {
    k.validate()?;
    check_residual(x)?;
    Ok(k.weight(x))
}

/// Any kernel the solvers can reweight with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    General(KernelParams),
    Baseline(BaselineKernel),
}

impl Kernel {
    pub fn rho(&self, x: f64) -> f64 {
        match self {
            Kernel::General(p) => p.rho(x),
            Kernel::Baseline(b) => b.rho(x),
        }
    }

    pub fn weight(&self, x: f64) -> f64 {
        match self {
            Kernel::General(p) => p.weight(x),
            Kernel::Baseline(b) => b.weight(x),
        }
    }

    pub fn params(&self) -> Option<&KernelParams> {
        match self {
            Kernel::General(p) => Some(p),
            Kernel::Baseline(_) => None,
        }
    }

    pub fn mu(&self) -> Option<f64> {
        match self {
            Kernel::Baseline(BaselineKernel::GemanMcClure { mu }) => Some(*mu),
            _ => None,
        }
    }
}

impl From<KernelParams> for Kernel {
    fn from(p: KernelParams) -> Self {
        Kernel::General(p)
    }
}

impl From<BaselineKernel> for Kernel {
    fn from(b: BaselineKernel) -> Self {
        Kernel::Baseline(b)
    }
}
