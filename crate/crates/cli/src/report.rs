//! Serializable views of solver results.

use serde::{Serialize, Serializer};

use robustfit::kernel::Kernel;
use robustfit::registration::Pose;
use robustfit::solver::Solution;

use crate::settings::Settings;

pub const REPORT_VERSION: u32 = 1;

/// JSON has no infinities; the Welsch shape is written as the string "-inf".
pub fn ser_alpha<S: Serializer>(alpha: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match alpha {
        Some(a) if !a.is_finite() => s.serialize_str(&a.to_string()),
        Some(a) => s.serialize_f64(*a),
        None => s.serialize_none(),
    }
}

pub fn ser_alphas<S: Serializer>(alphas: &[f64], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(alphas.len()))?;
    for a in alphas {
        if a.is_finite() {
            seq.serialize_element(a)?;
        } else {
            seq.serialize_element(&a.to_string())?;
        }
    }
    seq.end()
}

/// Kernel parameters of one trace entry. Huber leaves all three empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelState {
    #[serde(serialize_with = "ser_alpha")]
    pub alpha: Option<f64>,
    pub c: Option<f64>,
    pub mu: Option<f64>,
}

impl From<&Kernel> for KernelState {
    fn from(k: &Kernel) -> Self {
        Self {
            alpha: k.params().map(|p| p.alpha()),
            c: k.params().map(|p| p.c()),
            mu: k.mu(),
        }
    }
}

/// Entry 0 is the initial kernel; later entries are outer iterations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    #[serde(flatten)]
    pub kernel: KernelState,
    pub nll: Option<f64>,
    pub step_norm: Option<f64>,
    pub cost: Option<f64>,
    pub residual_rms: Option<f64>,
    pub damping: Option<f64>,
}

pub fn trace_rows(solution: &Solution<Pose>) -> Vec<TraceRow> {
    let initial = TraceRow {
        iteration: 0,
        kernel: (&solution.initial_kernel).into(),
        nll: None,
        step_norm: None,
        cost: None,
        residual_rms: None,
        damping: None,
    };
    std::iter::once(initial)
        .chain(solution.trace.iter().enumerate().map(|(i, e)| TraceRow {
            iteration: i + 1,
            kernel: (&e.kernel).into(),
            nll: e.nll,
            step_norm: Some(e.step_norm),
            cost: Some(e.cost),
            residual_rms: Some(e.residual_rms),
            damping: Some(e.damping),
        }))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct PoseView {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl From<&Pose> for PoseView {
    fn from(p: &Pose) -> Self {
        Self {
            rotation: std::array::from_fn(|i| std::array::from_fn(|j| p.rotation[(i, j)])),
            translation: std::array::from_fn(|i| p.translation[i]),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RegisterResult {
    /// Empty when the dataset has no truth pose.
    pub rmse: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    #[serde(flatten)]
    pub final_kernel: KernelState,
    pub pose: PoseView,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegisterReport {
    pub version: u32,
    pub dataset: String,
    pub settings: Settings,
    pub result: RegisterResult,
    pub trace: Vec<TraceRow>,
}

impl RegisterReport {
    /// Human-readable lines for stdout.
    pub fn summary(&self) -> String {
        let r = &self.result;
        let mut out = format!(
            "method {} (scale {})\niterations {} ({})\n",
            self.settings.method,
            self.settings.residual_scale,
            r.iterations,
            if r.converged { "converged" } else { "hit iteration cap" },
        );
        let k = r.final_kernel;
        match (k.alpha, k.c, k.mu) {
            (Some(a), Some(c), _) => out += &format!("final alpha {a}, c {c}\n"),
            (_, _, Some(mu)) => out += &format!("final mu {mu}\n"),
            _ => {}
        }
        match r.rmse {
            Some(e) => out += &format!("rmse {e:.6e}\n"),
            None => out += "rmse unavailable (no truth pose)\n",
        }
        out
    }
}
