//! Expected failures per execution and the job-level recovery decision.
//!
//! `fw = N * w * P(w) / mttf`, with `P(w)` and `mttf` in the same unit.

use super::RuntimeError;

/// Minutes in the 30.44-day month used to convert mttf figures.
pub const MINUTES_PER_MONTH: f64 = 30.436_875 * 24.0 * 60.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FailureModel {
    pub n_nodes: u32,
    /// Worst-case running time, minutes.
    pub slo_minutes: f64,
    /// Safety multiplier on the worst-case running time.
    pub w: f64,
    pub mttf_minutes: f64,
    /// Slowdown from task-level recovery machinery, e.g. 0.21.
    pub cost_tl: f64,
}

impl FailureModel {
    pub fn expected_failures(&self) -> Result<f64, RuntimeError> {
        expected_failures(self)
    }
}

pub fn expected_failures(m: &FailureModel) -> Result<f64, RuntimeError> {
    if !(m.mttf_minutes > 0.0) {
        return Err(RuntimeError::InvalidSpec("mttf must be > 0".into()));
    }
    if m.slo_minutes < 0.0 || m.w < 0.0 {
        return Err(RuntimeError::InvalidSpec("P(w) and w must be >= 0".into()));
    }
    Ok(f64::from(m.n_nodes) * m.w * m.slo_minutes / m.mttf_minutes)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryReport {
    pub job_level: bool,
    pub expected_failures: f64,
    pub cost_tl: f64,
}

/// Job-level recovery wins when `fw <= cost_tl`; a tie goes to the simpler
/// mechanism.
pub fn justify_job_level_recovery(m: &FailureModel) -> Result<RecoveryReport, RuntimeError> {
    let fw = expected_failures(m)?;
    Ok(RecoveryReport {
        job_level: fw <= m.cost_tl,
        expected_failures: fw,
        cost_tl: m.cost_tl,
    })
}
