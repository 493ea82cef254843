use super::{DataError, ReplicaPlan};
use crate::stats::{self, Ewma};
use crate::NodeId;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationConfig {
    /// Add a replica when p95 fetch exceeds `beta_hi * budget`.
    pub beta_hi: f64,
    /// Retire one when p95 fetch is under `beta_lo * budget`.
    pub beta_lo: f64,
    /// Completed tasks between two changes.
    pub cooldown_tasks: u64,
    pub r_min: usize,
}

impl Default for ReplicationConfig {
    fn default() -> Self {
        Self {
            beta_hi: 0.5,
            beta_lo: 0.1,
            cooldown_tasks: 10,
            r_min: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Unchanged,
    Added(NodeId),
    Retired(NodeId),
}

/// One application of the control rule, without cooldown. `spare` is the
/// node to add if the rule asks for one.
pub fn adapt_replication(
    plan: &ReplicaPlan,
    fetch_stats: &[f64],
    exec_stats: &[f64],
    slo_budget_ms: f64,
    config: &ReplicationConfig,
    spare: Option<NodeId>,
) -> Result<(ReplicaPlan, Decision), DataError> {
    if fetch_stats.is_empty() || exec_stats.is_empty() {
        return Err(DataError::EmptyStats);
    }
    let p95 = stats::p95(fetch_stats).unwrap();
    let floor = config.r_min.min(plan.data_node_ids.len()).max(1);
    if p95 > config.beta_hi * slo_budget_ms {
        if let Some(node) = spare {
            return Ok((plan.with_node_added(node)?, Decision::Added(node)));
        }
        log::warn!("fetch p95 {p95:.2} ms over budget but no spare data node");
    } else if p95 < config.beta_lo * slo_budget_ms && plan.replication_factor > floor {
        // Retire the most recently added node.
        let node = *plan.data_node_ids.last().unwrap();
        return Ok((plan.with_node_removed(node), Decision::Retired(node)));
    }
    Ok((plan.clone(), Decision::Unchanged))
}

/// Applies [`adapt_replication`] at most once per cooldown window and keeps
/// the pool of spare data nodes.
#[derive(Debug, Clone)]
pub struct ReplicationController {
    pub config: ReplicationConfig,
    spares: Vec<NodeId>,
    since_change: u64,
    history: Vec<usize>,
}

impl ReplicationController {
    pub fn new(config: ReplicationConfig, spares: Vec<NodeId>) -> Self {
        let since_change = config.cooldown_tasks;
        Self {
            config,
            spares,
            since_change,
            history: Vec::new(),
        }
    }

    pub fn task_completed(&mut self) {
        self.since_change += 1;
    }

    pub fn spares(&self) -> &[NodeId] {
        &self.spares
    }

    /// Replication factor after each call.
    pub fn history(&self) -> &[usize] {
        &self.history
    }

    pub fn step(
        &mut self,
        plan: &ReplicaPlan,
        fetch_stats: &[f64],
        exec_stats: &[f64],
        slo_budget_ms: f64,
    ) -> Result<(ReplicaPlan, Decision), DataError> {
        if self.since_change < self.config.cooldown_tasks {
            self.history.push(plan.replication_factor);
            return Ok((plan.clone(), Decision::Unchanged));
        }
        let spare = self.spares.first().copied();
        let (next, d) = adapt_replication(plan, fetch_stats, exec_stats, slo_budget_ms, &self.config, spare)?;
        match d {
            Decision::Added(n) => {
                self.spares.retain(|&s| s != n);
                self.since_change = 0;
            }
            Decision::Retired(n) => {
                self.spares.insert(0, n);
                self.since_change = 0;
            }
            Decision::Unchanged => {}
        }
        self.history.push(next.replication_factor);
        Ok((next, d))
    }
}

/// Ratio of execution time while a prefetch overlaps to execution time in
/// isolation. Logged only.
#[derive(Debug, Clone, Default)]
pub struct InterferenceMonitor {
    isolated: Ewma,
    overlapped: Ewma,
}

impl InterferenceMonitor {
    pub fn record(&mut self, exec_ms: f64, overlapped: bool, alpha: f64) {
        if overlapped {
            self.overlapped.observe(exec_ms, alpha);
        } else {
            self.isolated.observe(exec_ms, alpha);
        }
    }

    pub fn ratio(&self) -> Option<f64> {
        match (self.overlapped.get(), self.isolated.get()) {
            (Some(o), Some(i)) if i > 0.0 => Some(o / i),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datalayer::build_initial_plan;

    fn plan(n: u32) -> ReplicaPlan {
        build_initial_plan(&[1, 2, 3], &(0..n).collect::<Vec<_>>(), 0).unwrap()
    }

    #[test]
    fn floor_holds() {
        let (p, d) = adapt_replication(&plan(2), &[0.1], &[1.0], 100.0, &ReplicationConfig::default(), None).unwrap();
        assert_eq!(d, Decision::Unchanged);
        assert_eq!(p.replication_factor, 2);
    }

    #[test]
    fn overload_adds_exactly_one() {
        let (p, d) = adapt_replication(&plan(2), &[200.0], &[1.0], 100.0, &ReplicationConfig::default(), Some(9)).unwrap();
        assert_eq!(d, Decision::Added(9));
        assert_eq!(p.replication_factor, 3);
        p.validate().unwrap();
    }

    #[test]
    fn underload_retires_above_floor() {
        let (p, d) = adapt_replication(&plan(3), &[1.0], &[1.0], 100.0, &ReplicationConfig::default(), None).unwrap();
        assert_eq!(d, Decision::Retired(2));
        assert_eq!(p.replication_factor, 2);
    }

    #[test]
    fn empty_stats_error() {
        assert_eq!(
            adapt_replication(&plan(2), &[], &[1.0], 1.0, &ReplicationConfig::default(), None).unwrap_err(),
            DataError::EmptyStats
        );
    }

    #[test]
    fn cooldown_limits_changes() {
        let mut c = ReplicationController::new(ReplicationConfig::default(), vec![7, 8]);
        let (p1, d1) = c.step(&plan(2), &[200.0], &[1.0], 100.0).unwrap();
        assert_eq!(d1, Decision::Added(7));
        let (_, d2) = c.step(&p1, &[200.0], &[1.0], 100.0).unwrap();
        assert_eq!(d2, Decision::Unchanged);
        for _ in 0..10 {
            c.task_completed();
        }
        let (_, d3) = c.step(&p1, &[200.0], &[1.0], 100.0).unwrap();
        assert_eq!(d3, Decision::Added(8));
    }

    #[test]
    fn interference_ratio() {
        let mut m = InterferenceMonitor::default();
        assert_eq!(m.ratio(), None);
        m.record(10.0, false, 0.5);
        m.record(12.0, true, 0.5);
        assert!((m.ratio().unwrap() - 1.2).abs() < 1e-12);
    }
}
