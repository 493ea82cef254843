//! Two-step pull scheduler.
//!
//! A probe round gives every node exactly one randomly chosen task. After a
//! node reports its first completion, it receives batches sized from its
//! observed execution time, and whenever its queue runs dry it pulls
//! straight from the pending pool. Slow nodes therefore simply ask less
//! often; there is no explicit speed model.
//!
//! [`Scheduler`] is a plain state machine. The runtime drives it from one
//! command loop and the simulator from its event loop, so every mutation is
//! serialized by construction.

use std::collections::{BTreeSet, HashMap, VecDeque};

use rand::seq::SliceRandom;

use crate::rng;
use crate::stats::Ewma;
use crate::{NodeId, TaskId};

pub const DEFAULT_EWMA_ALPHA: f64 = 0.5;
pub const DEFAULT_MIN_BATCH: usize = 2;
pub const DEFAULT_MAX_BATCH: usize = 16;
/// Runway kept in a queue when no explicit target is set, in units of the
/// node's mean execution time.
pub const DEFAULT_RUNWAY_TASKS: f64 = 4.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SchedError {
    #[error("no nodes")]
    NoNodes,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("negative duration {0}")]
    NegativeDuration(f64),
    #[error("ewma_alpha must be in (0,1], got {0}")]
    BadAlpha(f64),
    #[error("empty throughput profile")]
    EmptyProfile,
    #[error("configuration with {0} cores has no throughput samples")]
    NoSamples(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub ewma_alpha: f64,
    /// Queue runway to aim for; `None` means [`DEFAULT_RUNWAY_TASKS`] times
    /// the node's mean execution time.
    pub target_queue_ms: Option<f64>,
    pub min_batch: usize,
    pub max_batch: usize,
    pub probe_seed: u64,
    pub slo_ms: Option<f64>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            ewma_alpha: DEFAULT_EWMA_ALPHA,
            target_queue_ms: None,
            min_batch: DEFAULT_MIN_BATCH,
            max_batch: DEFAULT_MAX_BATCH,
            probe_seed: 0,
            slo_ms: None,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<(), SchedError> {
        if !(self.ewma_alpha > 0.0 && self.ewma_alpha <= 1.0) {
            return Err(SchedError::BadAlpha(self.ewma_alpha));
        }
        Ok(())
    }

    /// `clamp(ceil(target / ewma_exec), min_batch, max_batch)`.
    pub fn batch_size(&self, ewma_exec_ms: f64) -> usize {
        if ewma_exec_ms <= 0.0 {
            return self.max_batch;
        }
        let target = self
            .target_queue_ms
            .unwrap_or(DEFAULT_RUNWAY_TASKS * ewma_exec_ms);
        let b = (target / ewma_exec_ms).ceil();
        (b.max(0.0) as usize).clamp(self.min_batch, self.max_batch)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub node_id: NodeId,
    pub queue: VecDeque<TaskId>,
    pub inflight: Option<TaskId>,
    pub ewma_exec_ms: Ewma,
    pub ewma_fetch_ms: Ewma,
    pub completed_count: u64,
}

impl NodeState {
    pub fn new(node_id: NodeId) -> Self {
        Self {
            node_id,
            queue: VecDeque::new(),
            inflight: None,
            ewma_exec_ms: Ewma::new(),
            ewma_fetch_ms: Ewma::new(),
            completed_count: 0,
        }
    }
}

/// Tasks not yet handed to any node, served lowest id first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PendingPool {
    ids: BTreeSet<TaskId>,
}

impl PendingPool {
    pub fn new(ids: impl IntoIterator<Item = TaskId>) -> Self {
        Self {
            ids: ids.into_iter().collect(),
        }
    }

    pub fn pop(&mut self) -> Option<TaskId> {
        self.ids.pop_first()
    }

    pub fn remove(&mut self, id: TaskId) -> bool {
        self.ids.remove(&id)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Probe round: one task per node, chosen by a seeded permutation of the
/// task ids. Nodes beyond the number of tasks get nothing.
pub fn initial_assign(
    tasks: &[TaskId],
    nodes: &mut [NodeState],
    pool: &mut PendingPool,
    seed: u64,
) -> Result<Vec<(NodeId, TaskId)>, SchedError> {
    if nodes.is_empty() {
        return Err(SchedError::NoNodes);
    }
    let mut order = tasks.to_vec();
    order.shuffle(&mut rng::stream(seed, &[rng::TAG_PROBE]));
    let mut out = Vec::new();
    for (node, &t) in nodes.iter_mut().zip(&order) {
        pool.remove(t);
        node.queue.push_back(t);
        out.push((node.node_id, t));
    }
    Ok(out)
}

/// Moves a feedback-sized batch from the pool to the node's queue. The
/// batch never exceeds the pool, and the queue never exceeds
/// `max_batch + 1`.
pub fn feedback_batch(node: &mut NodeState, pool: &mut PendingPool, config: &ScheduleConfig) -> Vec<TaskId> {
    let want = config.batch_size(node.ewma_exec_ms.get().unwrap_or(0.0));
    let room = (config.max_batch + 1).saturating_sub(node.queue.len());
    let take = want.min(room).min(pool.len());
    let mut out = Vec::with_capacity(take);
    for _ in 0..take {
        let t = pool.pop().expect("checked len");
        node.queue.push_back(t);
        out.push(t);
    }
    out
}

/// Where [`next_task`] found work.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Queue,
    /// Pulled straight from the pending pool.
    Pool,
}

/// Head of the node's queue, else a task from the pool.
pub fn next_task(node: &mut NodeState, pool: &mut PendingPool) -> Option<(TaskId, Source)> {
    let got = match node.queue.pop_front() {
        Some(t) => Some((t, Source::Queue)),
        None => pool.pop().map(|t| (t, Source::Pool)),
    };
    node.inflight = got.map(|g| g.0);
    got
}

pub fn record_completion(node: &mut NodeState, exec_ms: f64, fetch_ms: f64, config: &ScheduleConfig) -> Result<(), SchedError> {
    if exec_ms < 0.0 || exec_ms.is_nan() {
        return Err(SchedError::NegativeDuration(exec_ms));
    }
    if fetch_ms < 0.0 || fetch_ms.is_nan() {
        return Err(SchedError::NegativeDuration(fetch_ms));
    }
    node.ewma_exec_ms.observe(exec_ms, config.ewma_alpha);
    node.ewma_fetch_ms.observe(fetch_ms, config.ewma_alpha);
    node.completed_count += 1;
    node.inflight = None;
    Ok(())
}

/// Scheduler state for one job execution.
#[derive(Debug, Clone)]
pub struct Scheduler {
    config: ScheduleConfig,
    nodes: Vec<NodeState>,
    index: HashMap<NodeId, usize>,
    pool: PendingPool,
    all_tasks: Vec<TaskId>,
    dispatched: usize,
}

impl Scheduler {
    pub fn new(config: ScheduleConfig, node_ids: &[NodeId], tasks: &[TaskId]) -> Result<Self, SchedError> {
        config.validate()?;
        if node_ids.is_empty() {
            return Err(SchedError::NoNodes);
        }
        Ok(Self {
            config,
            nodes: node_ids.iter().map(|&n| NodeState::new(n)).collect(),
            index: node_ids.iter().enumerate().map(|(i, &n)| (n, i)).collect(),
            pool: PendingPool::new(tasks.iter().copied()),
            all_tasks: tasks.to_vec(),
            dispatched: 0,
        })
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    pub fn probe(&mut self) -> Result<Vec<(NodeId, TaskId)>, SchedError> {
        let tasks = self.all_tasks.clone();
        initial_assign(&tasks, &mut self.nodes, &mut self.pool, self.config.probe_seed)
    }

    fn node_mut(&mut self, node: NodeId) -> Result<&mut NodeState, SchedError> {
        let i = *self.index.get(&node).ok_or(SchedError::UnknownNode(node))?;
        Ok(&mut self.nodes[i])
    }

    pub fn node(&self, node: NodeId) -> Option<&NodeState> {
        self.index.get(&node).map(|&i| &self.nodes[i])
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn pending(&self) -> usize {
        self.pool.len()
    }

    pub fn dispatched(&self) -> usize {
        self.dispatched
    }

    pub fn total_tasks(&self) -> usize {
        self.all_tasks.len()
    }

    pub fn next_task(&mut self, node: NodeId) -> Result<Option<(TaskId, Source)>, SchedError> {
        let i = *self.index.get(&node).ok_or(SchedError::UnknownNode(node))?;
        let got = next_task(&mut self.nodes[i], &mut self.pool);
        if got.is_some() {
            self.dispatched += 1;
        }
        Ok(got)
    }

    pub fn record_completion(&mut self, node: NodeId, exec_ms: f64, fetch_ms: f64) -> Result<(), SchedError> {
        let cfg = self.config.clone();
        record_completion(self.node_mut(node)?, exec_ms, fetch_ms, &cfg)
    }

    pub fn feedback_batch(&mut self, node: NodeId) -> Result<Vec<TaskId>, SchedError> {
        let i = *self.index.get(&node).ok_or(SchedError::UnknownNode(node))?;
        Ok(feedback_batch(&mut self.nodes[i], &mut self.pool, &self.config))
    }

    /// Completion handling: update the averages and, if the queue is down to
    /// `refill_at` tasks or fewer, top it up with a batch.
    pub fn on_completion(&mut self, node: NodeId, exec_ms: f64, fetch_ms: f64, refill_at: usize) -> Result<Vec<TaskId>, SchedError> {
        self.record_completion(node, exec_ms, fetch_ms)?;
        let queued = self.node(node).map_or(0, |n| n.queue.len());
        if queued <= refill_at {
            self.feedback_batch(node)
        } else {
            Ok(Vec::new())
        }
    }

    /// True when nothing is queued, pending or in flight.
    pub fn is_drained(&self) -> bool {
        self.pool.is_empty() && self.nodes.iter().all(|n| n.queue.is_empty() && n.inflight.is_none())
    }
}

// ---------------------------------------------------------------------------
// SLO-aware cluster sizing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterProfile {
    pub cores: u32,
    pub startup_ms: f64,
    /// `(job_size_bytes, throughput_bytes_per_ms)`, sorted by size.
    pub samples: Vec<(f64, f64)>,
}

impl ClusterProfile {
    /// Throughput at `job_size`, linearly interpolated and clamped at the
    /// measured ends.
    pub fn throughput_at(&self, job_size: f64) -> f64 {
        let s = &self.samples;
        if s.is_empty() {
            return 0.0;
        }
        if job_size <= s[0].0 {
            return s[0].1;
        }
        for w in s.windows(2) {
            let (x0, y0) = w[0];
            let (x1, y1) = w[1];
            if job_size <= x1 {
                if x1 <= x0 {
                    return y1;
                }
                return y0 + (y1 - y0) * (job_size - x0) / (x1 - x0);
            }
        }
        s[s.len() - 1].1
    }

    /// `startup + job / throughput`; infinite at zero throughput.
    pub fn predicted_ms(&self, job_size: f64) -> f64 {
        let tp = self.throughput_at(job_size);
        if tp <= 0.0 {
            f64::INFINITY
        } else {
            self.startup_ms + job_size / tp
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ThroughputProfile {
    pub configs: Vec<ClusterProfile>,
}

/// Among configurations predicted to finish within `slo_ms`, the one with
/// the highest throughput (fewer cores on ties); if none qualifies, the one
/// with the lowest predicted running time.
pub fn select_cluster_size_for_slo(profile: &ThroughputProfile, job_size_bytes: f64, slo_ms: f64) -> Result<u32, SchedError> {
    if profile.configs.is_empty() {
        return Err(SchedError::EmptyProfile);
    }
    if let Some(c) = profile.configs.iter().find(|c| c.samples.is_empty()) {
        return Err(SchedError::NoSamples(c.cores));
    }
    let feasible = profile
        .configs
        .iter()
        .filter(|c| c.predicted_ms(job_size_bytes) <= slo_ms)
        .max_by(|a, b| {
            a.throughput_at(job_size_bytes)
                .total_cmp(&b.throughput_at(job_size_bytes))
                .then(b.cores.cmp(&a.cores))
        });
    if let Some(c) = feasible {
        return Ok(c.cores);
    }
    let fastest = profile
        .configs
        .iter()
        .min_by(|a, b| {
            a.predicted_ms(job_size_bytes)
                .total_cmp(&b.predicted_ms(job_size_bytes))
                .then(a.cores.cmp(&b.cores))
        })
        .expect("non-empty");
    Ok(fastest.cores)
}
