//! Discrete-event simulation of a job on a virtual clock.
//!
//! The simulator drives the real [`Scheduler`] and prefetch-depth logic.
//! Task durations come from the cache model: each task's access trace is
//! replayed through the configured LRU levels, and its cost is
//! `(overhead + trace_len * amat * cycle_scale) * (1 + runtime_tax) / speed`.
//! Trace costs are computed up front (in parallel); the event loop itself is
//! single-threaded, so a run is a pure function of its inputs.
//!
//! Dequeue classification in the event log:
//! - `COLD`: the task's data was never prefetched (probe tasks, the first
//!   task of a fresh batch, pool pulls), so it is fetched on demand.
//! - `STALL`: the data was prefetched but had not arrived yet.

mod presets;
mod reduce;
mod scenario;
mod sweep;

pub use presets::{eaglet_preset, platform_overhead_profiles, ratings_preset, BenchPreset, PlatformProfile, PRESET_NAMES};
pub use reduce::{reduce_stage_model, ReduceModel};
pub use scenario::{resize_preset, Scenario, ScenarioError, SCENARIO_KINDS};
pub use sweep::{
    bench, job_for, simulate_offline_phase, sweep_task_size, write_bench_csv, write_sweep_csv, BenchRow, OfflineReport, SweepRow,
    TaskSizing,
};

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::ops::Range;

use rayon::prelude::*;

use crate::cache_model::{self, AmatModel, CacheConfig, CacheError, TraceParams};
use crate::datalayer::{LatencyModel, PrefetchController};
use crate::eventlog::{EventKind, EventLog};
use crate::rng;
use crate::scheduler::{SchedError, ScheduleConfig, Scheduler, Source};
use crate::sizing::{self, KneepointReport, SizingError, Task};
use crate::workload::SubsampleSpec;
use crate::{NodeId, TaskId};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid sim config: {0}")]
    Config(String),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Sizing(#[from] SizingError),
    #[error(transparent)]
    Sched(#[from] SchedError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_workers: usize,
    /// Per-node speed multipliers; empty means every node runs at 1.0.
    pub speeds: Vec<f64>,
    pub startup_ms: f64,
    /// Fixed cost of every task (launch, dispatch, result send).
    pub overhead_ms: f64,
    /// Additional per-task cost for each sample in the task.
    pub per_sample_overhead_ms: f64,
    /// Fractional slowdown applied to every task, e.g. 0.2 for monitoring.
    pub runtime_tax: f64,
    pub cache: CacheConfig,
    pub amat: AmatModel,
    pub trace: TraceParams,
    /// Milliseconds per AMAT cycle.
    pub cycle_scale_ms: f64,
    /// Per-sample fetch latency.
    pub latency: LatencyModel,
    /// Fetch throughput; 0 means transfer time is ignored.
    pub bandwidth_bytes_per_ms: f64,
    pub prefetch: bool,
    pub prefetch_margin: usize,
    pub schedule: ScheduleConfig,
    /// Emit a MONITOR snapshot at this interval when set.
    pub monitor_interval_ms: Option<f64>,
    /// Per-node cost of producing one monitor snapshot.
    pub monitor_cost_ms: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_workers: 4,
            speeds: Vec::new(),
            startup_ms: 100.0,
            overhead_ms: 1.0,
            per_sample_overhead_ms: 0.0,
            runtime_tax: 0.0,
            cache: CacheConfig::single(1536).unwrap(),
            amat: AmatModel::single(1.0, 63.0),
            trace: TraceParams::default(),
            cycle_scale_ms: 1e-6,
            latency: LatencyModel::new(0.1, 0.1),
            bandwidth_bytes_per_ms: 1e6,
            prefetch: true,
            prefetch_margin: 1,
            schedule: ScheduleConfig::default(),
            monitor_interval_ms: None,
            monitor_cost_ms: 0.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if self.n_workers == 0 {
            return bad("n_workers must be >= 1");
        }
        if !self.speeds.is_empty() && self.speeds.len() != self.n_workers {
            return bad("speeds must list one value per worker");
        }
        if self.speeds.iter().any(|&s| !(s > 0.0)) {
            return bad("speeds must be > 0");
        }
        let durations = [
            self.startup_ms,
            self.overhead_ms,
            self.per_sample_overhead_ms,
            self.runtime_tax,
            self.cycle_scale_ms,
            self.latency.shift_ms,
            self.latency.mean_extra_ms,
            self.bandwidth_bytes_per_ms,
            self.monitor_cost_ms,
        ];
        if durations.iter().any(|&d| !(d >= 0.0)) {
            return bad("durations must be >= 0");
        }
        if matches!(self.monitor_interval_ms, Some(i) if !(i > 0.0)) {
            return bad("monitor_interval_ms must be > 0");
        }
        if self.amat.level_miss_penalties.len() != self.cache.capacities().len() {
            return bad("amat needs one penalty per cache level");
        }
        self.schedule.validate()?;
        Ok(())
    }

    pub fn speed(&self, node: usize) -> f64 {
        self.speeds.get(node).copied().unwrap_or(1.0)
    }

    /// Multiplier on task time from monitoring.
    fn monitor_factor(&self) -> f64 {
        match self.monitor_interval_ms {
            Some(i) => 1.0 + self.monitor_cost_ms / i,
            None => 1.0,
        }
    }
}

/// A job for the simulator: sample sizes plus the sizing decision.
#[derive(Debug, Clone, PartialEq)]
pub struct SimJob {
    /// `(sample_id, size_bytes)` in manifest order.
    pub entries: Vec<(u64, u64)>,
    pub spec: SubsampleSpec,
    pub report: KneepointReport,
    pub repetitions: Range<u32>,
}

impl SimJob {
    pub fn new(entries: Vec<(u64, u64)>, spec: SubsampleSpec, report: KneepointReport) -> Self {
        let repetitions = 0..spec.repetitions;
        Self {
            entries,
            spec,
            report,
            repetitions,
        }
    }

    pub fn total_bytes(&self) -> u64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn avg_sample_size(&self) -> f64 {
        if self.entries.is_empty() {
            0.0
        } else {
            self.total_bytes() as f64 / self.entries.len() as f64
        }
    }

    /// Round-robin partitions over the workers, each packed separately.
    pub fn tasks(&self, n_workers: usize) -> Result<Vec<Task>, SimError> {
        let parts = sizing::partition_entries(&self.entries, n_workers)?;
        Ok(sizing::pack_partitions(
            &self.entries,
            &parts,
            &self.report,
            &self.spec,
            self.repetitions.clone(),
        )?)
    }
}

/// Speed-1 cost of one task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskCost {
    pub trace_len: u64,
    pub amat: f64,
    /// Overhead plus memory time, before tax and speed.
    pub compute_ms: f64,
    pub fetch_ms: f64,
}

fn trace_cost(shape: &[(u64, u64)], spec: &SubsampleSpec, reps: &Range<u32>, sim: &SimConfig) -> Result<(u64, f64), SimError> {
    if reps.is_empty() {
        return Ok((0, sim.amat.fastest_hit_cycles));
    }
    let mut s = *spec;
    // Repetition windows other than 0..n only shift which draws are made;
    // the trace length and locality are the same.
    s.repetitions = reps.end - reps.start;
    let rt = cache_model::task_runs(shape, &s, sim.trace)?;
    let rates = cache_model::local_miss_rates(&rt, &sim.cache);
    let amat = cache_model::amat(&sim.amat, &rates)?;
    Ok((rt.len(), amat))
}

pub fn task_costs(tasks: &[Task], entries: &[(u64, u64)], sim: &SimConfig) -> Result<Vec<TaskCost>, SimError> {
    let size_of: HashMap<u64, u64> = entries.iter().copied().collect();
    tasks
        .par_iter()
        .map(|t| {
            let shape: Vec<(u64, u64)> = t.sample_ids.iter().map(|id| (*id, size_of[id])).collect();
            let (trace_len, amat) = trace_cost(&shape, &t.spec, &t.repetition_range, sim)?;
            let compute_ms = sim.overhead_ms
                + sim.per_sample_overhead_ms * shape.len() as f64
                + trace_len as f64 * amat * sim.cycle_scale_ms;
            let mut r = rng::stream(sim.seed, &[rng::TAG_NET, t.id]);
            let fetch_ms = shape
                .iter()
                .map(|&(_, b)| {
                    let xfer = if sim.bandwidth_bytes_per_ms > 0.0 {
                        b as f64 / sim.bandwidth_bytes_per_ms
                    } else {
                        0.0
                    };
                    sim.latency.sample(&mut r) + xfer
                })
                .sum();
            Ok(TaskCost {
                trace_len,
                amat,
                compute_ms,
                fetch_ms,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub makespan_ms: f64,
    pub startup_ms: f64,
    pub throughput_bytes_per_s: f64,
    pub utilization: Vec<f64>,
    pub tasks_per_node: Vec<usize>,
    pub n_tasks: usize,
    pub total_bytes: u64,
    pub stall_count: usize,
    pub cold_count: usize,
    pub steal_count: usize,
    pub monitor_snapshots: usize,
    /// Sum over tasks of their speed-1 duration after tax.
    pub total_work_ms: f64,
    pub events: EventLog,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Ev {
    Start(usize, TaskId),
    Finish(usize, TaskId),
    DataReady(usize, TaskId),
    Monitor,
}

struct Queued {
    at: f64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    // Reversed: BinaryHeap is a max-heap and we pop the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other.at.total_cmp(&self.at).then(other.seq.cmp(&self.seq))
    }
}

struct Engine<'a> {
    sim: &'a SimConfig,
    costs: HashMap<TaskId, TaskCost>,
    sched: Scheduler,
    heap: BinaryHeap<Queued>,
    seq: u64,
    log: EventLog,
    prefetched: Vec<HashMap<TaskId, f64>>,
    prefetch: Vec<PrefetchController>,
    running: Vec<Option<(TaskId, f64, f64)>>,
    busy_ms: Vec<f64>,
    done: Vec<usize>,
    outstanding: usize,
    stalls: usize,
    colds: usize,
    steals: usize,
    last_finish: f64,
}

impl Engine<'_> {
    fn push(&mut self, at: f64, ev: Ev) {
        self.seq += 1;
        self.heap.push(Queued { at, seq: self.seq, ev });
    }

    fn exec_ms(&self, node: usize, task: TaskId) -> f64 {
        self.costs[&task].compute_ms * (1.0 + self.sim.runtime_tax) * self.sim.monitor_factor() / self.sim.speed(node)
    }

    fn prefetch_window(&mut self, node: usize, now: f64) {
        if !self.sim.prefetch {
            return;
        }
        let k = self.prefetch[node].depth();
        let queue: Vec<TaskId> = self.sched.nodes()[node].queue.iter().take(k).copied().collect();
        for t in queue {
            if self.prefetched[node].contains_key(&t) {
                continue;
            }
            let arrive = now + self.costs[&t].fetch_ms;
            self.prefetched[node].insert(t, arrive);
            self.log.push(now, EventKind::Prefetch, Some(node as NodeId), Some(t));
            self.push(arrive, Ev::DataReady(node, t));
        }
    }

    fn dispatch(&mut self, node: usize, now: f64) -> Result<(), SimError> {
        let id = node as NodeId;
        let Some((task, src)) = self.sched.next_task(id)? else {
            self.log.push(now, EventKind::Idle, Some(id), None);
            return Ok(());
        };
        if src == Source::Pool {
            self.steals += 1;
            self.log.push(now, EventKind::Steal, Some(id), Some(task));
        }
        let fetch = self.costs[&task].fetch_ms;
        let start = match self.prefetched[node].remove(&task) {
            Some(arrive) if arrive <= now => now,
            Some(arrive) => {
                self.stalls += 1;
                self.log.push(now, EventKind::Stall, Some(id), Some(task));
                arrive
            }
            None => {
                self.colds += 1;
                self.log.push(now, EventKind::Cold, Some(id), Some(task));
                now + fetch
            }
        };
        let exec = self.exec_ms(node, task);
        self.running[node] = Some((task, exec, fetch));
        self.push(start, Ev::Start(node, task));
        self.push(start + exec, Ev::Finish(node, task));
        self.prefetch_window(node, now);
        Ok(())
    }

    fn finish(&mut self, node: usize, task: TaskId, now: f64) -> Result<(), SimError> {
        let id = node as NodeId;
        self.log.push(now, EventKind::Finish, Some(id), Some(task));
        let (_, exec, fetch) = self.running[node].take().expect("finish without start");
        self.busy_ms[node] += exec;
        self.done[node] += 1;
        self.outstanding -= 1;
        self.last_finish = self.last_finish.max(now);
        self.prefetch[node].observe(fetch, exec);
        let k = self.prefetch[node].depth();
        let batch = self.sched.on_completion(id, exec, fetch, k)?;
        for t in batch {
            self.log.push(now, EventKind::Batch, Some(id), Some(t));
        }
        self.dispatch(node, now)
    }
}

/// Runs one job. Deterministic for fixed inputs.
pub fn simulate_job(job: &SimJob, sim: &SimConfig) -> Result<SimReport, SimError> {
    sim.validate()?;
    let tasks = job.tasks(sim.n_workers)?;
    let costs = task_costs(&tasks, &job.entries, sim)?;
    simulate_tasks(&tasks, &costs, sim)
}

/// Runs the event loop over precomputed task costs.
pub fn simulate_tasks(tasks: &[Task], costs: &[TaskCost], sim: &SimConfig) -> Result<SimReport, SimError> {
    sim.validate()?;
    let n = sim.n_workers;
    let ids: Vec<TaskId> = tasks.iter().map(|t| t.id).collect();
    let node_ids: Vec<NodeId> = (0..n as NodeId).collect();
    let mut schedule = sim.schedule.clone();
    schedule.probe_seed = rng::derive_seed(sim.seed, &[rng::TAG_PROBE, schedule.probe_seed]);
    let mut eng = Engine {
        sim,
        costs: ids.iter().copied().zip(costs.iter().copied()).collect(),
        sched: Scheduler::new(schedule.clone(), &node_ids, &ids)?,
        heap: BinaryHeap::new(),
        seq: 0,
        log: EventLog::new(),
        prefetched: vec![HashMap::new(); n],
        prefetch: vec![PrefetchController::new(sim.prefetch_margin, schedule.ewma_alpha); n],
        running: vec![None; n],
        busy_ms: vec![0.0; n],
        done: vec![0; n],
        outstanding: tasks.len(),
        stalls: 0,
        colds: 0,
        steals: 0,
        last_finish: sim.startup_ms,
    };

    eng.log.push(0.0, EventKind::Startup, None, None);
    let t0 = sim.startup_ms;
    eng.log.push(t0, EventKind::Ready, None, None);
    for (node, task) in eng.sched.probe()? {
        eng.log.push(t0, EventKind::Assign, Some(node), Some(task));
    }
    for node in 0..n {
        eng.dispatch(node, t0)?;
    }
    if let Some(iv) = sim.monitor_interval_ms {
        if eng.outstanding > 0 {
            eng.push(t0 + iv, Ev::Monitor);
        }
    }
    let mut snapshots = 0;
    while let Some(q) = eng.heap.pop() {
        let now = q.at;
        match q.ev {
            Ev::Start(node, task) => eng.log.push(now, EventKind::Start, Some(node as NodeId), Some(task)),
            Ev::DataReady(node, task) => eng.log.push(now, EventKind::DataReady, Some(node as NodeId), Some(task)),
            Ev::Finish(node, task) => eng.finish(node, task, now)?,
            Ev::Monitor => {
                if eng.outstanding > 0 {
                    snapshots += 1;
                    eng.log.push(now, EventKind::Monitor, None, None);
                    eng.push(now + sim.monitor_interval_ms.unwrap(), Ev::Monitor);
                }
            }
        }
    }
    debug_assert!(eng.sched.is_drained());
    let makespan = eng.last_finish;
    eng.log.push(makespan, EventKind::Done, None, None);

    let processing = (makespan - t0).max(f64::MIN_POSITIVE);
    let total_bytes: u64 = tasks.iter().map(|t| t.size_bytes).sum();
    let total_work_ms = costs
        .iter()
        .map(|c| c.compute_ms * (1.0 + sim.runtime_tax) * sim.monitor_factor())
        .sum();
    Ok(SimReport {
        makespan_ms: makespan,
        startup_ms: t0,
        throughput_bytes_per_s: if makespan > 0.0 { total_bytes as f64 / (makespan / 1000.0) } else { 0.0 },
        utilization: eng.busy_ms.iter().map(|b| (b / processing).clamp(0.0, 1.0)).collect(),
        tasks_per_node: eng.done.clone(),
        n_tasks: tasks.len(),
        total_bytes,
        stall_count: eng.stalls,
        cold_count: eng.colds,
        steal_count: eng.steals,
        monitor_snapshots: snapshots,
        total_work_ms,
        events: eng.log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> SimConfig {
        SimConfig {
            latency: LatencyModel::new(0.0, 0.0),
            bandwidth_bytes_per_ms: 0.0,
            ..SimConfig::default()
        }
    }

    fn job(n: usize, size: u64, knee: u64) -> SimJob {
        let entries: Vec<(u64, u64)> = (0..n as u64).map(|i| (i, size)).collect();
        let spec = SubsampleSpec::new(0.1, 2, 0.98, 3).unwrap();
        SimJob::new(entries, spec, KneepointReport::new(knee, Default::default(), size as f64))
    }

    #[test]
    fn single_worker_is_serial_sum() {
        let sim = SimConfig { n_workers: 1, ..quiet() };
        let j = job(10, 1024, 2048);
        let r = simulate_job(&j, &sim).unwrap();
        let tasks = j.tasks(1).unwrap();
        let costs = task_costs(&tasks, &j.entries, &sim).unwrap();
        let serial: f64 = costs.iter().map(|c| c.compute_ms).sum();
        assert!((r.makespan_ms - (sim.startup_ms + serial)).abs() < 1e-6);
    }

    #[test]
    fn deterministic_and_monotone() {
        let sim = SimConfig { n_workers: 3, seed: 9, ..SimConfig::default() };
        let j = job(30, 2048, 4096);
        let a = simulate_job(&j, &sim).unwrap();
        let b = simulate_job(&j, &sim).unwrap();
        assert_eq!(a, b);
        assert!(a.events.is_monotone());
        assert!(a.events.work_conservation_violations().is_empty());
        assert_eq!(a.tasks_per_node.iter().sum::<usize>(), a.n_tasks);
    }

    #[test]
    fn monitor_snapshots_only_when_enabled() {
        let j = job(40, 4096, 4096);
        let off = simulate_job(&j, &SimConfig::default()).unwrap();
        assert_eq!(off.events.count(EventKind::Monitor), 0);
        let on = simulate_job(
            &j,
            &SimConfig { monitor_interval_ms: Some(0.05), monitor_cost_ms: 0.001, ..SimConfig::default() },
        )
        .unwrap();
        assert!(on.monitor_snapshots > 0);
        assert!(on.makespan_ms > off.makespan_ms);
    }

    #[test]
    fn rejects_bad_config() {
        let j = job(4, 64, 64);
        assert!(simulate_job(&j, &SimConfig { n_workers: 0, ..SimConfig::default() }).is_err());
        assert!(simulate_job(&j, &SimConfig { speeds: vec![1.0], ..SimConfig::default() }).is_err());
    }
}
