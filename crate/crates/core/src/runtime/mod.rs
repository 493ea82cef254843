//! Master/worker job execution over framed TCP.
//!
//! Roles: one master, N workers, M data nodes. The master stages the
//! dataset onto the data nodes, sends each worker the job setup, then feeds
//! tasks through the [`Scheduler`](crate::scheduler::Scheduler). Workers
//! fetch samples from data nodes, run the subsample map, and stream
//! results back; the master reduces. Any worker failure restarts the whole
//! job with the same seed, so the aggregate never depends on failures.

mod datanode;
mod failure;
pub mod frame;
mod master;
pub mod wire;
mod worker;

pub use datanode::{put_samples, DataNodeServer, TcpTransport};
pub use failure::{expected_failures, justify_job_level_recovery, FailureModel, RecoveryReport, MINUTES_PER_MONTH};
pub use frame::{read_frame, write_frame, Frame, FrameError, FrameType};
pub use master::Master;
pub use worker::{run_worker, WorkerOptions, WorkerSummary};

use std::io;
use std::ops::Range;
use std::path::PathBuf;
use std::thread::{self, JoinHandle};

use crate::cache_model::{CacheConfig, CacheError};
use crate::config::{ConfigError, KvConfig};
use crate::datalayer::DataError;
use crate::eventlog::EventLog;
use crate::scheduler::{SchedError, ScheduleConfig};
use crate::sizing::{KneepointReport, SizingError};
use crate::workload::{self, Dataset, JobStatistic, SubsampleSpec, WorkloadError};
use crate::NodeId;

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("invalid job spec: {0}")]
    InvalidSpec(String),
    #[error("cannot connect: {0}")]
    Connect(String),
    #[error("only {registered} of {expected} workers registered")]
    Roster { expected: usize, registered: usize },
    #[error("job failed after {restarts} restarts: {last}")]
    RestartCapExceeded { restarts: u32, last: String },
    #[error("aborted: {0}")]
    Aborted(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Sizing(#[from] SizingError),
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// How the master picks the task size.
#[derive(Debug, Clone, PartialEq)]
pub enum SizingDirective {
    Report(KneepointReport),
    Bytes(u64),
    /// Profile the dataset against `cache` and search the candidates.
    Profile {
        sizes: Vec<u64>,
        cache: CacheConfig,
        relative_noise: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobSpec {
    pub manifest: PathBuf,
    pub subsample: SubsampleSpec,
    /// Defaults to every repetition.
    pub repetitions: Option<Range<u32>>,
    pub sizing: SizingDirective,
    pub schedule: ScheduleConfig,
    /// Root seed for the replica plan and probe order.
    pub seed: u64,
    /// Monitoring is off unless set.
    pub monitor_interval_ms: Option<f64>,
    pub prefetch_margin: usize,
    pub fetch_deadline_ms: f64,
    pub restart_cap: u32,
}

pub const DEFAULT_RESTART_CAP: u32 = 3;

impl JobSpec {
    pub fn new(manifest: impl Into<PathBuf>, subsample: SubsampleSpec, sizing: SizingDirective, seed: u64) -> Self {
        Self {
            manifest: manifest.into(),
            subsample,
            repetitions: None,
            sizing,
            schedule: ScheduleConfig::default(),
            seed,
            monitor_interval_ms: None,
            prefetch_margin: 1,
            fetch_deadline_ms: 1000.0,
            restart_cap: DEFAULT_RESTART_CAP,
        }
    }

    pub fn repetition_range(&self) -> Range<u32> {
        self.repetitions.clone().unwrap_or(0..self.subsample.repetitions)
    }

    pub fn validate(&self) -> Result<(), RuntimeError> {
        self.subsample.validate()?;
        self.schedule.validate()?;
        let r = self.repetition_range();
        if r.end > self.subsample.repetitions {
            return Err(RuntimeError::InvalidSpec(format!(
                "repetition range {r:?} exceeds {} repetitions",
                self.subsample.repetitions
            )));
        }
        if matches!(self.monitor_interval_ms, Some(i) if !(i > 0.0)) {
            return Err(RuntimeError::InvalidSpec("monitor interval must be > 0".into()));
        }
        if !(self.fetch_deadline_ms > 0.0) {
            return Err(RuntimeError::InvalidSpec("fetch deadline must be > 0".into()));
        }
        Ok(())
    }

    /// Keys: `manifest` (required), `fraction`, `repetitions`, `confidence`,
    /// `seed`, `kneepoint_bytes`, `rep_start`, `rep_end`, `monitor_ms`,
    /// `prefetch_margin`, `fetch_deadline_ms`, `restart_cap`, `ewma_alpha`.
    /// Without `kneepoint_bytes` the master profiles against `cache_kb`
    /// (default 96) over `sizes`.
    pub fn from_kv(c: &KvConfig) -> Result<Self, RuntimeError> {
        let seed = c.get_or("seed", 0u64)?;
        let subsample = SubsampleSpec::new(
            c.get_or("fraction", 0.1)?,
            c.get_or("repetitions", 30u32)?,
            c.get_or("confidence", 0.98)?,
            seed,
        )?;
        let sizing = match c.get::<u64>("kneepoint_bytes")? {
            Some(b) => SizingDirective::Bytes(b),
            None => {
                let kb: u64 = c.get_or("cache_kb", 96)?;
                let blocks = (kb * 1024 / crate::cache_model::DEFAULT_BLOCK_BYTES).max(1);
                SizingDirective::Profile {
                    sizes: c.get_list("sizes")?.unwrap_or_else(|| crate::cache_model::geometric_sizes(4096, kb * 1024 * 4, 1.5)),
                    cache: CacheConfig::single(blocks)?,
                    relative_noise: c.get_or("relative_noise", 0.05)?,
                }
            }
        };
        let mut spec = Self::new(c.require::<String>("manifest")?, subsample, sizing, seed);
        if c.contains("rep_start") || c.contains("rep_end") {
            spec.repetitions = Some(c.get_or("rep_start", 0u32)?..c.get_or("rep_end", subsample.repetitions)?);
        }
        spec.monitor_interval_ms = c.get("monitor_ms")?;
        spec.prefetch_margin = c.get_or("prefetch_margin", 1usize)?;
        spec.fetch_deadline_ms = c.get_or("fetch_deadline_ms", 1000.0)?;
        spec.restart_cap = c.get_or("restart_cap", DEFAULT_RESTART_CAP)?;
        spec.schedule.ewma_alpha = c.get_or("ewma_alpha", spec.schedule.ewma_alpha)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Who takes part in a job. Kept apart from [`JobSpec`] so the same job can
/// run on different rosters.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub n_workers: usize,
    pub data_nodes: Vec<(NodeId, String)>,
    pub register_timeout_ms: u64,
    pub heartbeat_interval_ms: f64,
    pub heartbeat_misses: u32,
}

impl ClusterConfig {
    pub fn new(n_workers: usize, data_nodes: Vec<(NodeId, String)>) -> Self {
        Self {
            n_workers,
            data_nodes,
            register_timeout_ms: 10_000,
            heartbeat_interval_ms: 500.0,
            heartbeat_misses: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobResult {
    /// `None` when there was nothing to compute.
    pub statistic: Option<JobStatistic>,
    pub wall_ms: f64,
    pub startup_ms: f64,
    pub restarts: u32,
    pub n_tasks: usize,
    pub kneepoint_bytes: u64,
    pub monitor_snapshots: usize,
    pub events: EventLog,
}

impl JobResult {
    pub fn aggregate(&self) -> Option<f64> {
        self.statistic.as_ref().map(|s| s.aggregate)
    }
}

/// Same computation in one process: every (sample, repetition) in order.
pub fn oracle_statistic(dataset: &Dataset, spec: &SubsampleSpec, reps: Range<u32>) -> Result<Option<JobStatistic>, RuntimeError> {
    let mut parts = Vec::new();
    for s in dataset.samples() {
        for r in reps.clone() {
            parts.push(workload::subsample(s, spec, r)?);
        }
    }
    if parts.is_empty() {
        return Ok(None);
    }
    Ok(Some(workload::reduce_combine(&parts)?))
}

pub fn run_oracle(spec: &JobSpec) -> Result<Option<JobStatistic>, RuntimeError> {
    let dataset = Dataset::load(&spec.manifest)?;
    oracle_statistic(&dataset, &spec.subsample, spec.repetition_range())
}

/// Master, workers and data nodes in one process on loopback.
pub struct LocalCluster {
    pub master: Master,
    pub data_nodes: Vec<DataNodeServer>,
    workers: Vec<JoinHandle<Result<WorkerSummary, RuntimeError>>>,
    worker_opts: Vec<WorkerOptions>,
}

impl LocalCluster {
    pub fn start(n_workers: usize, n_data_nodes: usize) -> Result<Self, RuntimeError> {
        let mut data_nodes = Vec::new();
        for i in 0..n_data_nodes {
            data_nodes.push(DataNodeServer::bind(1000 + i as NodeId, "127.0.0.1:0")?);
        }
        let roster = data_nodes.iter().map(|d| (d.node().node_id, d.addr().to_string())).collect();
        let master = Master::bind("127.0.0.1:0", ClusterConfig::new(n_workers, roster))?;
        let worker_opts = (0..n_workers)
            .map(|i| WorkerOptions {
                name: format!("worker-{i}"),
                ..WorkerOptions::default()
            })
            .collect();
        Ok(Self {
            master,
            data_nodes,
            workers: Vec::new(),
            worker_opts,
        })
    }

    pub fn worker_options_mut(&mut self, i: usize) -> &mut WorkerOptions {
        &mut self.worker_opts[i]
    }

    pub fn cluster_mut(&mut self) -> &mut ClusterConfig {
        &mut self.master.cluster
    }

    /// Starts the workers and runs the job; the workers are joined after.
    pub fn run(&mut self, spec: &JobSpec) -> Result<(JobResult, Vec<WorkerSummary>), RuntimeError> {
        let addr = self.master.addr().to_string();
        for o in &self.worker_opts {
            let (addr, o) = (addr.clone(), o.clone());
            self.workers.push(thread::spawn(move || run_worker(&addr, &o)));
        }
        let result = self.master.run_job(spec);
        if result.is_err() {
            self.master.shutdown();
        }
        let summaries: Vec<_> = self.workers.drain(..).map(|h| h.join().expect("worker thread panicked")).collect();
        let result = result?;
        let summaries = summaries.into_iter().collect::<Result<Vec<_>, _>>()?;
        Ok((result, summaries))
    }
}
