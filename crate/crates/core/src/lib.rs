//! tinymr: a lightweight map-reduce platform for subsampling workloads.
//!
//! The crate is organized around the life of a job:
//!
//! - [`workload`]: samples, datasets, the subsampling map function and the
//!   reduce combiner, plus synthetic dataset generators.
//! - [`cache_model`]: stack-distance LRU simulation, miss-rate curves and
//!   average-memory-access-time arithmetic used to size tasks.
//! - [`sizing`]: offline kneepoint detection and online packing of samples
//!   into kneepoint-sized tasks.
//! - [`scheduler`]: the two-step pull scheduler (probe round, then
//!   feedback-sized batches) and SLO-aware cluster sizing.
//! - [`datalayer`]: the replicated in-memory sample store, failover reads,
//!   scheduler-driven prefetch and the replication controller.
//! - [`runtime`]: master/worker orchestration over a framed TCP transport,
//!   job-level recovery and the failure arithmetic that justifies it.
//! - [`sim`]: a deterministic discrete-event simulator that drives the same
//!   scheduler, data-layer and sizing code against a virtual clock.

pub mod cache_model;
pub mod config;
pub mod datalayer;
pub mod eventlog;
pub mod rng;
pub mod runtime;
pub mod scheduler;
pub mod sim;
pub mod sizing;
pub mod stats;
pub mod workload;

pub use cache_model::{AccessTrace, AmatModel, CacheConfig, CacheLevel, MissRateCurve};
pub use eventlog::{Event, EventKind, EventLog};
pub use sizing::{KneepointReport, NodePartition, Task};
pub use workload::{Dataset, IntermediateResult, JobStatistic, Sample, SubsampleSpec};

/// Identifier of a worker or data node.
pub type NodeId = u32;

/// Identifier of a packed task.
pub type TaskId = u64;
