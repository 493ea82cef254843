//! Replicated in-memory sample store.
//!
//! Data nodes hold whole samples in memory. Every sample has an ordered
//! replica list in a [`ReplicaPlan`]; readers try replicas in order and fail
//! over on timeout. Workers prefetch the samples of their next K queued
//! tasks into a bounded local cache, and a feedback controller grows or
//! shrinks the replica set based on fetch latency against the per-task
//! budget.

mod node;
mod plan;
mod prefetch;
mod replication;

pub use node::{fetch, DataNode, DataTransport, FetchResult, LatencyModel, SimNodeState, SimTransport, TransportError};
pub use plan::{build_initial_plan, ReplicaPlan};
pub use prefetch::{compute_prefetch_depth, prefetch_for_queue, LocalCache, PrefetchController, DEFAULT_CACHE_BYTES, EPSILON_MS};
pub use replication::{adapt_replication, Decision, InterferenceMonitor, ReplicationConfig, ReplicationController};

use crate::NodeId;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DataError {
    #[error("no data nodes")]
    NoDataNodes,
    #[error("empty manifest")]
    EmptyManifest,
    #[error("sample {0} unavailable")]
    SampleUnavailable(u64),
    #[error("sample {0} not in replica plan")]
    NotInPlan(u64),
    #[error("corrupt payload for sample {id}: expected {expected} bytes, got {actual}")]
    CorruptPayload { id: u64, expected: u64, actual: u64 },
    #[error("empty statistics window")]
    EmptyStats,
    #[error("cannot drop below {r_min} replicas")]
    BelowMinimum { r_min: usize },
    #[error("node {0} already in plan")]
    DuplicateNode(NodeId),
    #[error("replica plan invariant violated: {0}")]
    Invariant(String),
}
