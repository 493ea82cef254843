//! Scheduling event log, shared by the real runtime and the simulator.
//!
//! Serialized as CSV with the header `timestamp_ms,event,node_id,task_id`;
//! absent node or task ids are written as empty fields.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use crate::{NodeId, TaskId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    /// Start of the job's one-time startup phase.
    Startup,
    /// Processing phase begins.
    Ready,
    /// Probe-round assignment of one task to a node.
    Assign,
    /// A task moved from the pending pool into a node's queue.
    Batch,
    /// A node with an empty queue pulled a task straight from the pool.
    Steal,
    /// A prefetch was issued for a queued task.
    Prefetch,
    /// A task's data arrived at its worker.
    DataReady,
    /// A dequeued task's data was never prefetched; the worker fetched it
    /// on demand.
    Cold,
    /// A prefetched task's data had not arrived when the task was dequeued.
    Stall,
    Start,
    Finish,
    /// A node found neither queued nor pending work.
    Idle,
    Monitor,
    Failover,
    Failure,
    Abort,
    Restart,
    Done,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Startup => "STARTUP",
            EventKind::Ready => "READY",
            EventKind::Assign => "ASSIGN",
            EventKind::Batch => "BATCH",
            EventKind::Steal => "STEAL",
            EventKind::Prefetch => "PREFETCH",
            EventKind::DataReady => "DATA_READY",
            EventKind::Cold => "COLD",
            EventKind::Stall => "STALL",
            EventKind::Start => "START",
            EventKind::Finish => "FINISH",
            EventKind::Idle => "IDLE",
            EventKind::Monitor => "MONITOR",
            EventKind::Failover => "FAILOVER",
            EventKind::Failure => "FAILURE",
            EventKind::Abort => "ABORT",
            EventKind::Restart => "RESTART",
            EventKind::Done => "DONE",
        }
    }

    /// Events that remove a task from the pending pool.
    pub fn dequeues_pool(self) -> bool {
        matches!(self, EventKind::Assign | EventKind::Batch | EventKind::Steal)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        const ALL: [EventKind; 18] = [
            EventKind::Startup,
            EventKind::Ready,
            EventKind::Assign,
            EventKind::Batch,
            EventKind::Steal,
            EventKind::Prefetch,
            EventKind::DataReady,
            EventKind::Cold,
            EventKind::Stall,
            EventKind::Start,
            EventKind::Finish,
            EventKind::Idle,
            EventKind::Monitor,
            EventKind::Failover,
            EventKind::Failure,
            EventKind::Abort,
            EventKind::Restart,
            EventKind::Done,
        ];
        ALL.iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown event {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub timestamp_ms: f64,
    pub kind: EventKind,
    pub node: Option<NodeId>,
    pub task: Option<TaskId>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    events: Vec<Event>,
}

pub const EVENT_LOG_HEADER: &str = "timestamp_ms,event,node_id,task_id";

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, timestamp_ms: f64, kind: EventKind, node: Option<NodeId>, task: Option<TaskId>) {
        self.events.push(Event {
            timestamp_ms,
            kind,
            node,
            task,
        });
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn extend(&mut self, other: &EventLog) {
        self.events.extend_from_slice(&other.events);
    }

    /// True when timestamps never decrease.
    pub fn is_monotone(&self) -> bool {
        self.events
            .windows(2)
            .all(|w| w[0].timestamp_ms <= w[1].timestamp_ms)
    }

    /// Instants where a node reported `Idle` while work was still taken
    /// from the pending pool afterwards. Empty for a work-conserving run.
    pub fn work_conservation_violations(&self) -> Vec<Event> {
        let mut last_pool_dequeue = None;
        for (i, e) in self.events.iter().enumerate() {
            if e.kind.dequeues_pool() {
                last_pool_dequeue = Some(i);
            }
        }
        let Some(last) = last_pool_dequeue else {
            return Vec::new();
        };
        self.events[..last]
            .iter()
            .filter(|e| e.kind == EventKind::Idle)
            .copied()
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{EVENT_LOG_HEADER}")?;
        for e in &self.events {
            let node = e.node.map(|n| n.to_string()).unwrap_or_default();
            let task = e.task.map(|t| t.to_string()).unwrap_or_default();
            writeln!(w, "{:.3},{},{},{}", e.timestamp_ms, e.kind, node, task)?;
        }
        w.flush()
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec");
        String::from_utf8(buf).expect("ascii")
    }

    pub fn parse_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == EVENT_LOG_HEADER => {}
            other => return Err(format!("bad header {other:?}")),
        }
        let mut log = EventLog::new();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(format!("line {}: expected 4 fields", i + 2));
            }
            let ts = f[0].parse::<f64>().map_err(|e| format!("line {}: {e}", i + 2))?;
            let kind = f[1].parse::<EventKind>()?;
            let node = if f[2].is_empty() {
                None
            } else {
                Some(f[2].parse().map_err(|e| format!("line {}: {e}", i + 2))?)
            };
            let task = if f[3].is_empty() {
                None
            } else {
                Some(f[3].parse().map_err(|e| format!("line {}: {e}", i + 2))?)
            };
            log.push(ts, kind, node, task);
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip() {
        let mut log = EventLog::new();
        log.push(0.0, EventKind::Startup, None, None);
        log.push(1.5, EventKind::Assign, Some(2), Some(17));
        let text = log.to_csv_string();
        assert!(text.starts_with("timestamp_ms,event,node_id,task_id\n0.000,STARTUP,,\n"));
        assert_eq!(EventLog::parse_csv(&text).unwrap(), log);
    }

    #[test]
    fn idle_before_a_later_dequeue_is_a_violation() {
        let mut log = EventLog::new();
        log.push(0.0, EventKind::Assign, Some(0), Some(1));
        log.push(1.0, EventKind::Idle, Some(1), None);
        log.push(2.0, EventKind::Batch, Some(0), Some(2));
        assert_eq!(log.work_conservation_violations().len(), 1);

        let mut ok = EventLog::new();
        ok.push(0.0, EventKind::Batch, Some(0), Some(1));
        ok.push(1.0, EventKind::Idle, Some(1), None);
        assert!(ok.work_conservation_violations().is_empty());
    }
}
