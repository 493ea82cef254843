//! Typed payloads for each frame type.

use std::ops::Range;

use super::frame::{Dec, Enc, Frame, FrameError, FrameType};
use crate::datalayer::ReplicaPlan;
use crate::sizing::KneepointReport;
use crate::workload::{IntermediateResult, SubsampleSpec};
use crate::{NodeId, TaskId};

fn expect(frame: &Frame, kind: FrameType) -> Result<(), FrameError> {
    if frame.kind != kind {
        return Err(FrameError::Malformed(format!("expected {kind:?}, got {:?}", frame.kind)));
    }
    Ok(())
}

/// Job parameters sent to a worker after it registers.
#[derive(Debug, Clone, PartialEq)]
pub struct JobSetup {
    pub attempt: u32,
    pub spec: SubsampleSpec,
    pub kneepoint_bytes: u64,
    pub samples_per_task: u64,
    pub avg_sample_size_bytes: f64,
    /// Zero disables monitoring.
    pub monitor_interval_ms: f64,
    pub heartbeat_interval_ms: f64,
    pub prefetch_margin: u32,
    pub fetch_deadline_ms: f64,
    pub data_nodes: Vec<(NodeId, String)>,
    pub plan: ReplicaPlan,
}

impl JobSetup {
    pub fn report(&self) -> KneepointReport {
        let mut r = KneepointReport::new(self.kneepoint_bytes, Default::default(), self.avg_sample_size_bytes);
        r.samples_per_task = self.samples_per_task;
        r
    }

    pub fn to_frame(&self) -> Frame {
        let mut e = Enc::new()
            .u32(self.attempt)
            .f64(self.spec.fraction)
            .u32(self.spec.repetitions)
            .f64(self.spec.confidence)
            .u64(self.spec.seed)
            .u64(self.kneepoint_bytes)
            .u64(self.samples_per_task)
            .f64(self.avg_sample_size_bytes)
            .f64(self.monitor_interval_ms)
            .f64(self.heartbeat_interval_ms)
            .u32(self.prefetch_margin)
            .f64(self.fetch_deadline_ms)
            .u32(self.data_nodes.len() as u32);
        for (id, addr) in &self.data_nodes {
            e = e.u32(*id).str(addr);
        }
        e = e.u32(self.plan.replication_factor as u32).u32(self.plan.assignment.len() as u32);
        for (sample, nodes) in &self.plan.assignment {
            e = e.u64(*sample).u32(nodes.len() as u32);
            for n in nodes {
                e = e.u32(*n);
            }
        }
        Frame::new(FrameType::Kneepoint, e.finish())
    }

    pub fn from_frame(frame: &Frame) -> Result<Self, FrameError> {
        expect(frame, FrameType::Kneepoint)?;
        let mut d = Dec::new(&frame.payload);
        let attempt = d.u32()?;
        let spec = SubsampleSpec {
            fraction: d.f64()?,
            repetitions: d.u32()?,
            confidence: d.f64()?,
            seed: d.u64()?,
        };
        let kneepoint_bytes = d.u64()?;
        let samples_per_task = d.u64()?;
        let avg_sample_size_bytes = d.f64()?;
        let monitor_interval_ms = d.f64()?;
        let heartbeat_interval_ms = d.f64()?;
        let prefetch_margin = d.u32()?;
        let fetch_deadline_ms = d.f64()?;
        let n = d.u32()?;
        let mut data_nodes = Vec::with_capacity(n as usize);
        for _ in 0..n {
            data_nodes.push((d.u32()?, d.str()?));
        }
        let replication_factor = d.u32()? as usize;
        let n = d.u32()?;
        let mut plan = ReplicaPlan {
            replication_factor,
            data_node_ids: data_nodes.iter().map(|x| x.0).collect(),
            assignment: Default::default(),
        };
        for _ in 0..n {
            let sample = d.u64()?;
            let k = d.u32()?;
            let nodes = (0..k).map(|_| d.u32()).collect::<Result<Vec<_>, _>>()?;
            plan.assignment.insert(sample, nodes);
        }
        d.end()?;
        Ok(Self {
            attempt,
            spec,
            kneepoint_bytes,
            samples_per_task,
            avg_sample_size_bytes,
            monitor_interval_ms,
            heartbeat_interval_ms,
            prefetch_margin,
            fetch_deadline_ms,
            data_nodes,
            plan,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireTask {
    pub id: TaskId,
    pub repetitions: Range<u32>,
    /// `(sample_id, size_bytes)`.
    pub samples: Vec<(u64, u64)>,
}

impl WireTask {
    pub fn to_frame(&self) -> Frame {
        let mut e = Enc::new()
            .u64(self.id)
            .u32(self.repetitions.start)
            .u32(self.repetitions.end)
            .u32(self.samples.len() as u32);
        for (id, size) in &self.samples {
            e = e.u64(*id).u64(*size);
        }
        Frame::new(FrameType::Task, e.finish())
    }

    pub fn from_frame(frame: &Frame) -> Result<Self, FrameError> {
        expect(frame, FrameType::Task)?;
        let mut d = Dec::new(&frame.payload);
        let id = d.u64()?;
        let repetitions = d.u32()?..d.u32()?;
        let n = d.u32()?;
        let samples = (0..n).map(|_| Ok((d.u64()?, d.u64()?))).collect::<Result<Vec<_>, FrameError>>()?;
        d.end()?;
        Ok(Self { id, repetitions, samples })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskResult {
    pub task_id: TaskId,
    pub exec_ms: f64,
    pub fetch_ms: f64,
    /// The worker's current prefetch depth.
    pub prefetch_depth: u32,
    pub parts: Vec<IntermediateResult>,
}

impl TaskResult {
    pub fn to_frame(&self) -> Frame {
        let mut e = Enc::new()
            .u64(self.task_id)
            .f64(self.exec_ms)
            .f64(self.fetch_ms)
            .u32(self.prefetch_depth)
            .u32(self.parts.len() as u32);
        for p in &self.parts {
            e = e.u64(p.sample_id).u32(p.repetition_index).f64(p.statistic).u64(p.count);
        }
        Frame::new(FrameType::Result, e.finish())
    }

    pub fn from_frame(frame: &Frame) -> Result<Self, FrameError> {
        expect(frame, FrameType::Result)?;
        let mut d = Dec::new(&frame.payload);
        let task_id = d.u64()?;
        let exec_ms = d.f64()?;
        let fetch_ms = d.f64()?;
        let prefetch_depth = d.u32()?;
        let n = d.u32()?;
        let parts = (0..n)
            .map(|_| {
                Ok(IntermediateResult {
                    sample_id: d.u64()?,
                    repetition_index: d.u32()?,
                    statistic: d.f64()?,
                    count: d.u64()?,
                })
            })
            .collect::<Result<Vec<_>, FrameError>>()?;
        d.end()?;
        Ok(Self {
            task_id,
            exec_ms,
            fetch_ms,
            prefetch_depth,
            parts,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorSnapshot {
    pub tasks_done: u64,
    pub queue_depth: u32,
    pub fetch_p95_ms: f64,
}

impl MonitorSnapshot {
    pub fn to_frame(&self) -> Frame {
        Frame::new(
            FrameType::Monitor,
            Enc::new().u64(self.tasks_done).u32(self.queue_depth).f64(self.fetch_p95_ms).finish(),
        )
    }

    pub fn from_frame(frame: &Frame) -> Result<Self, FrameError> {
        expect(frame, FrameType::Monitor)?;
        let mut d = Dec::new(&frame.payload);
        let s = Self {
            tasks_done: d.u64()?,
            queue_depth: d.u32()?,
            fetch_p95_ms: d.f64()?,
        };
        d.end()?;
        Ok(s)
    }
}

pub fn register_frame(name: &str) -> Frame {
    Frame::new(FrameType::Register, Enc::new().str(name).finish())
}

pub fn parse_register(frame: &Frame) -> Result<String, FrameError> {
    expect(frame, FrameType::Register)?;
    let mut d = Dec::new(&frame.payload);
    let s = d.str()?;
    d.end()?;
    Ok(s)
}

pub fn abort_frame(reason: &str) -> Frame {
    Frame::new(FrameType::Abort, Enc::new().str(reason).finish())
}

pub fn parse_abort(frame: &Frame) -> Result<String, FrameError> {
    expect(frame, FrameType::Abort)?;
    Dec::new(&frame.payload).str()
}

pub fn get_frame(sample_id: u64) -> Frame {
    Frame::new(FrameType::Get, Enc::new().u64(sample_id).finish())
}

pub fn parse_get(frame: &Frame) -> Result<u64, FrameError> {
    expect(frame, FrameType::Get)?;
    let mut d = Dec::new(&frame.payload);
    let id = d.u64()?;
    d.end()?;
    Ok(id)
}

/// PUT carries a sample to a data node, and is also the reply to GET;
/// `payload = None` means the node does not hold the sample.
pub fn put_frame(sample_id: u64, payload: Option<&[u8]>) -> Frame {
    let e = Enc::new().u64(sample_id);
    let e = match payload {
        Some(p) => e.u8(1).bytes(p),
        None => e.u8(0).bytes(&[]),
    };
    Frame::new(FrameType::Put, e.finish())
}

pub fn parse_put(frame: &Frame) -> Result<(u64, Option<Vec<u8>>), FrameError> {
    expect(frame, FrameType::Put)?;
    let mut d = Dec::new(&frame.payload);
    let id = d.u64()?;
    let found = d.u8()? != 0;
    let bytes = d.bytes()?.to_vec();
    d.end()?;
    Ok((id, found.then_some(bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datalayer::build_initial_plan;

    #[test]
    fn setup_roundtrip() {
        let plan = build_initial_plan(&[1, 2, 3], &[10, 11], 5).unwrap();
        let s = JobSetup {
            attempt: 2,
            spec: SubsampleSpec::new(0.25, 4, 0.95, 9).unwrap(),
            kneepoint_bytes: 4096,
            samples_per_task: 3,
            avg_sample_size_bytes: 1234.5,
            monitor_interval_ms: 0.0,
            heartbeat_interval_ms: 500.0,
            prefetch_margin: 1,
            fetch_deadline_ms: 250.0,
            data_nodes: vec![(10, "127.0.0.1:1".into()), (11, "127.0.0.1:2".into())],
            plan,
        };
        assert_eq!(JobSetup::from_frame(&s.to_frame()).unwrap(), s);
    }

    #[test]
    fn task_result_put_roundtrip() {
        let t = WireTask {
            id: 7,
            repetitions: 1..3,
            samples: vec![(4, 160), (5, 32)],
        };
        assert_eq!(WireTask::from_frame(&t.to_frame()).unwrap(), t);
        let r = TaskResult {
            task_id: 7,
            exec_ms: 1.5,
            fetch_ms: 0.25,
            prefetch_depth: 2,
            parts: vec![IntermediateResult {
                sample_id: 4,
                repetition_index: 1,
                statistic: 2.75,
                count: 3,
            }],
        };
        assert_eq!(TaskResult::from_frame(&r.to_frame()).unwrap(), r);
        assert_eq!(parse_put(&put_frame(3, Some(b"abc"))).unwrap(), (3, Some(b"abc".to_vec())));
        assert_eq!(parse_put(&put_frame(3, None)).unwrap(), (3, None));
        assert!(WireTask::from_frame(&put_frame(3, None)).is_err());
    }
}
