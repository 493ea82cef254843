//! Master: stages data, sizes tasks, drives the scheduler over worker
//! connections, shuffles results to itself and reduces them.
//!
//! Each connection has a reader thread that forwards frames into one
//! channel; the scheduler loop consumes that channel, so every scheduler
//! decision is serialized.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, BufReader};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::datanode::put_samples;
use super::frame::{read_frame, write_frame, Frame, FrameType};
use super::wire::{self, JobSetup, MonitorSnapshot, TaskResult, WireTask};
use super::{ClusterConfig, JobResult, JobSpec, RuntimeError, SizingDirective};
use crate::cache_model;
use crate::datalayer::build_initial_plan;
use crate::eventlog::{EventKind, EventLog};
use crate::rng;
use crate::scheduler::{Scheduler, Source};
use crate::sizing::{self, KneepointReport, Task};
use crate::workload::{self, Dataset, IntermediateResult};
use crate::{NodeId, TaskId};

const REGISTER_READ_TIMEOUT: Duration = Duration::from_secs(5);

enum Msg {
    Registered { conn: u64, name: String, stream: TcpStream },
    Frame { conn: u64, frame: Frame },
    Closed { conn: u64 },
}

struct WorkerConn {
    conn: u64,
    name: String,
    stream: TcpStream,
    last_seen: Instant,
}

impl WorkerConn {
    fn send(&mut self, f: &Frame) -> io::Result<()> {
        write_frame(&mut self.stream, f)
    }
}

pub struct Master {
    addr: SocketAddr,
    pub(super) cluster: ClusterConfig,
    rx: Receiver<Msg>,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl Master {
    pub fn bind(addr: impl ToSocketAddrs, cluster: ClusterConfig) -> Result<Self, RuntimeError> {
        if cluster.n_workers == 0 || cluster.data_nodes.is_empty() {
            return Err(RuntimeError::InvalidSpec("roster needs at least one worker and one data node".into()));
        }
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (tx, rx) = mpsc::channel();
        let stop = Arc::new(AtomicBool::new(false));
        let acceptor = {
            let stop = stop.clone();
            thread::Builder::new()
                .name("master-accept".into())
                .spawn(move || accept_loop(listener, tx, stop))?
        };
        log::info!("master listening on {addr}");
        Ok(Self {
            addr,
            cluster,
            rx,
            stop,
            acceptor: Some(acceptor),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Runs the job to completion, restarting it from scratch on any worker
    /// failure up to `spec.restart_cap` times.
    pub fn run_job(&mut self, spec: &JobSpec) -> Result<JobResult, RuntimeError> {
        spec.validate()?;
        let t0 = Instant::now();
        let mut log = EventLog::new();
        let ms = |t0: Instant| t0.elapsed().as_secs_f64() * 1000.0;
        log.push(0.0, EventKind::Startup, None, None);

        let dataset = Dataset::load(&spec.manifest)?;
        let ids: Vec<u64> = dataset.manifest().iter().map(|e| e.id).collect();
        let data_ids: Vec<NodeId> = self.cluster.data_nodes.iter().map(|d| d.0).collect();
        let plan = build_initial_plan(&ids, &data_ids, rng::derive_seed(spec.seed, &[rng::TAG_PLAN]))?;
        for (node, addr) in &self.cluster.data_nodes {
            let mine = dataset
                .samples()
                .iter()
                .filter(|s| plan.replicas(s.id).is_some_and(|r| r.contains(node)))
                .map(|s| (s.id, s.to_bytes()))
                .collect::<Vec<_>>();
            let n = put_samples(addr, mine.iter().map(|(id, b)| (*id, b.as_slice())))?;
            log::info!("staged {n} samples on data node {node}");
        }

        let report = size_tasks(&dataset, spec)?;
        let entries: Vec<(u64, u64)> = dataset.manifest().iter().map(|e| (e.id, e.size_bytes)).collect();
        let reps = spec.repetition_range();
        let tasks: Vec<Task> = if reps.is_empty() {
            Vec::new()
        } else {
            sizing::pack_entries(&entries, &report, &spec.subsample, reps.clone(), 0)
        };
        let by_id: BTreeMap<TaskId, &Task> = tasks.iter().map(|t| (t.id, t)).collect();
        let sizes: HashMap<u64, u64> = entries.iter().copied().collect();

        let mut restarts = 0u32;
        let mut startup_ms = None;
        let mut monitor_snapshots = 0usize;
        let mut spare: Vec<WorkerConn> = Vec::new();
        let mut attempt = 0u32;
        let parts = loop {
            let mut workers = self.register(&mut spare, attempt)?;
            let t_ready = ms(t0);
            startup_ms.get_or_insert(t_ready);
            log.push(t_ready, EventKind::Ready, None, None);
            let setup = JobSetup {
                attempt,
                spec: spec.subsample,
                kneepoint_bytes: report.kneepoint_bytes,
                samples_per_task: report.samples_per_task,
                avg_sample_size_bytes: report.avg_sample_size_bytes,
                monitor_interval_ms: spec.monitor_interval_ms.unwrap_or(0.0),
                heartbeat_interval_ms: self.cluster.heartbeat_interval_ms,
                prefetch_margin: spec.prefetch_margin as u32,
                fetch_deadline_ms: spec.fetch_deadline_ms,
                data_nodes: self.cluster.data_nodes.clone(),
                plan: plan.clone(),
            };
            let mut run = Attempt {
                workers: &mut workers,
                by_id: &by_id,
                sizes: &sizes,
                log: &mut log,
                t0,
                monitor_snapshots: 0,
                late: Vec::new(),
            };
            let outcome = run.drive(&self.rx, &self.cluster, &setup, spec);
            monitor_snapshots += run.monitor_snapshots;
            spare.append(&mut run.late);
            match outcome {
                Ok(parts) => {
                    for w in workers.iter_mut().chain(spare.iter_mut()) {
                        let _ = w.send(&Frame::empty(FrameType::Done));
                    }
                    break parts;
                }
                Err(reason) => {
                    log::warn!("attempt {attempt} failed: {reason}");
                    log.push(ms(t0), EventKind::Failure, None, None);
                    for w in &mut workers {
                        let _ = w.send(&wire::abort_frame(&reason));
                        let _ = w.stream.shutdown(Shutdown::Write);
                    }
                    log.push(ms(t0), EventKind::Abort, None, None);
                    restarts += 1;
                    if restarts > spec.restart_cap {
                        for w in &mut spare {
                            let _ = w.send(&wire::abort_frame(&reason));
                        }
                        return Err(RuntimeError::RestartCapExceeded { restarts: spec.restart_cap, last: reason });
                    }
                    log.push(ms(t0), EventKind::Restart, None, None);
                    attempt += 1;
                }
            }
        };

        let statistic = if parts.is_empty() {
            None
        } else {
            Some(workload::reduce_combine(&parts)?)
        };
        let wall = ms(t0);
        log.push(wall, EventKind::Done, None, None);
        Ok(JobResult {
            statistic,
            wall_ms: wall,
            startup_ms: startup_ms.unwrap_or(0.0),
            restarts,
            n_tasks: tasks.len(),
            kneepoint_bytes: report.kneepoint_bytes,
            monitor_snapshots,
            events: log,
        })
    }

    /// Waits for the roster. Connections that arrive while a previous
    /// attempt ran are used first.
    fn register(&self, spare: &mut Vec<WorkerConn>, attempt: u32) -> Result<Vec<WorkerConn>, RuntimeError> {
        let want = self.cluster.n_workers;
        let mut got: Vec<WorkerConn> = std::mem::take(spare);
        let until = Instant::now() + Duration::from_millis(self.cluster.register_timeout_ms);
        while got.len() < want {
            let left = until.saturating_duration_since(Instant::now());
            match self.rx.recv_timeout(left) {
                Ok(Msg::Registered { conn, name, stream }) => {
                    log::info!("worker {name} registered (attempt {attempt})");
                    got.push(WorkerConn {
                        conn,
                        name,
                        stream,
                        last_seen: Instant::now(),
                    });
                }
                Ok(Msg::Closed { conn }) => got.retain(|w| w.conn != conn),
                Ok(Msg::Frame { .. }) => {}
                Err(_) => break,
            }
        }
        if got.len() < want {
            // A restarted job may go ahead with the survivors.
            if attempt == 0 || got.is_empty() {
                return Err(RuntimeError::Roster {
                    expected: want,
                    registered: got.len(),
                });
            }
            log::warn!("attempt {attempt}: continuing with {} of {want} workers", got.len());
        }
        spare.extend(got.drain(want.min(got.len())..));
        Ok(got)
    }
}

impl Master {
    /// Stops accepting and turns away anyone still waiting to register.
    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
        while let Ok(msg) = self.rx.try_recv() {
            if let Msg::Registered { mut stream, .. } = msg {
                let _ = write_frame(&mut stream, &wire::abort_frame("master shutting down"));
                let _ = stream.shutdown(Shutdown::Both);
            }
        }
    }
}

impl Drop for Master {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(listener: TcpListener, tx: Sender<Msg>, stop: Arc<AtomicBool>) {
    let next = AtomicU64::new(0);
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let conn = next.fetch_add(1, Ordering::SeqCst);
                let tx = tx.clone();
                thread::spawn(move || {
                    if let Err(e) = connection(conn, stream, &tx) {
                        log::debug!("connection {conn} from {peer}: {e}");
                    }
                    let _ = tx.send(Msg::Closed { conn });
                });
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(5));
            }
        }
    }
}

fn connection(conn: u64, stream: TcpStream, tx: &Sender<Msg>) -> Result<(), RuntimeError> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(REGISTER_READ_TIMEOUT))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let hello = read_frame(&mut reader)?;
    let name = wire::parse_register(&hello)?;
    stream.set_read_timeout(None)?;
    if tx.send(Msg::Registered { conn, name, stream }).is_err() {
        return Ok(());
    }
    loop {
        let frame = read_frame(&mut reader)?;
        if tx.send(Msg::Frame { conn, frame }).is_err() {
            return Ok(());
        }
    }
}

fn size_tasks(dataset: &Dataset, spec: &JobSpec) -> Result<KneepointReport, RuntimeError> {
    let avg = dataset.avg_sample_size();
    Ok(match &spec.sizing {
        SizingDirective::Report(r) => r.clone(),
        SizingDirective::Bytes(b) => KneepointReport::new(*b, Default::default(), avg),
        SizingDirective::Profile {
            sizes,
            cache,
            relative_noise,
        } => {
            let curve = cache_model::profile_curve(dataset, &spec.subsample, sizes, cache)?;
            sizing::find_kneepoint_on_curve(&curve, *relative_noise, avg)?
        }
    })
}

struct Attempt<'a> {
    workers: &'a mut Vec<WorkerConn>,
    by_id: &'a BTreeMap<TaskId, &'a Task>,
    sizes: &'a HashMap<u64, u64>,
    log: &'a mut EventLog,
    t0: Instant,
    monitor_snapshots: usize,
    late: Vec<WorkerConn>,
}

impl Attempt<'_> {
    fn now(&self) -> f64 {
        self.t0.elapsed().as_secs_f64() * 1000.0
    }

    fn send_task(&mut self, node: usize, id: TaskId, reps: &std::ops::Range<u32>) -> Result<(), String> {
        let t = self.by_id[&id];
        let wt = WireTask {
            id,
            repetitions: reps.clone(),
            samples: t.sample_ids.iter().map(|s| (*s, self.sizes[s])).collect(),
        };
        self.workers[node]
            .send(&wt.to_frame())
            .map_err(|e| format!("send to {}: {e}", self.workers[node].name))
    }

    /// One execution of the job. `Err` carries the failure reason.
    fn drive(&mut self, rx: &Receiver<Msg>, cluster: &ClusterConfig, setup: &JobSetup, spec: &JobSpec) -> Result<Vec<IntermediateResult>, String> {
        for w in self.workers.iter_mut() {
            w.send(&setup.to_frame()).map_err(|e| format!("send setup to {}: {e}", w.name))?;
        }
        let node_ids: Vec<NodeId> = (0..self.workers.len() as NodeId).collect();
        let task_ids: Vec<TaskId> = self.by_id.keys().copied().collect();
        let mut sched_cfg = spec.schedule.clone();
        sched_cfg.probe_seed = rng::derive_seed(spec.seed, &[rng::TAG_PROBE, u64::from(setup.attempt)]);
        let mut sched = Scheduler::new(sched_cfg, &node_ids, &task_ids).map_err(|e| e.to_string())?;
        let reps = spec.repetition_range();
        for (node, id) in sched.probe().map_err(|e| e.to_string())? {
            self.send_task(node as usize, id, &reps)?;
            let now = self.now();
            self.log.push(now, EventKind::Assign, Some(node), Some(id));
            sched.next_task(node).map_err(|e| e.to_string())?;
            self.log.push(now, EventKind::Start, Some(node), Some(id));
        }
        let mut results: BTreeMap<TaskId, Vec<IntermediateResult>> = BTreeMap::new();
        let beat = Duration::from_secs_f64(cluster.heartbeat_interval_ms / 1000.0);
        let dead_after = beat * cluster.heartbeat_misses;
        while results.len() < task_ids.len() {
            let msg = match rx.recv_timeout(beat) {
                Ok(m) => Some(m),
                Err(RecvTimeoutError::Timeout) => None,
                Err(RecvTimeoutError::Disconnected) => return Err("acceptor stopped".into()),
            };
            match msg {
                Some(Msg::Registered { conn, name, stream }) => {
                    // Joins at the next attempt, or is released at the end.
                    log::info!("worker {name} registered mid-attempt, held for later");
                    self.late.push(WorkerConn {
                        conn,
                        name,
                        stream,
                        last_seen: Instant::now(),
                    });
                }
                Some(Msg::Closed { conn }) => {
                    self.late.retain(|w| w.conn != conn);
                    if let Some(w) = self.workers.iter().find(|w| w.conn == conn) {
                        return Err(format!("worker {} disconnected", w.name));
                    }
                }
                Some(Msg::Frame { conn, frame }) => {
                    let Some(node) = self.workers.iter().position(|w| w.conn == conn) else {
                        continue;
                    };
                    self.workers[node].last_seen = Instant::now();
                    match frame.kind {
                        FrameType::Heartbeat => {}
                        FrameType::Monitor => {
                            let snap = MonitorSnapshot::from_frame(&frame).map_err(|e| e.to_string())?;
                            log::debug!("monitor from {}: {snap:?}", self.workers[node].name);
                            self.monitor_snapshots += 1;
                            let now = self.now();
                            self.log.push(now, EventKind::Monitor, Some(node as NodeId), None);
                        }
                        FrameType::Abort => {
                            let why = wire::parse_abort(&frame).unwrap_or_default();
                            return Err(format!("worker {} aborted: {why}", self.workers[node].name));
                        }
                        FrameType::Result => {
                            let r = TaskResult::from_frame(&frame).map_err(|e| e.to_string())?;
                            self.complete(&mut sched, node, r, &mut results, &reps)?;
                        }
                        other => return Err(format!("unexpected {other:?} from {}", self.workers[node].name)),
                    }
                }
                None => {}
            }
            if let Some(w) = self.workers.iter().find(|w| w.last_seen.elapsed() > dead_after) {
                return Err(format!("worker {} missed {} heartbeats", w.name, cluster.heartbeat_misses));
            }
        }
        Ok(results.into_values().flatten().collect())
    }

    fn complete(
        &mut self,
        sched: &mut Scheduler,
        node: usize,
        r: TaskResult,
        results: &mut BTreeMap<TaskId, Vec<IntermediateResult>>,
        reps: &std::ops::Range<u32>,
    ) -> Result<(), String> {
        let nid = node as NodeId;
        if sched.node(nid).and_then(|n| n.inflight) != Some(r.task_id) {
            return Err(format!("result for task {} that node {nid} was not running", r.task_id));
        }
        let now = self.now();
        self.log.push(now, EventKind::Finish, Some(nid), Some(r.task_id));
        results.insert(r.task_id, r.parts);
        let batch = sched
            .on_completion(nid, r.exec_ms.max(0.0), r.fetch_ms.max(0.0), r.prefetch_depth as usize)
            .map_err(|e| e.to_string())?;
        for id in batch {
            self.send_task(node, id, reps)?;
            self.log.push(now, EventKind::Batch, Some(nid), Some(id));
        }
        match sched.next_task(nid).map_err(|e| e.to_string())? {
            Some((id, Source::Queue)) => self.log.push(now, EventKind::Start, Some(nid), Some(id)),
            Some((id, Source::Pool)) => {
                self.send_task(node, id, reps)?;
                self.log.push(now, EventKind::Steal, Some(nid), Some(id));
                self.log.push(now, EventKind::Start, Some(nid), Some(id));
            }
            None => self.log.push(now, EventKind::Idle, Some(nid), None),
        }
        Ok(())
    }
}
