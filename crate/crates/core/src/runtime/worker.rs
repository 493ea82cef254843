//! Worker process: executes tasks from its queue while a prefetch thread
//! pulls the samples of the next K queued tasks from the data nodes.
//!
//! Threads per session: the reader (caller's thread), a writer that owns
//! the outbound half of the socket, the executor, the prefetcher, the
//! heartbeat, and an optional monitor.

use std::collections::{HashMap, HashSet, VecDeque};
use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, TcpStream};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::datanode::TcpTransport;
use super::frame::{read_frame, write_frame, Frame, FrameType};
use super::wire::{self, JobSetup, MonitorSnapshot, TaskResult, WireTask};
use super::RuntimeError;
use crate::datalayer::{self, LocalCache, PrefetchController, DEFAULT_CACHE_BYTES};
use crate::stats::{self, Window};
use crate::workload::{self, Sample};

#[derive(Debug, Clone)]
pub struct WorkerOptions {
    pub name: String,
    /// Drop the master connection after this many completed tasks in the
    /// first session, as if the process had died.
    pub crash_after_tasks: Option<u64>,
    /// Crash in every session rather than only the first.
    pub crash_every_session: bool,
    /// Reconnect after an abort or an injected crash, as a supervisor
    /// restarting the process would.
    pub respawn: bool,
    pub cache_bytes: u64,
    /// How long a respawned worker keeps retrying the master.
    pub reconnect_window_ms: u64,
}

impl Default for WorkerOptions {
    fn default() -> Self {
        Self {
            name: "worker".into(),
            crash_after_tasks: None,
            crash_every_session: false,
            respawn: true,
            cache_bytes: DEFAULT_CACHE_BYTES,
            reconnect_window_ms: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WorkerSummary {
    pub sessions: u32,
    pub tasks_done: u64,
    pub crashed: bool,
}

#[derive(Debug, Clone, PartialEq)]
enum Outcome {
    Done,
    Aborted(String),
    Crashed,
    Lost(String),
}

#[derive(Default)]
struct QueueState {
    queue: VecDeque<WireTask>,
    outcome: Option<Outcome>,
    tasks_done: u64,
    requested: HashSet<u64>,
}

struct Shared {
    state: Mutex<QueueState>,
    cv: Condvar,
    cache: Mutex<LocalCache>,
    fetch_times: Mutex<HashMap<u64, f64>>,
    recent_fetch: Mutex<Window>,
    prefetch: Mutex<PrefetchController>,
}

impl Shared {
    fn finish(&self, outcome: Outcome) {
        let mut st = self.state.lock().unwrap();
        if st.outcome.is_none() {
            st.outcome = Some(outcome);
        }
        self.cv.notify_all();
    }

    fn finished(&self) -> bool {
        self.state.lock().unwrap().outcome.is_some()
    }

    /// Sleeps up to `d`, returning early once the session has ended.
    fn sleep(&self, d: Duration) -> bool {
        let st = self.state.lock().unwrap();
        let (st, _) = self.cv.wait_timeout_while(st, d, |s| s.outcome.is_none()).unwrap();
        st.outcome.is_some()
    }
}

fn connect(addr: &str, window_ms: u64) -> Result<TcpStream, RuntimeError> {
    let until = Instant::now() + Duration::from_millis(window_ms);
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() >= until => return Err(RuntimeError::Connect(format!("{addr}: {e}"))),
            Err(_) => thread::sleep(Duration::from_millis(20)),
        }
    }
}

/// Serves jobs from the master at `addr` until it sends DONE.
pub fn run_worker(addr: &str, opts: &WorkerOptions) -> Result<WorkerSummary, RuntimeError> {
    let mut summary = WorkerSummary::default();
    loop {
        let window = if summary.sessions == 0 { 0 } else { opts.reconnect_window_ms };
        let stream = connect(addr, window)?;
        let crash_after = if summary.sessions == 0 || opts.crash_every_session {
            opts.crash_after_tasks
        } else {
            None
        };
        summary.sessions += 1;
        let (outcome, done) = session(stream, opts, crash_after)?;
        summary.tasks_done += done;
        log::info!("{}: session {} ended: {outcome:?}", opts.name, summary.sessions);
        match outcome {
            Outcome::Done => return Ok(summary),
            Outcome::Crashed => summary.crashed = true,
            Outcome::Aborted(ref reason) if !opts.respawn => return Err(RuntimeError::Aborted(reason.clone())),
            Outcome::Aborted(_) => {}
            Outcome::Lost(reason) => return Err(RuntimeError::Connect(format!("lost master: {reason}"))),
        }
        if !opts.respawn {
            return Err(RuntimeError::Aborted("worker crashed".into()));
        }
    }
}

fn session(stream: TcpStream, opts: &WorkerOptions, crash_after: Option<u64>) -> Result<(Outcome, u64), RuntimeError> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut out = stream.try_clone()?;
    write_frame(&mut out, &wire::register_frame(&opts.name))?;
    let first = read_frame(&mut reader)?;
    let setup = match first.kind {
        FrameType::Kneepoint => JobSetup::from_frame(&first)?,
        FrameType::Abort => return Ok((Outcome::Aborted(wire::parse_abort(&first)?), 0)),
        FrameType::Done => return Ok((Outcome::Done, 0)),
        other => return Err(RuntimeError::Protocol(format!("expected KNEEPOINT, got {other:?}"))),
    };
    let setup = Arc::new(setup);
    let shared = Arc::new(Shared {
        state: Mutex::new(QueueState::default()),
        cv: Condvar::new(),
        cache: Mutex::new(LocalCache::new(opts.cache_bytes)),
        fetch_times: Mutex::new(HashMap::new()),
        recent_fetch: Mutex::new(Window::new(256)),
        prefetch: Mutex::new(PrefetchController::new(setup.prefetch_margin as usize, 0.5)),
    });
    let transport = Arc::new(TcpTransport::new(&setup.data_nodes));

    let (tx, rx) = mpsc::channel::<Frame>();
    let writer = {
        let mut w = BufWriter::new(stream.try_clone()?);
        thread::spawn(move || {
            for f in rx {
                if write_frame(&mut w, &f).is_err() {
                    break;
                }
            }
        })
    };
    let mut handles = Vec::new();
    {
        let (sh, tx, every) = (shared.clone(), tx.clone(), setup.heartbeat_interval_ms);
        handles.push(thread::spawn(move || {
            let d = Duration::from_secs_f64(every.max(1.0) / 1000.0);
            while !sh.sleep(d) {
                if tx.send(Frame::empty(FrameType::Heartbeat)).is_err() {
                    break;
                }
            }
        }));
    }
    if setup.monitor_interval_ms > 0.0 {
        let (sh, tx, every) = (shared.clone(), tx.clone(), setup.monitor_interval_ms);
        handles.push(thread::spawn(move || {
            let d = Duration::from_secs_f64(every / 1000.0);
            while !sh.sleep(d) {
                let (done, depth) = {
                    let st = sh.state.lock().unwrap();
                    (st.tasks_done, st.queue.len() as u32)
                };
                let p95 = stats::p95(&sh.recent_fetch.lock().unwrap().to_vec()).unwrap_or(0.0);
                let snap = MonitorSnapshot {
                    tasks_done: done,
                    queue_depth: depth,
                    fetch_p95_ms: p95,
                };
                if tx.send(snap.to_frame()).is_err() {
                    break;
                }
            }
        }));
    }
    {
        let (sh, setup, transport) = (shared.clone(), setup.clone(), transport.clone());
        handles.push(thread::spawn(move || prefetch_loop(&sh, &setup, &transport)));
    }
    {
        let (sh, setup, transport, tx) = (shared.clone(), setup.clone(), transport.clone(), tx.clone());
        let kill = stream.try_clone()?;
        handles.push(thread::spawn(move || {
            if let Err(e) = execute_loop(&sh, &setup, &transport, &tx, crash_after) {
                log::warn!("executor failed: {e}");
                let _ = tx.send(wire::abort_frame(&e.to_string()));
                sh.finish(Outcome::Aborted(e.to_string()));
            }
            if sh.state.lock().unwrap().outcome == Some(Outcome::Crashed) {
                let _ = kill.shutdown(Shutdown::Both);
            }
        }));
    }
    drop(tx);

    loop {
        match read_frame(&mut reader) {
            Ok(f) => match f.kind {
                FrameType::Task => {
                    let t = WireTask::from_frame(&f)?;
                    let mut st = shared.state.lock().unwrap();
                    st.queue.push_back(t);
                    shared.cv.notify_all();
                }
                FrameType::Done => {
                    shared.finish(Outcome::Done);
                    break;
                }
                FrameType::Abort => {
                    shared.finish(Outcome::Aborted(wire::parse_abort(&f).unwrap_or_default()));
                    break;
                }
                other => log::debug!("worker ignoring {other:?}"),
            },
            Err(e) => {
                shared.finish(Outcome::Lost(e.to_string()));
                break;
            }
        }
    }
    for h in handles {
        let _ = h.join();
    }
    let _ = stream.shutdown(Shutdown::Both);
    let _ = writer.join();
    let st = shared.state.lock().unwrap();
    Ok((st.outcome.clone().expect("set before exit"), st.tasks_done))
}

fn fetch_sample(sh: &Shared, setup: &JobSetup, transport: &TcpTransport, id: u64, size: u64) -> Result<(Arc<Vec<u8>>, f64), RuntimeError> {
    let r = datalayer::fetch(transport, &setup.plan, id, Some(size), setup.fetch_deadline_ms)?;
    if r.failovers > 0 {
        log::info!("sample {id}: served by node {} after {} failover(s)", r.node, r.failovers);
    }
    sh.recent_fetch.lock().unwrap().push(r.fetch_ms);
    Ok((r.payload, r.fetch_ms))
}

fn prefetch_loop(sh: &Shared, setup: &JobSetup, transport: &TcpTransport) {
    loop {
        let wanted: Vec<(u64, u64)> = {
            let mut st = sh.state.lock().unwrap();
            loop {
                if st.outcome.is_some() {
                    return;
                }
                let k = sh.prefetch.lock().unwrap().depth();
                let QueueState { queue, requested, .. } = &mut *st;
                let ids: Vec<(u64, u64)> = queue
                    .iter()
                    .take(k)
                    .flat_map(|t| t.samples.iter().copied())
                    .filter(|(id, _)| requested.insert(*id))
                    .collect();
                if !ids.is_empty() {
                    break ids;
                }
                st = sh.cv.wait(st).unwrap();
            }
        };
        for (id, size) in wanted {
            if sh.finished() {
                return;
            }
            match fetch_sample(sh, setup, transport, id, size) {
                Ok((payload, ms)) => {
                    sh.cache.lock().unwrap().insert(id, payload);
                    sh.fetch_times.lock().unwrap().insert(id, ms);
                }
                // The executor fetches on demand and reports the failure.
                Err(e) => log::debug!("prefetch of {id} failed: {e}"),
            }
        }
    }
}

fn execute_loop(sh: &Shared, setup: &JobSetup, transport: &TcpTransport, tx: &Sender<Frame>, crash_after: Option<u64>) -> Result<(), RuntimeError> {
    loop {
        let task = {
            let mut st = sh.state.lock().unwrap();
            loop {
                if st.outcome.is_some() {
                    return Ok(());
                }
                if let Some(t) = st.queue.pop_front() {
                    sh.cv.notify_all();
                    break t;
                }
                st = sh.cv.wait(st).unwrap();
            }
        };
        let mut fetch_ms = 0.0;
        let mut exec_ms = 0.0;
        let mut parts = Vec::new();
        for &(id, size) in &task.samples {
            let cached = sh.cache.lock().unwrap().get(id);
            let payload = match cached {
                Some(p) => {
                    fetch_ms += sh.fetch_times.lock().unwrap().get(&id).copied().unwrap_or(0.0);
                    p
                }
                None => {
                    sh.state.lock().unwrap().requested.insert(id);
                    let (p, ms) = fetch_sample(sh, setup, transport, id, size)?;
                    fetch_ms += ms;
                    p
                }
            };
            let t = Instant::now();
            let sample = Sample::from_bytes(id, &payload)?;
            for rep in task.repetitions.clone() {
                parts.push(workload::subsample(&sample, &setup.spec, rep)?);
            }
            exec_ms += t.elapsed().as_secs_f64() * 1000.0;
        }
        let depth = {
            let mut p = sh.prefetch.lock().unwrap();
            p.observe(fetch_ms, exec_ms);
            p.depth()
        };
        let done = {
            let mut st = sh.state.lock().unwrap();
            st.tasks_done += 1;
            st.tasks_done
        };
        if crash_after.is_some_and(|n| done >= n) {
            log::warn!("injected crash after {done} tasks");
            sh.finish(Outcome::Crashed);
            return Ok(());
        }
        let result = TaskResult {
            task_id: task.id,
            exec_ms,
            fetch_ms,
            prefetch_depth: depth as u32,
            parts,
        };
        if tx.send(result.to_frame()).is_err() {
            return Ok(());
        }
        sh.cv.notify_all();
    }
}
