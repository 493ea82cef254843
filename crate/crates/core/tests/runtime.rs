//! Loopback runs of the master/worker runtime against the in-process oracle.

use tinymr::runtime::{oracle_statistic, JobSpec, LocalCluster, SizingDirective};
use tinymr::workload::{generate_heavy_tailed_dataset, SubsampleSpec};
use tinymr::EventKind;

fn job(dir: &std::path::Path, seed: u64) -> (JobSpec, tinymr::Dataset) {
    let ds = generate_heavy_tailed_dataset(64, 4096, seed).unwrap();
    let manifest = ds.save(dir).unwrap();
    let spec = SubsampleSpec::new(0.2, 6, 0.98, seed).unwrap();
    (JobSpec::new(manifest, spec, SizingDirective::Bytes(8192), seed), ds)
}

#[test]
fn four_workers_match_oracle_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, ds) = job(dir.path(), 11);
    let oracle = oracle_statistic(&ds, &spec.subsample, 0..6).unwrap().unwrap();
    let mut c = LocalCluster::start(4, 2).unwrap();
    let (r, workers) = c.run(&spec).unwrap();
    let got = r.statistic.clone().unwrap();
    assert_eq!(got.aggregate.to_bits(), oracle.aggregate.to_bits());
    assert_eq!(got, oracle);
    assert_eq!(r.restarts, 0);
    assert_eq!(workers.len(), 4);
    assert!(r.n_tasks > 4);
    assert!(r.wall_ms >= r.startup_ms);
    assert!(r.events.is_monotone());
    assert_eq!(r.events.count(EventKind::Finish), r.n_tasks);
    assert_eq!(r.events.count(EventKind::Monitor), 0);
}

#[test]
fn empty_repetition_range_dispatches_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let (mut spec, _) = job(dir.path(), 3);
    spec.repetitions = Some(2..2);
    let mut c = LocalCluster::start(2, 1).unwrap();
    let (r, _) = c.run(&spec).unwrap();
    assert!(r.statistic.is_none());
    assert_eq!(r.n_tasks, 0);
    assert_eq!(r.events.count(EventKind::Assign), 0);
}

#[test]
fn worker_crash_restarts_job_once() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, ds) = job(dir.path(), 5);
    let oracle = oracle_statistic(&ds, &spec.subsample, 0..6).unwrap().unwrap();
    let mut c = LocalCluster::start(4, 2).unwrap();
    c.worker_options_mut(1).crash_after_tasks = Some(2);
    let (r, workers) = c.run(&spec).unwrap();
    assert_eq!(r.restarts, 1);
    assert!(workers[1].crashed);
    assert_eq!(r.statistic.unwrap(), oracle);
}

#[test]
fn losing_one_data_replica_needs_no_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, ds) = job(dir.path(), 8);
    let oracle = oracle_statistic(&ds, &spec.subsample, 0..6).unwrap().unwrap();
    let mut c = LocalCluster::start(4, 2).unwrap();
    // Staging happens inside run, so take the node down from a side thread
    // once it holds data.
    let node = c.data_nodes[0].node().clone();
    let target = ds.len();
    let mut victim = c.data_nodes.remove(0);
    let killer = std::thread::spawn(move || {
        while node.len() < target {
            std::thread::sleep(std::time::Duration::from_millis(1));
        }
        victim.shutdown();
    });
    let (r, _) = c.run(&spec).unwrap();
    killer.join().unwrap();
    assert_eq!(r.restarts, 0);
    assert!(c.data_nodes[0].node().served_count() >= ds.len() as u64);
    assert_eq!(r.statistic.unwrap(), oracle);
}

#[test]
fn monitoring_emits_snapshots_only_when_enabled() {
    let dir = tempfile::tempdir().unwrap();
    let (mut spec, _) = job(dir.path(), 9);
    spec.monitor_interval_ms = Some(5.0);
    spec.subsample.repetitions = 200;
    let mut c = LocalCluster::start(2, 1).unwrap();
    let (r, _) = c.run(&spec).unwrap();
    assert!(r.monitor_snapshots > 0, "{r:?}");
    assert_eq!(r.events.count(EventKind::Monitor), r.monitor_snapshots);
}

#[test]
fn persistent_failure_hits_restart_cap() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, _) = job(dir.path(), 4);
    let mut c = LocalCluster::start(2, 1).unwrap();
    c.cluster_mut().register_timeout_ms = 2000;
    for i in 0..2 {
        c.worker_options_mut(i).reconnect_window_ms = 200;
    }
    let o = c.worker_options_mut(0);
    o.crash_after_tasks = Some(1);
    o.crash_every_session = true;
    match c.run(&spec) {
        Err(tinymr::runtime::RuntimeError::RestartCapExceeded { restarts, .. }) => assert_eq!(restarts, 3),
        other => panic!("expected restart cap error, got {other:?}"),
    }
}

#[test]
fn silent_worker_is_declared_dead_by_heartbeat_timeout() {
    use tinymr::runtime::{read_frame, wire, write_frame, FrameType, RuntimeError};
    let dir = tempfile::tempdir().unwrap();
    let (mut spec, _) = job(dir.path(), 2);
    spec.restart_cap = 0;
    let mut c = LocalCluster::start(1, 1).unwrap();
    c.cluster_mut().heartbeat_interval_ms = 20.0;
    let addr = c.master.addr();
    let mute = std::thread::spawn(move || {
        let mut s = std::net::TcpStream::connect(addr).unwrap();
        write_frame(&mut s, &wire::register_frame("mute")).unwrap();
        // Read the setup and every task, answer nothing.
        let mut kinds = Vec::new();
        while let Ok(f) = read_frame(&mut s) {
            kinds.push(f.kind);
            if f.kind == FrameType::Abort {
                break;
            }
        }
        kinds
    });
    let err = c.master.run_job(&spec).unwrap_err();
    assert!(matches!(&err, RuntimeError::RestartCapExceeded { last, .. } if last.contains("heartbeat")), "{err}");
    let kinds = mute.join().unwrap();
    assert_eq!(kinds.first(), Some(&FrameType::Kneepoint));
    assert_eq!(kinds.last(), Some(&FrameType::Abort));
}
