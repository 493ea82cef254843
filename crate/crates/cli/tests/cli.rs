use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use tinymr::runtime::run_oracle;
use tinymr::runtime::{JobSpec, SizingDirective};
use tinymr::workload::SubsampleSpec;

fn tinymr() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tinymr"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    tinymr().args(args).current_dir(cwd).output().expect("spawn tinymr")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn gen(dir: &Path, samples: usize) -> PathBuf {
    let o = run(&["gen", "--samples", &samples.to_string(), "--mean-bytes", "4096", "--seed", "11", "--out", "ds"], dir);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    dir.join(stdout(&o).trim())
}

#[test]
fn profile_writes_curve_and_report_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen(dir.path(), 48);
    let m = manifest.to_str().unwrap();
    let a = run(&["profile", m, "--out", "a", "--seed", "5"], dir.path());
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert!(stdout(&a).contains("kneepoint_bytes="));
    let b = run(&["profile", m, "--out", "b", "--seed", "5"], dir.path());
    assert_eq!(code(&b), 0);
    for f in ["curve.csv", "kneepoint.txt"] {
        let x = fs::read(dir.path().join("a").join(f)).unwrap();
        let y = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between runs");
    }
    let curve = fs::read_to_string(dir.path().join("a/curve.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("task_size_bytes,misses_per_instruction"));
}

#[test]
fn profile_usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen(dir.path(), 8);
    let m = manifest.to_str().unwrap();
    assert_eq!(code(&run(&["profile", m, "--sizes", "4096,8192"], dir.path())), 2);
    let o = run(&["profile", "missing.csv"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.csv"));
    assert_eq!(code(&run(&["profile", m, "--no-such-flag"], dir.path())), 2);
}

#[test]
fn worker_without_master_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    // Bind then drop to get a port nothing listens on.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let o = run(&["run", "--role", "worker", "--addr", &format!("127.0.0.1:{port}")], dir.path());
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bench_unknown_preset_exits_2_and_one_sample_rows_match() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["bench", "nope"], dir.path())), 2);
    fs::write(dir.path().join("one.txt"), "samples = 1\n").unwrap();
    let o = run(&["bench", "eaglet", "--config", "one.txt", "--out", "b"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("b/eaglet_bench.csv")).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert_eq!(r[2..], rows[0][2..], "{text}");
    }
}

#[test]
fn simulate_errors_report_line_and_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.txt"), "scenario = sweep\n\nworkers = many\n").unwrap();
    let o = run(&["simulate", "bad.txt"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
    fs::write(dir.path().join("bad2.txt"), "scenario = sweep\nthis is not a pair\n").unwrap();
    let o = run(&["simulate", "bad2.txt"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    assert_eq!(code(&run(&["simulate", "absent.txt"], dir.path())), 2);
}

#[test]
fn sweep_scenario_has_one_row_per_size() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("sweep.txt"),
        "scenario = sweep\nname = small\nsamples = 120\nworkers = 6\nsizes = 40000, 80000, 160000, 320000\n",
    )
    .unwrap();
    let o = run(&["simulate", "sweep.txt", "--out", "s"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("s/small_sweep.csv")).unwrap();
    let sizes: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(sizes, ["40000", "80000", "160000", "320000"]);
}

#[test]
fn elasticity_makespans_do_not_increase_with_cores() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("el.txt"), "scenario = elasticity\nname = el\n").unwrap();
    let o = run(&["simulate", "el.txt", "--out", "s"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("s/el_elasticity.csv")).unwrap();
    let rows: Vec<(usize, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), [12, 36, 72]);
    assert!(rows.windows(2).all(|w| w[1].1 <= w[0].1), "{text}");
}

/// Reads the first stdout line of a long-running child: its listen address.
fn listen_addr(child: &mut Child) -> String {
    let mut line = String::new();
    BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut line).unwrap();
    line.split_whitespace().last().expect("address line").to_string()
}

fn loopback_job(dir: &Path, job: &str) -> String {
    let mut dn = tinymr()
        .args(["run", "--role", "datanode", "--addr", "127.0.0.1:0"])
        .current_dir(dir)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let daddr = listen_addr(&mut dn);
    let mut master = tinymr()
        .args(["run", "--role", "master", "--config", job, "--addr", "127.0.0.1:0", "--out", "m"])
        .args(["--nodes", &format!("1000@{daddr}")])
        .current_dir(dir)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let maddr = listen_addr(&mut master);
    let workers: Vec<Child> = (0..4)
        .map(|_| {
            tinymr()
                .args(["run", "--role", "worker", "--addr", &maddr])
                .current_dir(dir)
                .stdout(Stdio::null())
                .spawn()
                .unwrap()
        })
        .collect();
    let out = master.wait_with_output().unwrap();
    for mut w in workers {
        w.wait().unwrap();
    }
    dn.kill().unwrap();
    dn.wait().unwrap();
    assert!(out.status.success());
    stdout(&out)
}

#[test]
fn loopback_processes_match_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen(dir.path(), 64);
    fs::write(
        dir.path().join("job.txt"),
        format!(
            "manifest = {}\nkneepoint_bytes = 8192\nfraction = 0.2\nrepetitions = 6\nworkers = 4\nseed = 3\n",
            manifest.display()
        ),
    )
    .unwrap();
    let first = loopback_job(dir.path(), "job.txt");
    let aggregate = first
        .lines()
        .find_map(|l| l.strip_prefix("aggregate="))
        .expect("aggregate line")
        .to_string();
    let spec = JobSpec::new(&manifest, SubsampleSpec::new(0.2, 6, 0.98, 3).unwrap(), SizingDirective::Bytes(8192), 3);
    let oracle = run_oracle(&spec).unwrap().unwrap();
    assert_eq!(aggregate, format!("{:?}", oracle.aggregate));
    assert!(first.contains("restarts=0"));

    let second = loopback_job(dir.path(), "job.txt");
    assert!(second.contains(&format!("aggregate={aggregate}")));
}
