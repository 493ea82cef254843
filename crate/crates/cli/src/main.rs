//! `tinymr` command line: profile datasets, run real jobs, simulate and
//! benchmark.
//!
//! Exit codes: 0 success, 2 usage or config, 3 connectivity, 4 job failure.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tinymr::cache_model::{self, CacheConfig, DEFAULT_BLOCK_BYTES};
use tinymr::config::KvConfig;
use tinymr::runtime::{
    run_worker, ClusterConfig, DataNodeServer, JobSpec, Master, RuntimeError, SizingDirective, WorkerOptions,
};
use tinymr::sim::Scenario;
use tinymr::sizing::{self, KneepointReport};
use tinymr::workload::{self, Dataset, SubsampleSpec};
use tinymr::NodeId;

#[derive(Parser, Debug)]
#[command(name = "tinymr", version, about = "Tiny-task map-reduce for subsampling workloads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Flat `key = value` config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if absent.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Profile a dataset and write its miss-rate curve and kneepoint report.
    Profile {
        /// Dataset manifest; defaults to the config's `manifest` key.
        manifest: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cache_kb: Option<u64>,
        /// Comma-separated candidate task sizes in bytes.
        #[arg(long)]
        sizes: Option<String>,
    },
    /// Run one role of a real job.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        role: Role,
        /// Listen address (master, datanode) or master address (worker).
        #[arg(long)]
        addr: Option<String>,
        /// Data nodes as `id@host:port` or `host:port`, comma-separated.
        #[arg(long)]
        nodes: Option<String>,
        #[arg(long)]
        cache_kb: Option<u64>,
        #[arg(long)]
        sizes: Option<String>,
    },
    /// Run a simulator scenario file.
    Simulate {
        scenario: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sizes: Option<String>,
        /// Simulated worker count.
        #[arg(long)]
        nodes: Option<usize>,
    },
    /// Compare large, tiniest and kneepoint-sized tasks on a preset.
    Bench {
        preset: String,
        #[command(flatten)]
        common: Common,
        /// Simulated worker count.
        #[arg(long)]
        nodes: Option<usize>,
    },
    /// Write a synthetic dataset and print its manifest path.
    Gen {
        #[arg(long, value_enum, default_value = "heavy-tailed")]
        kind: GenKind,
        #[arg(long, default_value_t = 64)]
        samples: usize,
        #[arg(long, default_value_t = 4096)]
        mean_bytes: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum Role {
    Master,
    Worker,
    Datanode,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum GenKind {
    HeavyTailed,
    Ratings,
}

struct Failure {
    code: u8,
    err: anyhow::Error,
}

type Res<T = ()> = Result<T, Failure>;

fn usage(err: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, err: err.into() }
}

fn runtime_failure(e: RuntimeError) -> Failure {
    let code = match &e {
        RuntimeError::Connect(_) | RuntimeError::Roster { .. } => 3,
        RuntimeError::RestartCapExceeded { .. } | RuntimeError::Aborted(_) | RuntimeError::Protocol(_) => 4,
        RuntimeError::Frame(_) | RuntimeError::Io(_) | RuntimeError::Data(_) => 4,
        _ => 2,
    };
    Failure { code, err: e.into() }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TINYMR_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cmd: Command) -> Res {
    match cmd {
        Command::Profile {
            manifest,
            common,
            cache_kb,
            sizes,
        } => {
            let mut c = load_config(&common)?;
            if let Some(m) = manifest {
                c.set("manifest", m.display());
            }
            override_opt(&mut c, "cache_kb", cache_kb);
            override_opt(&mut c, "sizes", sizes);
            cmd_profile(&c, &common.out)
        }
        Command::Run {
            common,
            role,
            addr,
            nodes,
            cache_kb,
            sizes,
        } => {
            let mut c = load_config(&common)?;
            override_opt(&mut c, "data_nodes", nodes);
            override_opt(&mut c, "cache_kb", cache_kb);
            override_opt(&mut c, "sizes", sizes);
            match role {
                Role::Master => cmd_master(&c, addr.as_deref().unwrap_or("127.0.0.1:7070"), &common.out),
                Role::Worker => cmd_worker(&c, addr.as_deref().unwrap_or("127.0.0.1:7070")),
                Role::Datanode => cmd_datanode(&c, addr.as_deref().unwrap_or("127.0.0.1:7071")),
            }
        }
        Command::Simulate {
            scenario,
            common,
            sizes,
            nodes,
        } => {
            let path = scenario
                .or(common.config.clone())
                .ok_or_else(|| usage(anyhow!("simulate needs a scenario file")))?;
            let mut c = read_config(&path)?;
            override_opt(&mut c, "seed", common.seed);
            override_opt(&mut c, "sizes", sizes);
            override_opt(&mut c, "workers", nodes);
            let s = Scenario::from_kv(&c).map_err(|e| usage(anyhow!("{}: {e}", path.display())))?;
            let files = s.run(&common.out).map_err(|e| Failure { code: 4, err: e.into() })?;
            for f in files {
                println!("{}", f.display());
            }
            Ok(())
        }
        Command::Bench { preset, common, nodes } => {
            let mut c = load_config(&common)?;
            c.set("scenario", "bench");
            c.set("preset", &preset);
            if !c.contains("name") {
                c.set("name", &preset);
            }
            override_opt(&mut c, "workers", nodes);
            let s = Scenario::from_kv(&c).map_err(usage)?;
            let files = s.run(&common.out).map_err(|e| Failure { code: 4, err: e.into() })?;
            let text = fs::read_to_string(&files[0]).map_err(usage)?;
            print!("{text}");
            Ok(())
        }
        Command::Gen {
            kind,
            samples,
            mean_bytes,
            seed,
            out,
        } => {
            let ds = match kind {
                GenKind::HeavyTailed => workload::generate_heavy_tailed_dataset(samples, mean_bytes, seed),
                GenKind::Ratings => workload::generate_ratings_dataset(samples, mean_bytes, seed),
            }
            .map_err(usage)?;
            let manifest = ds.save(&out).map_err(usage)?;
            println!("{}", manifest.display());
            Ok(())
        }
    }
}

fn override_opt<T: std::fmt::Display>(c: &mut KvConfig, key: &str, v: Option<T>) {
    if let Some(v) = v {
        c.set(key, v);
    }
}

fn read_config(path: &Path) -> Res<KvConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(usage)?;
    KvConfig::parse(&text).map_err(|e| usage(anyhow!("{}: {e}", path.display())))
}

fn load_config(common: &Common) -> Res<KvConfig> {
    let mut c = match &common.config {
        Some(p) => read_config(p)?,
        None => KvConfig::default(),
    };
    override_opt(&mut c, "seed", common.seed);
    Ok(c)
}

fn create_out(out: &Path) -> Res {
    fs::create_dir_all(out)
        .with_context(|| format!("cannot create {}", out.display()))
        .map_err(usage)
}

const PROFILE_KEYS: &[&str] = &[
    "manifest",
    "fraction",
    "repetitions",
    "confidence",
    "seed",
    "cache_kb",
    "sizes",
    "relative_noise",
];

fn cmd_profile(c: &KvConfig, out: &Path) -> Res {
    c.check_keys(PROFILE_KEYS).map_err(usage)?;
    let manifest: PathBuf = c.require::<String>("manifest").map_err(usage)?.into();
    let dataset = Dataset::load(&manifest)
        .with_context(|| format!("cannot read manifest {}", manifest.display()))
        .map_err(usage)?;
    let seed = c.get_or("seed", 0u64).map_err(usage)?;
    let spec = SubsampleSpec::new(
        c.get_or("fraction", 0.1).map_err(usage)?,
        c.get_or("repetitions", 30u32).map_err(usage)?,
        c.get_or("confidence", 0.98).map_err(usage)?,
        seed,
    )
    .map_err(usage)?;
    let kb: u64 = c.get_or("cache_kb", 96).map_err(usage)?;
    let cache = CacheConfig::single((kb * 1024 / DEFAULT_BLOCK_BYTES).max(1)).map_err(usage)?;
    let avg = dataset.avg_sample_size();
    let sizes = match c.get_list::<u64>("sizes").map_err(usage)? {
        Some(s) => s,
        None => {
            let start = avg.ceil() as u64;
            cache_model::geometric_sizes(start, (kb * 1024 * 4).max(start * 3), 1.5)
        }
    };
    if sizes.len() < 3 {
        return Err(usage(anyhow!("need at least 3 candidate sizes, got {}", sizes.len())));
    }
    let noise = c.get_or("relative_noise", 0.05).map_err(usage)?;
    let curve = cache_model::profile_curve(&dataset, &spec, &sizes, &cache).map_err(usage)?;
    let mut report = sizing::find_kneepoint_on_curve(&curve, noise, avg).map_err(usage)?;
    report.curve = curve;
    create_out(out)?;
    let io = |e: std::io::Error| usage(e);
    let curve_path = out.join("curve.csv");
    report.curve.write_csv(BufWriter::new(File::create(&curve_path).map_err(io)?)).map_err(io)?;
    let report_path = out.join("kneepoint.txt");
    report.write_kv(BufWriter::new(File::create(&report_path).map_err(io)?)).map_err(io)?;
    println!("kneepoint_bytes={}", report.kneepoint_bytes);
    println!("samples_per_task={}", report.samples_per_task);
    Ok(())
}

const MASTER_KEYS: &[&str] = &[
    "manifest",
    "fraction",
    "repetitions",
    "confidence",
    "seed",
    "kneepoint_bytes",
    "kneepoint_report",
    "cache_kb",
    "sizes",
    "relative_noise",
    "rep_start",
    "rep_end",
    "monitor_ms",
    "prefetch_margin",
    "fetch_deadline_ms",
    "restart_cap",
    "ewma_alpha",
    "workers",
    "data_nodes",
    "register_timeout_ms",
    "heartbeat_ms",
];

/// `id@addr` or bare `addr`; bare entries are numbered from 1000.
fn parse_nodes(s: &str) -> anyhow::Result<Vec<(NodeId, String)>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .enumerate()
        .map(|(i, p)| match p.split_once('@') {
            Some((id, addr)) => Ok((id.trim().parse().with_context(|| format!("bad node id in {p:?}"))?, addr.trim().to_string())),
            None => Ok((1000 + i as NodeId, p.to_string())),
        })
        .collect()
}

fn cmd_master(c: &KvConfig, addr: &str, out: &Path) -> Res {
    c.check_keys(MASTER_KEYS).map_err(usage)?;
    let mut spec = JobSpec::from_kv(c).map_err(runtime_failure)?;
    if let Some(p) = c.get::<String>("kneepoint_report").map_err(usage)? {
        let f = File::open(&p).with_context(|| format!("cannot read {p}")).map_err(usage)?;
        spec.sizing = SizingDirective::Report(KneepointReport::read_kv(BufReader::new(f)).map_err(usage)?);
    }
    let nodes = parse_nodes(&c.get_or("data_nodes", String::new()).map_err(usage)?).map_err(usage)?;
    if nodes.is_empty() {
        return Err(usage(anyhow!("no data nodes given (use --nodes or data_nodes)")));
    }
    let mut cluster = ClusterConfig::new(c.get_or("workers", 1usize).map_err(usage)?, nodes);
    cluster.register_timeout_ms = c.get_or("register_timeout_ms", cluster.register_timeout_ms).map_err(usage)?;
    cluster.heartbeat_interval_ms = c.get_or("heartbeat_ms", cluster.heartbeat_interval_ms).map_err(usage)?;
    let mut master = Master::bind(addr, cluster).map_err(|e| usage(anyhow!("cannot listen on {addr}: {e}")))?;
    println!("master listening on {}", master.addr());
    let _ = std::io::stdout().flush();
    let result = master.run_job(&spec).map_err(runtime_failure)?;
    create_out(out)?;
    let events = out.join("events.csv");
    result
        .events
        .write_csv(BufWriter::new(File::create(&events).map_err(usage)?))
        .map_err(usage)?;
    match &result.statistic {
        Some(s) => {
            println!("aggregate={:?}", s.aggregate);
            println!("total_count={}", s.total_count);
            println!("parts={}", s.parts);
        }
        None => println!("aggregate=none"),
    }
    println!("n_tasks={}", result.n_tasks);
    println!("kneepoint_bytes={}", result.kneepoint_bytes);
    println!("restarts={}", result.restarts);
    println!("startup_ms={:.3}", result.startup_ms);
    println!("wall_ms={:.3}", result.wall_ms);
    println!("monitor_snapshots={}", result.monitor_snapshots);
    Ok(())
}

fn cmd_worker(c: &KvConfig, addr: &str) -> Res {
    c.check_keys(&["name", "cache_kb", "seed"]).map_err(usage)?;
    let mut opts = WorkerOptions {
        name: c.get_or("name", format!("worker-{}", std::process::id())).map_err(usage)?,
        ..WorkerOptions::default()
    };
    if let Some(kb) = c.get::<u64>("cache_kb").map_err(usage)? {
        opts.cache_bytes = kb * 1024;
    }
    let s = run_worker(addr, &opts).map_err(runtime_failure)?;
    println!("sessions={} tasks_done={}", s.sessions, s.tasks_done);
    Ok(())
}

fn cmd_datanode(c: &KvConfig, addr: &str) -> Res {
    c.check_keys(&["node_id", "seed"]).map_err(usage)?;
    let id: NodeId = c.get_or("node_id", 1000).map_err(usage)?;
    let server = DataNodeServer::bind(id, addr).map_err(|e| usage(anyhow!("cannot listen on {addr}: {e}")))?;
    println!("data node {id} listening on {}", server.addr());
    let _ = std::io::stdout().flush();
    server.wait();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runtime_errors_map_to_stable_exit_codes() {
        let c = |e| runtime_failure(e).code;
        assert_eq!(c(RuntimeError::Connect("x".into())), 3);
        assert_eq!(c(RuntimeError::Roster { expected: 4, registered: 2 }), 3);
        assert_eq!(c(RuntimeError::RestartCapExceeded { restarts: 4, last: "x".into() }), 4);
        assert_eq!(c(RuntimeError::InvalidSpec("x".into())), 2);
    }

    #[test]
    fn node_lists_accept_ids_or_bare_addresses() {
        assert_eq!(
            parse_nodes("7@a:1, b:2").unwrap(),
            vec![(7, "a:1".to_string()), (1001, "b:2".to_string())]
        );
        assert!(parse_nodes("x@a:1").is_err());
    }
}
