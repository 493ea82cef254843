//! Scenario files for the simulator: flat `key = value` text naming a kind
//! of experiment, a base preset and overrides. Each scenario writes CSVs
//! prefixed with its name.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::{ConfigError, KvConfig};
use crate::workload::{self, DatasetKind};

use super::{
    bench, platform_overhead_profiles, reduce_stage_model, simulate_job, simulate_offline_phase, sweep_task_size, write_bench_csv,
    write_sweep_csv, BenchPreset, ReduceModel, SimError, SimJob, TaskSizing,
};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub const SCENARIO_KINDS: [&str; 6] = ["job", "sweep", "elasticity", "platforms", "reduce", "bench"];

const KEYS: &[&str] = &[
    "scenario",
    "name",
    "preset",
    "seed",
    "samples",
    "mean_bytes",
    "workers",
    "speeds",
    "startup_ms",
    "overhead_ms",
    "monitor_ms",
    "monitor_cost_ms",
    "kneepoint_bytes",
    "sizes",
    "cores",
    "job_samples",
    "map_ms",
    "reduce_ms",
    "shuffle_ms",
    "reduce_work",
    "n_map",
    "slots",
    "max_reducers",
];

#[derive(Debug, Clone)]
pub struct Scenario {
    pub kind: String,
    pub name: String,
    pub preset: BenchPreset,
    pub kneepoint_bytes: Option<u64>,
    pub sizes: Option<Vec<u64>>,
    pub cores: Vec<usize>,
    /// Job sizes (sample counts) for the platform comparison.
    pub job_samples: Vec<usize>,
    pub reduce: ReduceModel,
    pub n_map: u64,
    pub slots: u64,
    pub max_reducers: u32,
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Invalid(msg.into()))
}

/// Rebuilds the preset's dataset with a different sample count or mean.
pub fn resize_preset(p: &mut BenchPreset, samples: usize, mean_bytes: u64) -> Result<(), ScenarioError> {
    let bp = match p.blueprint.kind {
        DatasetKind::HeavyTailed => {
            let outliers = p.name == "eaglet" && samples >= 2;
            workload::heavy_tailed_blueprint(samples, mean_bytes, p.blueprint.seed, outliers)
        }
        DatasetKind::Ratings => workload::ratings_blueprint(samples, mean_bytes, p.blueprint.seed),
    }
    .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    p.blueprint = bp;
    let partition = (p.blueprint.total_bytes() / p.sim.n_workers as u64).max(mean_bytes);
    p.candidates = crate::cache_model::geometric_sizes(mean_bytes, partition, 1.5);
    Ok(())
}

impl Scenario {
    pub fn from_kv(c: &KvConfig) -> Result<Self, ScenarioError> {
        c.check_keys(KEYS)?;
        let kind: String = c.require("scenario")?;
        if !SCENARIO_KINDS.contains(&kind.as_str()) {
            return invalid(format!("unknown scenario {kind:?}; expected one of {SCENARIO_KINDS:?}"));
        }
        let preset_name: String = c.get_or("preset", "eaglet".to_string())?;
        let Some(mut preset) = BenchPreset::by_name(&preset_name) else {
            return invalid(format!("unknown preset {preset_name:?}"));
        };
        if let Some(seed) = c.get::<u64>("seed")? {
            preset.sim.seed = seed;
            preset.spec.seed = seed;
        }
        if let Some(w) = c.get::<usize>("workers")? {
            preset.sim.n_workers = w;
        }
        if let Some(s) = c.get_list::<f64>("speeds")? {
            preset.sim.speeds = s;
        }
        preset.sim.startup_ms = c.get_or("startup_ms", preset.sim.startup_ms)?;
        preset.sim.overhead_ms = c.get_or("overhead_ms", preset.sim.overhead_ms)?;
        preset.sim.monitor_interval_ms = c.get("monitor_ms")?;
        preset.sim.monitor_cost_ms = c.get_or("monitor_cost_ms", preset.sim.monitor_cost_ms)?;
        if c.contains("samples") || c.contains("mean_bytes") {
            let n = c.get_or("samples", preset.blueprint.entries.len())?;
            let mean = c.get_or("mean_bytes", (preset.blueprint.total_bytes() / preset.blueprint.entries.len() as u64).max(16))?;
            resize_preset(&mut preset, n, mean)?;
        }
        preset.sim.validate()?;
        let sizes = c.get_list::<u64>("sizes")?;
        if kind == "sweep" && sizes.as_ref().is_some_and(|s| s.is_empty()) {
            return invalid("sizes must not be empty");
        }
        let reduce = ReduceModel {
            startup_ms: preset.sim.startup_ms,
            avg_map_ms: c.get_or("map_ms", 100.0)?,
            avg_reduce_ms: c.get_or("reduce_ms", 1.0)?,
            avg_shuffle_ms: c.get_or("shuffle_ms", 0.5)?,
            reduce_work: c.get_or("reduce_work", 64u32)?,
        };
        Ok(Self {
            name: c.get_or("name", "sim".to_string())?,
            kind,
            preset,
            kneepoint_bytes: c.get("kneepoint_bytes")?,
            sizes,
            cores: c.get_list("cores")?.unwrap_or_else(|| vec![12, 36, 72]),
            job_samples: c.get_list("job_samples")?.unwrap_or_else(|| vec![1, 24, 240, 1200]),
            reduce,
            n_map: c.get_or("n_map", 480u64)?,
            slots: c.get_or("slots", 24u64)?,
            max_reducers: c.get_or("max_reducers", 64u32)?,
        })
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        Self::from_kv(&KvConfig::parse(text)?)
    }

    fn knee(&self) -> Result<u64, ScenarioError> {
        if let Some(k) = self.kneepoint_bytes {
            return Ok(k);
        }
        let p = &self.preset;
        let entries = p.entries();
        if entries.len() < 2 || p.candidates.len() < 3 {
            return Ok(entries.iter().map(|e| e.1).max().unwrap_or(1));
        }
        let off = simulate_offline_phase(&entries, &p.spec, &p.candidates, p.relative_noise, p.profile_repetitions, &p.sim)?;
        Ok(off.report.kneepoint_bytes)
    }

    /// Runs the scenario and returns the files written.
    pub fn run(&self, out_dir: &Path) -> Result<Vec<PathBuf>, ScenarioError> {
        fs::create_dir_all(out_dir)?;
        let p = &self.preset;
        let file = |suffix: &str| out_dir.join(format!("{}_{suffix}.csv", self.name));
        let mut written = Vec::new();
        match self.kind.as_str() {
            "job" => {
                let knee = self.knee()?;
                let job = super::job_for(&p.entries(), &p.spec, TaskSizing::Kneepoint(knee));
                let r = simulate_job(&job, &p.sim)?;
                let path = file("report");
                let mut w = BufWriter::new(File::create(&path)?);
                writeln!(w, "kneepoint_bytes,n_tasks,makespan_ms,startup_ms,throughput_bytes_per_s,stall_count,monitor_snapshots")?;
                writeln!(
                    w,
                    "{knee},{},{:.6},{:.6},{:.3},{},{}",
                    r.n_tasks, r.makespan_ms, r.startup_ms, r.throughput_bytes_per_s, r.stall_count, r.monitor_snapshots
                )?;
                w.flush()?;
                written.push(path);
                let path = file("events");
                r.events.write_csv(BufWriter::new(File::create(&path)?))?;
                written.push(path);
            }
            "sweep" => {
                let sizes = self.sizes.clone().unwrap_or_else(|| p.candidates.clone());
                let rows = sweep_task_size(&p.entries(), &p.spec, &p.sim, &sizes)?;
                let path = file("sweep");
                write_sweep_csv(BufWriter::new(File::create(&path)?), &rows)?;
                written.push(path);
            }
            "elasticity" => {
                let knee = self.knee()?;
                let path = file("elasticity");
                let mut w = BufWriter::new(File::create(&path)?);
                writeln!(w, "cores,n_tasks,makespan_ms,throughput_bytes_per_s")?;
                for &cores in &self.cores {
                    let mut sim = p.sim.clone();
                    sim.n_workers = cores;
                    sim.speeds.clear();
                    let job = super::job_for(&p.entries(), &p.spec, TaskSizing::Kneepoint(knee));
                    let r = simulate_job(&job, &sim)?;
                    writeln!(w, "{cores},{},{:.6},{:.3}", r.n_tasks, r.makespan_ms, r.throughput_bytes_per_s)?;
                }
                w.flush()?;
                written.push(path);
            }
            "platforms" => {
                let knee = self.knee()?;
                let path = file("platforms");
                let mut w = BufWriter::new(File::create(&path)?);
                writeln!(w, "platform,job_samples,job_bytes,makespan_ms,throughput_bytes_per_s")?;
                let entries = p.entries();
                for &n in &self.job_samples {
                    let sub: Vec<(u64, u64)> = entries.iter().take(n.max(1)).copied().collect();
                    let job = SimJob::new(
                        sub.clone(),
                        p.spec,
                        TaskSizing::Kneepoint(knee).report(sub.iter().map(|e| e.1).sum::<u64>() as f64 / sub.len() as f64),
                    );
                    for prof in platform_overhead_profiles() {
                        let r = simulate_job(&job, &prof.apply(&p.sim))?;
                        writeln!(
                            w,
                            "{},{},{},{:.6},{:.3}",
                            prof.name,
                            sub.len(),
                            r.total_bytes,
                            r.makespan_ms,
                            r.throughput_bytes_per_s
                        )?;
                    }
                }
                w.flush()?;
                written.push(path);
            }
            "reduce" => {
                let path = file("reduce");
                let mut w = BufWriter::new(File::create(&path)?);
                writeln!(w, "reducers,makespan_ms")?;
                for (r, ms) in reduce_stage_model(&self.reduce, self.n_map, self.slots, self.max_reducers) {
                    writeln!(w, "{r},{ms:.6}")?;
                }
                w.flush()?;
                written.push(path);
            }
            "bench" => {
                let (rows, _) = bench(p)?;
                let path = file("bench");
                write_bench_csv(BufWriter::new(File::create(&path)?), &rows)?;
                written.push(path);
            }
            _ => unreachable!("checked in from_kv"),
        }
        Ok(written)
    }
}
