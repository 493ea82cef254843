//! Task-size sweeps, the simulated offline phase, and BLT/BTT/BTS benches.

use std::io::{self, Write};
use std::time::Instant;

use crate::cache_model;
use crate::sizing::{self, KneepointReport, SizingError};
use crate::workload::SubsampleSpec;

use super::{simulate_job, trace_cost, BenchPreset, SimConfig, SimError, SimJob, SimReport};

/// How samples are grouped into tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskSizing {
    /// All of a node's samples in one task.
    Large,
    /// One sample per task.
    Tiniest,
    /// Tasks of about this many bytes.
    Kneepoint(u64),
}

impl TaskSizing {
    pub fn report(&self, avg_sample_size: f64) -> KneepointReport {
        match *self {
            TaskSizing::Large => KneepointReport::large_tasks(avg_sample_size),
            TaskSizing::Tiniest => KneepointReport::tiniest_tasks(avg_sample_size),
            TaskSizing::Kneepoint(k) => KneepointReport::new(k, Default::default(), avg_sample_size),
        }
    }
}

pub fn job_for(entries: &[(u64, u64)], spec: &SubsampleSpec, sizing: TaskSizing) -> SimJob {
    let mut job = SimJob::new(entries.to_vec(), *spec, KneepointReport::large_tasks(1.0));
    job.report = sizing.report(job.avg_sample_size());
    job
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub size_bytes: u64,
    pub n_tasks: usize,
    pub makespan_ms: f64,
    pub throughput_bytes_per_s: f64,
}

/// One simulation per task size, all under the same seed.
pub fn sweep_task_size(entries: &[(u64, u64)], spec: &SubsampleSpec, sim: &SimConfig, sizes: &[u64]) -> Result<Vec<SweepRow>, SimError> {
    sizes
        .iter()
        .map(|&s| {
            let r = simulate_job(&job_for(entries, spec, TaskSizing::Kneepoint(s)), sim)?;
            Ok(SweepRow {
                size_bytes: s,
                n_tasks: r.n_tasks,
                makespan_ms: r.makespan_ms,
                throughput_bytes_per_s: r.throughput_bytes_per_s,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> io::Result<()> {
    writeln!(w, "task_size_bytes,n_tasks,makespan_ms,throughput_bytes_per_s")?;
    for r in rows {
        writeln!(w, "{},{},{:.6},{:.3}", r.size_bytes, r.n_tasks, r.makespan_ms, r.throughput_bytes_per_s)?;
    }
    w.flush()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineReport {
    pub report: KneepointReport,
    /// Virtual time the profiling tasks take on the cluster.
    pub simulated_ms: f64,
    /// Host time spent computing the search.
    pub wall_ms: f64,
    pub measured_points: usize,
}

/// Greedy list scheduling of independent durations on `n` nodes.
fn list_makespan(durations: &[f64], n: usize) -> f64 {
    let mut free = vec![0.0f64; n.max(1)];
    for &d in durations {
        let i = free
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        free[i] += d;
    }
    free.into_iter().fold(0.0, f64::max)
}

/// The offline kneepoint search as it would run on the cluster: points are
/// measured one after another, and the random task compositions of a point
/// run in parallel. Profiling tasks trace `profile_repetitions` repetitions.
pub fn simulate_offline_phase(
    entries: &[(u64, u64)],
    spec: &SubsampleSpec,
    candidates: &[u64],
    relative_noise: f64,
    profile_repetitions: u32,
    sim: &SimConfig,
) -> Result<OfflineReport, SimError> {
    let clock = Instant::now();
    let mut pspec = *spec;
    pspec.repetitions = profile_repetitions.max(1);
    let avg = entries.iter().map(|e| e.1).sum::<u64>() as f64 / entries.len().max(1) as f64;
    let mut simulated = 0.0;
    let report = sizing::find_kneepoint(
        |i, target| {
            let mut rates = Vec::new();
            let mut actual = Vec::new();
            let mut durations = Vec::new();
            for r in 0..cache_model::PROFILE_REPEATS {
                let (task, _) = cache_model::compose_task(entries, target, spec.seed, &[i as u64, r as u64]);
                let rt = cache_model::task_runs(&task, &pspec, sim.trace).map_err(|e| SizingError::Measurement(e.to_string()))?;
                rates.push(cache_model::misses_per_instruction(&rt, sim.cache.capacity_blocks));
                actual.push(task.iter().map(|t| t.1).sum::<u64>() as f64);
                let (len, amat) =
                    trace_cost(&task, &pspec, &(0..pspec.repetitions), sim).map_err(|e| SizingError::Measurement(e.to_string()))?;
                durations.push(sim.overhead_ms + len as f64 * amat * sim.cycle_scale_ms);
            }
            simulated += list_makespan(&durations, sim.n_workers);
            let m = crate::stats::median(&rates).unwrap();
            let a = crate::stats::median(&actual).unwrap() as u64;
            Ok((m, a))
        },
        candidates,
        relative_noise,
        avg,
    )?;
    let measured_points = report.curve.points.len();
    Ok(OfflineReport {
        report,
        simulated_ms: simulated,
        wall_ms: clock.elapsed().as_secs_f64() * 1000.0,
        measured_points,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub config: &'static str,
    pub kneepoint_bytes: u64,
    pub n_tasks: usize,
    pub makespan_ms: f64,
    pub throughput_bytes_per_s: f64,
    /// Throughput relative to the BTS row.
    pub relative: f64,
}

/// BLT, BTT and BTS under one seed. BTS uses the kneepoint found by the
/// simulated offline phase.
pub fn bench(preset: &BenchPreset) -> Result<(Vec<BenchRow>, OfflineReport), SimError> {
    let entries = preset.entries();
    let offline = if entries.len() >= 2 && preset.candidates.len() >= 3 {
        simulate_offline_phase(
            &entries,
            &preset.spec,
            &preset.candidates,
            preset.relative_noise,
            preset.profile_repetitions,
            &preset.sim,
        )?
    } else {
        let avg = entries.iter().map(|e| e.1).sum::<u64>() as f64 / entries.len().max(1) as f64;
        OfflineReport {
            report: KneepointReport::new(avg.ceil() as u64, Default::default(), avg),
            simulated_ms: 0.0,
            wall_ms: 0.0,
            measured_points: 0,
        }
    };
    let configs = [
        ("BLT", TaskSizing::Large),
        ("BTT", TaskSizing::Tiniest),
        ("BTS", TaskSizing::Kneepoint(offline.report.kneepoint_bytes)),
    ];
    let mut reports: Vec<(&'static str, u64, SimReport)> = Vec::new();
    for (name, sizing) in configs {
        let job = job_for(&entries, &preset.spec, sizing);
        let knee = job.report.kneepoint_bytes;
        reports.push((name, knee, simulate_job(&job, &preset.sim)?));
    }
    let bts = reports[2].2.throughput_bytes_per_s;
    let rows = reports
        .into_iter()
        .map(|(config, knee, r)| BenchRow {
            config,
            kneepoint_bytes: knee,
            n_tasks: r.n_tasks,
            makespan_ms: r.makespan_ms,
            throughput_bytes_per_s: r.throughput_bytes_per_s,
            relative: if bts > 0.0 { r.throughput_bytes_per_s / bts } else { 0.0 },
        })
        .collect();
    Ok((rows, offline))
}

pub fn write_bench_csv<W: Write>(mut w: W, rows: &[BenchRow]) -> io::Result<()> {
    writeln!(w, "config,kneepoint_bytes,n_tasks,makespan_ms,throughput_bytes_per_s,relative_throughput")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:.6},{:.3},{:.6}",
            r.config, r.kneepoint_bytes, r.n_tasks, r.makespan_ms, r.throughput_bytes_per_s, r.relative
        )?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_scheduling() {
        assert_eq!(list_makespan(&[3.0, 2.0, 1.0], 3), 3.0);
        assert_eq!(list_makespan(&[3.0, 2.0, 1.0], 1), 6.0);
        assert_eq!(list_makespan(&[], 2), 0.0);
    }
}
