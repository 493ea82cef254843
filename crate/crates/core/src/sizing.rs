//! Kneepoint detection and task packing.
//!
//! Offline, candidate task sizes are measured in increasing order. The growth
//! rate between the first two measurements becomes the baseline, and the
//! search stops at the first growth rate above it; the size measured just
//! before that is the kneepoint. Online, samples are grouped so that each
//! task holds about one kneepoint's worth of data.

use std::io::{self, BufRead, Write};
use std::ops::Range;

use crate::cache_model::{CurvePoint, MissRateCurve};
use crate::workload::{Dataset, SubsampleSpec};
use crate::{NodeId, TaskId};

#[derive(Debug, thiserror::Error)]
pub enum SizingError {
    #[error("need at least 3 candidate sizes, got {0}")]
    TooFewCandidates(usize),
    #[error("candidate sizes must be strictly increasing")]
    NonIncreasing,
    #[error("measurement failed: {0}")]
    Measurement(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("kneepoint_bytes must be >= 1")]
    ZeroKneepoint,
    #[error("n_nodes must be >= 1")]
    NoNodes,
    #[error("report line {line}: {msg}")]
    Report { line: usize, msg: String },
}

/// The two-slot window and baseline of the offline search.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KneepointSearchState {
    pub last_miss_rate: Option<f64>,
    pub last_task_size: Option<f64>,
    pub max_rate: Option<f64>,
    /// Growth rates below this are treated as zero.
    pub noise_floor: f64,
}

/// Outcome of feeding one measurement to the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Continue,
    /// This measurement's growth rate exceeded the baseline.
    Knee,
}

impl KneepointSearchState {
    /// `relative_noise` scales the first point's miss-rate-per-byte into the
    /// floor under which growth is ignored; 0 disables it.
    pub fn observe(&mut self, miss_rate: f64, task_size: f64, relative_noise: f64) -> Step {
        let (Some(last_m), Some(last_s)) = (self.last_miss_rate, self.last_task_size) else {
            self.last_miss_rate = Some(miss_rate);
            self.last_task_size = Some(task_size);
            if task_size > 0.0 {
                self.noise_floor = relative_noise * miss_rate / task_size;
            }
            return Step::Continue;
        };
        let ds = task_size - last_s;
        if ds <= 0.0 {
            return Step::Continue;
        }
        let mut growth = ((miss_rate - last_m) / ds).max(0.0);
        if growth < self.noise_floor {
            growth = 0.0;
        }
        self.last_miss_rate = Some(miss_rate);
        self.last_task_size = Some(task_size);
        match self.max_rate {
            None => {
                self.max_rate = Some(growth);
                Step::Continue
            }
            Some(max) if growth > max => Step::Knee,
            Some(_) => Step::Continue,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KneepointReport {
    pub kneepoint_bytes: u64,
    pub curve: MissRateCurve,
    pub samples_per_task: u64,
    pub avg_sample_size_bytes: f64,
}

impl KneepointReport {
    pub fn new(kneepoint_bytes: u64, curve: MissRateCurve, avg_sample_size_bytes: f64) -> Self {
        Self {
            kneepoint_bytes,
            curve,
            samples_per_task: samples_per_task(kneepoint_bytes, avg_sample_size_bytes),
            avg_sample_size_bytes,
        }
    }

    /// A report that packs a whole partition into one task.
    pub fn large_tasks(avg_sample_size_bytes: f64) -> Self {
        Self::new(u64::MAX, MissRateCurve::default(), avg_sample_size_bytes)
    }

    /// A report that packs one sample per task.
    pub fn tiniest_tasks(avg_sample_size_bytes: f64) -> Self {
        Self::new(1, MissRateCurve::default(), avg_sample_size_bytes)
    }

    pub fn write_kv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "kneepoint_bytes={}", self.kneepoint_bytes)?;
        writeln!(w, "samples_per_task={}", self.samples_per_task)?;
        writeln!(w, "avg_sample_size_bytes={}", self.avg_sample_size_bytes)?;
        w.flush()
    }

    /// Parses the key-value file; the curve is attached separately.
    pub fn read_kv<R: BufRead>(r: R) -> Result<Self, SizingError> {
        let mut knee = None;
        let mut avg = None;
        for (i, line) in r.lines().enumerate() {
            let bad = |msg: String| SizingError::Report { line: i + 1, msg };
            let line = line.map_err(|e| bad(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad("expected key=value".into()))?;
            match k.trim() {
                "kneepoint_bytes" => knee = Some(v.trim().parse::<u64>().map_err(|e| bad(e.to_string()))?),
                "avg_sample_size_bytes" => avg = Some(v.trim().parse::<f64>().map_err(|e| bad(e.to_string()))?),
                "samples_per_task" => {}
                other => return Err(bad(format!("unknown key {other}"))),
            }
        }
        let knee = knee.ok_or(SizingError::Report { line: 0, msg: "missing kneepoint_bytes".into() })?;
        let avg = avg.ok_or(SizingError::Report { line: 0, msg: "missing avg_sample_size_bytes".into() })?;
        Ok(Self::new(knee, MissRateCurve::default(), avg))
    }
}

/// `max(1, floor(kneepoint / avg))`.
pub fn samples_per_task(kneepoint_bytes: u64, avg_sample_size_bytes: f64) -> u64 {
    if avg_sample_size_bytes <= 0.0 {
        return 1;
    }
    ((kneepoint_bytes as f64 / avg_sample_size_bytes).floor() as u64).max(1)
}

/// Offline kneepoint search.
///
/// `measure(size)` returns `(miss_rate, actual_size)`. Sizes are measured in
/// order until one shows a growth rate above the baseline; the returned
/// kneepoint is the candidate measured before it, or the largest candidate
/// if none exceeded. Points whose actual size did not grow are skipped and
/// negative growth counts as zero.
pub fn find_kneepoint<F>(
    mut measure: F,
    candidate_sizes: &[u64],
    relative_noise: f64,
    avg_sample_size_bytes: f64,
) -> Result<KneepointReport, SizingError>
where
    F: FnMut(usize, u64) -> Result<(f64, u64), SizingError>,
{
    if candidate_sizes.len() < 3 {
        return Err(SizingError::TooFewCandidates(candidate_sizes.len()));
    }
    if candidate_sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SizingError::NonIncreasing);
    }
    let mut state = KneepointSearchState::default();
    let mut points = Vec::new();
    let mut knee = *candidate_sizes.last().unwrap();
    for (i, &size) in candidate_sizes.iter().enumerate() {
        let (rate, actual) = measure(i, size)?;
        points.push(CurvePoint {
            task_size_bytes: size,
            misses_per_instruction: rate,
            actual_bytes: actual,
            single_sample: false,
        });
        if state.observe(rate, actual as f64, relative_noise) == Step::Knee {
            knee = candidate_sizes[i - 1];
            break;
        }
    }
    Ok(KneepointReport::new(
        knee,
        MissRateCurve { points },
        avg_sample_size_bytes,
    ))
}

/// Runs the search over an already-measured curve.
pub fn find_kneepoint_on_curve(
    curve: &MissRateCurve,
    relative_noise: f64,
    avg_sample_size_bytes: f64,
) -> Result<KneepointReport, SizingError> {
    let sizes = curve.sizes();
    find_kneepoint(
        |i, _| {
            let p = &curve.points[i];
            Ok((p.misses_per_instruction, p.actual_bytes))
        },
        &sizes,
        relative_noise,
        avg_sample_size_bytes,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: TaskId,
    pub sample_ids: Vec<u64>,
    pub size_bytes: u64,
    pub spec: SubsampleSpec,
    pub repetition_range: Range<u32>,
    /// A single sample larger than the kneepoint.
    pub outlier: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodePartition {
    pub node_id: NodeId,
    pub samples_count: usize,
    pub sample_ids: Vec<u64>,
}

/// Packs `(id, size)` entries in order. Samples above the kneepoint become
/// flagged singletons; the rest fill groups of `samples_per_task`.
pub fn pack_entries(
    entries: &[(u64, u64)],
    report: &KneepointReport,
    spec: &SubsampleSpec,
    repetitions: Range<u32>,
    first_id: TaskId,
) -> Vec<Task> {
    let spt = report.samples_per_task.max(1) as usize;
    let mut tasks = Vec::new();
    let mut next_id = first_id;
    let mut cur: Vec<(u64, u64)> = Vec::with_capacity(spt.min(entries.len()));
    let mut emit = |group: &[(u64, u64)], outlier: bool, tasks: &mut Vec<Task>| {
        tasks.push(Task {
            id: next_id,
            sample_ids: group.iter().map(|e| e.0).collect(),
            size_bytes: group.iter().map(|e| e.1).sum(),
            spec: *spec,
            repetition_range: repetitions.clone(),
            outlier,
        });
        next_id += 1;
    };
    for &e in entries {
        if e.1 > report.kneepoint_bytes {
            emit(&[e], true, &mut tasks);
            continue;
        }
        cur.push(e);
        if cur.len() == spt {
            emit(&cur, false, &mut tasks);
            cur.clear();
        }
    }
    if !cur.is_empty() {
        emit(&cur, false, &mut tasks);
    }
    tasks
}

/// Packs the whole dataset in manifest order.
pub fn pack_tasks(dataset: &Dataset, report: &KneepointReport, spec: &SubsampleSpec) -> Result<Vec<Task>, SizingError> {
    if dataset.is_empty() {
        return Err(SizingError::EmptyDataset);
    }
    if report.kneepoint_bytes == 0 {
        return Err(SizingError::ZeroKneepoint);
    }
    let entries: Vec<(u64, u64)> = dataset.manifest().iter().map(|e| (e.id, e.size_bytes)).collect();
    Ok(pack_entries(&entries, report, spec, 0..spec.repetitions, 0))
}

/// Packs each node partition separately, so a kneepoint at least as large as
/// a partition yields exactly one task per node. Task ids are global.
pub fn pack_partitions(
    entries: &[(u64, u64)],
    partitions: &[NodePartition],
    report: &KneepointReport,
    spec: &SubsampleSpec,
    repetitions: Range<u32>,
) -> Result<Vec<Task>, SizingError> {
    if entries.is_empty() {
        return Err(SizingError::EmptyDataset);
    }
    if report.kneepoint_bytes == 0 {
        return Err(SizingError::ZeroKneepoint);
    }
    if repetitions.is_empty() {
        return Ok(Vec::new());
    }
    let size_of: std::collections::HashMap<u64, u64> = entries.iter().copied().collect();
    let mut tasks = Vec::new();
    for p in partitions {
        let part: Vec<(u64, u64)> = p.sample_ids.iter().map(|id| (*id, size_of[id])).collect();
        let next = tasks.len() as TaskId;
        tasks.extend(pack_entries(&part, report, spec, repetitions.clone(), next));
    }
    Ok(tasks)
}

/// Round-robin assignment by manifest order.
pub fn partition_entries(entries: &[(u64, u64)], n_nodes: usize) -> Result<Vec<NodePartition>, SizingError> {
    if n_nodes == 0 {
        return Err(SizingError::NoNodes);
    }
    let mut parts: Vec<NodePartition> = (0..n_nodes)
        .map(|n| NodePartition {
            node_id: n as NodeId,
            samples_count: 0,
            sample_ids: Vec::new(),
        })
        .collect();
    for (i, e) in entries.iter().enumerate() {
        let p = &mut parts[i % n_nodes];
        p.sample_ids.push(e.0);
        p.samples_count += 1;
    }
    Ok(parts)
}

pub fn partition_to_nodes(dataset: &Dataset, n_nodes: usize) -> Result<Vec<NodePartition>, SizingError> {
    let entries: Vec<(u64, u64)> = dataset.manifest().iter().map(|e| (e.id, e.size_bytes)).collect();
    partition_entries(&entries, n_nodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SubsampleSpec {
        SubsampleSpec::new(0.1, 3, 0.98, 1).unwrap()
    }

    fn knee_on(pairs: &[(u64, f64)]) -> u64 {
        let curve = MissRateCurve::from_pairs(pairs).unwrap();
        find_kneepoint_on_curve(&curve, 0.0, 1.0).unwrap().kneepoint_bytes
    }

    #[test]
    fn flat_curve_returns_largest() {
        assert_eq!(knee_on(&[(1, 0.2), (2, 0.2), (3, 0.2), (4, 0.2)]), 4);
    }

    #[test]
    fn first_increase_stops_search() {
        // growth: 0.1, 0.1, 0.5 -> knee at size 3
        let pairs = [(1, 0.0), (2, 0.1), (3, 0.2), (4, 0.7), (5, 0.8)];
        let curve = MissRateCurve::from_pairs(&pairs).unwrap();
        let r = find_kneepoint_on_curve(&curve, 0.0, 1.0).unwrap();
        assert_eq!(r.kneepoint_bytes, 3);
        assert_eq!(r.curve.points.len(), 4);
    }

    #[test]
    fn negative_growth_is_clamped() {
        // baseline 0 (clamped), then 0, then positive.
        assert_eq!(knee_on(&[(1, 0.5), (2, 0.3), (3, 0.2), (4, 0.4)]), 3);
    }

    #[test]
    fn candidate_validation() {
        let c = MissRateCurve::from_pairs(&[(1, 0.0), (2, 0.0)]).unwrap();
        assert!(matches!(
            find_kneepoint_on_curve(&c, 0.0, 1.0),
            Err(SizingError::TooFewCandidates(2))
        ));
        let r = find_kneepoint(|_, s| Ok((0.0, s)), &[1, 3, 2], 0.0, 1.0);
        assert!(matches!(r, Err(SizingError::NonIncreasing)));
    }

    #[test]
    fn measurement_errors_propagate() {
        let r = find_kneepoint(
            |i, s| if i == 1 { Err(SizingError::Measurement("boom".into())) } else { Ok((0.0, s)) },
            &[1, 2, 3],
            0.0,
            1.0,
        );
        assert!(matches!(r, Err(SizingError::Measurement(_))));
    }

    #[test]
    fn full_scale_packing_arithmetic() {
        let avg = 230.0e6 / 400.0;
        assert_eq!(samples_per_task(2_500_000, avg), 4);
        let entries: Vec<(u64, u64)> = (0..400).map(|i| (i, 575_000)).collect();
        let report = KneepointReport::new(2_500_000, MissRateCurve::default(), avg);
        assert_eq!(pack_entries(&entries, &report, &spec(), 0..3, 0).len(), 100);
    }

    #[test]
    fn outliers_become_singletons() {
        let entries = vec![(0, 10), (1, 10), (2, 100), (3, 10), (4, 10)];
        let report = KneepointReport::new(20, MissRateCurve::default(), 10.0);
        let tasks = pack_entries(&entries, &report, &spec(), 0..3, 0);
        let groups: Vec<Vec<u64>> = tasks.iter().map(|t| t.sample_ids.clone()).collect();
        assert_eq!(groups, vec![vec![0, 1], vec![2], vec![3, 4]]);
        assert!(tasks[1].outlier);
        assert_eq!(tasks.iter().map(|t| t.id).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn round_robin_counts() {
        let entries: Vec<(u64, u64)> = (0..400).map(|i| (i, 1)).collect();
        let parts = partition_entries(&entries, 6).unwrap();
        assert!(parts.iter().all(|p| p.samples_count == 66 || p.samples_count == 67));
        assert_eq!(partition_entries(&entries, 1).unwrap()[0].samples_count, 400);
        assert!(partition_entries(&entries, 0).is_err());
    }

    #[test]
    fn report_kv_roundtrip() {
        let r = KneepointReport::new(4096, MissRateCurve::default(), 1000.0);
        let mut buf = Vec::new();
        r.write_kv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("kneepoint_bytes=4096\nsamples_per_task=4\n"));
        assert_eq!(KneepointReport::read_kv(&buf[..]).unwrap(), r);
    }
}
