//! LRU cache modeling over synthetic task access traces.
//!
//! Stack distances are computed with a Fenwick tree over "most recent
//! access" positions, so a trace of n accesses costs O(n log n). Miss rates
//! for any LRU capacity follow from the distances (an access hits iff its
//! distance is below the capacity).
//!
//! Task traces are long and highly repetitive, so internally they are kept
//! run-length compressed: a run of touches to the same block contributes one
//! distance computation for its head; the remaining touches have distance 0.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};

use rayon::prelude::*;

use crate::rng;
use crate::stats;
use crate::workload::{self, Dataset, Sample, SubsampleSpec, RECORD_BYTES};

pub const DEFAULT_BLOCK_BYTES: u64 = 64;

/// Word-sized touches issued while processing one record.
pub const DEFAULT_TOUCHES_PER_RECORD: u32 = 8;

/// Random task compositions measured per curve point; the median is kept.
pub const PROFILE_REPEATS: usize = 3;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CacheError {
    #[error("empty trace")]
    EmptyTrace,
    #[error("capacity must be >= 1 block")]
    ZeroCapacity,
    #[error("block_bytes must be > 0")]
    ZeroBlockBytes,
    #[error("expected {expected} miss rates, got {got}")]
    LevelMismatch { expected: usize, got: usize },
    #[error("cache levels must have strictly increasing capacity and hit cycles")]
    BadLevels,
    #[error("curve sizes must be strictly increasing")]
    NonIncreasingSizes,
    #[error("need at least {need} sizes, got {got}")]
    TooFewSizes { need: usize, got: usize },
    #[error("empty task")]
    EmptyTask,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("curve csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessTrace {
    pub accesses: Vec<u64>,
    pub block_bytes: u64,
}

impl AccessTrace {
    pub fn new(accesses: Vec<u64>, block_bytes: u64) -> Self {
        Self {
            accesses,
            block_bytes,
        }
    }

    pub fn len(&self) -> usize {
        self.accesses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accesses.is_empty()
    }

    /// Number of distinct blocks touched.
    pub fn footprint_blocks(&self) -> usize {
        let mut v = self.accesses.clone();
        v.sort_unstable();
        v.dedup();
        v.len()
    }
}

/// One cache level: LRU capacity and the cycles a hit at this level costs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacheLevel {
    pub capacity_blocks: u64,
    pub hit_cycles: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheConfig {
    /// Capacity used for single-level miss rates and profiling.
    pub capacity_blocks: u64,
    pub levels: Vec<CacheLevel>,
}

impl CacheConfig {
    pub fn single(capacity_blocks: u64) -> Result<Self, CacheError> {
        if capacity_blocks == 0 {
            return Err(CacheError::ZeroCapacity);
        }
        Ok(Self {
            capacity_blocks,
            levels: Vec::new(),
        })
    }

    /// Multi-level configuration; profiling uses the smallest level.
    pub fn with_levels(levels: Vec<CacheLevel>) -> Result<Self, CacheError> {
        let first = levels.first().ok_or(CacheError::BadLevels)?;
        if first.capacity_blocks == 0 {
            return Err(CacheError::ZeroCapacity);
        }
        let ok = levels.windows(2).all(|w| {
            w[0].capacity_blocks < w[1].capacity_blocks && w[0].hit_cycles < w[1].hit_cycles
        });
        if !ok {
            return Err(CacheError::BadLevels);
        }
        Ok(Self {
            capacity_blocks: first.capacity_blocks,
            levels,
        })
    }

    /// Capacities to evaluate: the declared levels, or the single capacity.
    pub fn capacities(&self) -> Vec<u64> {
        if self.levels.is_empty() {
            vec![self.capacity_blocks]
        } else {
            self.levels.iter().map(|l| l.capacity_blocks).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmatModel {
    pub fastest_hit_cycles: f64,
    /// Penalty paid by an access that misses level i (and hits below it).
    pub level_miss_penalties: Vec<f64>,
}

impl AmatModel {
    pub fn single(hit_cycles: f64, miss_penalty: f64) -> Self {
        Self {
            fastest_hit_cycles: hit_cycles,
            level_miss_penalties: vec![miss_penalty],
        }
    }

    /// Classic hierarchy: a miss at level i costs the next level's hit time,
    /// and a miss at the last level costs `memory_cycles`.
    pub fn from_levels(levels: &[CacheLevel], memory_cycles: f64) -> Self {
        let mut penalties: Vec<f64> = levels.iter().skip(1).map(|l| l.hit_cycles).collect();
        penalties.push(memory_cycles);
        Self {
            fastest_hit_cycles: levels.first().map_or(1.0, |l| l.hit_cycles),
            level_miss_penalties: penalties,
        }
    }
}

/// `hit + sum_i (m_1 * ... * m_i) * penalty_i` over local miss rates `m_i`.
pub fn amat(model: &AmatModel, miss_rates_per_level: &[f64]) -> Result<f64, CacheError> {
    if miss_rates_per_level.len() != model.level_miss_penalties.len() {
        return Err(CacheError::LevelMismatch {
            expected: model.level_miss_penalties.len(),
            got: miss_rates_per_level.len(),
        });
    }
    let mut reach = 1.0;
    let mut total = model.fastest_hit_cycles;
    for (m, p) in miss_rates_per_level.iter().zip(&model.level_miss_penalties) {
        reach *= m;
        total += reach * p;
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Stack distances
// ---------------------------------------------------------------------------

struct Fenwick {
    tree: Vec<i32>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self {
            tree: vec![0; n + 1],
        }
    }

    fn add(&mut self, i: usize, delta: i32) {
        let mut i = i + 1;
        while i < self.tree.len() {
            self.tree[i] += delta;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over positions `0..i`.
    fn prefix(&self, i: usize) -> i64 {
        let mut i = i;
        let mut s = 0i64;
        while i > 0 {
            s += i64::from(self.tree[i]);
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Calls `f(distance)` for each element of `blocks`, which must be dense ids
/// below `n_blocks`. `None` is an infinite (first-touch) distance.
fn for_each_distance(blocks: &[u32], n_blocks: usize, mut f: impl FnMut(Option<u64>)) {
    let mut last = vec![u32::MAX; n_blocks];
    let mut fw = Fenwick::new(blocks.len());
    for (pos, &b) in blocks.iter().enumerate() {
        let prev = last[b as usize];
        if prev == u32::MAX {
            f(None);
        } else {
            let p = prev as usize;
            let d = fw.prefix(pos) - fw.prefix(p + 1);
            f(Some(d as u64));
            fw.add(p, -1);
        }
        fw.add(pos, 1);
        last[b as usize] = pos as u32;
    }
}

/// Run-length compressed trace over dense block ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunTrace {
    blocks: Vec<u32>,
    lens: Vec<u32>,
    n_blocks: usize,
    total: u64,
}

impl RunTrace {
    fn push(&mut self, block: u32, times: u32) {
        if times == 0 {
            return;
        }
        self.total += u64::from(times);
        if self.blocks.last() == Some(&block) {
            *self.lens.last_mut().unwrap() += times;
        } else {
            self.blocks.push(block);
            self.lens.push(times);
        }
        self.n_blocks = self.n_blocks.max(block as usize + 1);
    }

    pub fn from_trace(trace: &AccessTrace) -> Self {
        let mut ids: HashMap<u64, u32> = HashMap::new();
        let mut rt = RunTrace::default();
        for &a in &trace.accesses {
            let next = ids.len() as u32;
            let id = *ids.entry(a).or_insert(next);
            rt.push(id, 1);
        }
        rt
    }

    /// Total accesses, counting every touch in every run.
    pub fn len(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn runs(&self) -> usize {
        self.blocks.len()
    }

    pub fn footprint_blocks(&self) -> usize {
        let mut seen = vec![false; self.n_blocks];
        self.blocks.iter().for_each(|&b| seen[b as usize] = true);
        seen.into_iter().filter(|&s| s).count()
    }

    pub fn expand(&self, block_bytes: u64) -> AccessTrace {
        let mut acc = Vec::with_capacity(self.total as usize);
        for (&b, &n) in self.blocks.iter().zip(&self.lens) {
            acc.extend(std::iter::repeat_n(u64::from(b), n as usize));
        }
        AccessTrace::new(acc, block_bytes)
    }

    /// LRU misses for each capacity in one pass.
    pub fn miss_counts(&self, capacities: &[u64]) -> Vec<u64> {
        let mut misses = vec![0u64; capacities.len()];
        for_each_distance(&self.blocks, self.n_blocks, |d| {
            for (m, &c) in misses.iter_mut().zip(capacities) {
                if d.is_none_or(|d| d >= c) {
                    *m += 1;
                }
            }
        });
        // Repeats inside a run have distance 0: they hit for any capacity >= 1.
        misses
    }
}

/// Stack distance of every access; `None` marks a first touch.
pub fn stack_distances(trace: &AccessTrace) -> Vec<Option<u64>> {
    let mut ids: HashMap<u64, u32> = HashMap::new();
    let dense: Vec<u32> = trace
        .accesses
        .iter()
        .map(|a| {
            let next = ids.len() as u32;
            *ids.entry(*a).or_insert(next)
        })
        .collect();
    let mut out = Vec::with_capacity(dense.len());
    for_each_distance(&dense, ids.len(), |d| out.push(d));
    out
}

/// Per-access LRU miss decisions for one capacity.
pub fn miss_flags(trace: &AccessTrace, capacity_blocks: u64) -> Vec<bool> {
    stack_distances(trace)
        .into_iter()
        .map(|d| d.is_none_or(|d| d >= capacity_blocks))
        .collect()
}

/// Fraction of accesses that miss an LRU cache of `config.capacity_blocks`.
pub fn simulate_lru(trace: &AccessTrace, config: &CacheConfig) -> Result<f64, CacheError> {
    if trace.is_empty() {
        return Err(CacheError::EmptyTrace);
    }
    if config.capacity_blocks == 0 {
        return Err(CacheError::ZeroCapacity);
    }
    let rt = RunTrace::from_trace(trace);
    let misses = rt.miss_counts(&[config.capacity_blocks])[0];
    Ok(misses as f64 / trace.len() as f64)
}

/// Local miss rate per level: misses at level i over accesses reaching it.
pub fn local_miss_rates(trace: &RunTrace, config: &CacheConfig) -> Vec<f64> {
    let caps = config.capacities();
    let misses = trace.miss_counts(&caps);
    let mut reaching = trace.len();
    misses
        .iter()
        .map(|&m| {
            let r = if reaching == 0 { 0.0 } else { m as f64 / reaching as f64 };
            reaching = m;
            r
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Task traces
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceParams {
    pub block_bytes: u64,
    pub touches_per_record: u32,
}

impl Default for TraceParams {
    fn default() -> Self {
        Self {
            block_bytes: DEFAULT_BLOCK_BYTES,
            touches_per_record: DEFAULT_TOUCHES_PER_RECORD,
        }
    }
}

/// Compressed trace of a task given only `(sample_id, size_bytes)` pairs.
///
/// For each repetition, each sample is scanned record by record
/// (`touches_per_record` touches on the record's block), and the records
/// drawn by the subsample for that (sample, repetition) are looked up in
/// draw order, spread evenly through the scan. Samples occupy consecutive
/// block ranges in task order.
pub fn task_runs(shape: &[(u64, u64)], spec: &SubsampleSpec, params: TraceParams) -> Result<RunTrace, CacheError> {
    if shape.is_empty() {
        return Err(CacheError::EmptyTask);
    }
    if params.block_bytes == 0 {
        return Err(CacheError::ZeroBlockBytes);
    }
    let mut bases = Vec::with_capacity(shape.len());
    let mut next = 0u64;
    for &(_, size) in shape {
        bases.push(next);
        next += size.div_ceil(params.block_bytes).max(1);
    }
    let block_of = |base: u64, record: usize| (base + record as u64 * RECORD_BYTES / params.block_bytes) as u32;

    let mut rt = RunTrace::default();
    for rep in 0..spec.repetitions {
        for (&(id, size), &base) in shape.iter().zip(&bases) {
            let n = (size / RECORD_BYTES) as usize;
            let draws = if spec.fraction >= 1.0 {
                Vec::new()
            } else {
                workload::subsample_indices(n, spec, id, rep)
            };
            let k = draws.len();
            let mut li = 0usize;
            for r in 0..n {
                rt.push(block_of(base, r), params.touches_per_record);
                // Lookup i goes right after record floor(i * n / k).
                while li < k && li * n / k == r {
                    rt.push(block_of(base, draws[li]), 1);
                    li += 1;
                }
            }
        }
    }
    Ok(rt)
}

fn shape_of(samples: &[Sample]) -> Vec<(u64, u64)> {
    samples.iter().map(|s| (s.id, s.size_bytes())).collect()
}

/// Block-access trace a subsampling task would issue.
pub fn task_trace(task_samples: &[Sample], spec: &SubsampleSpec, block_bytes: u64) -> Result<AccessTrace, CacheError> {
    let params = TraceParams {
        block_bytes,
        ..TraceParams::default()
    };
    Ok(task_runs(&shape_of(task_samples), spec, params)?.expand(block_bytes))
}

/// Misses per access ("instruction") at the configuration's profiling level.
pub fn misses_per_instruction(trace: &RunTrace, capacity_blocks: u64) -> f64 {
    if trace.is_empty() {
        return 0.0;
    }
    trace.miss_counts(&[capacity_blocks])[0] as f64 / trace.len() as f64
}

// ---------------------------------------------------------------------------
// Miss-rate curves
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub task_size_bytes: u64,
    pub misses_per_instruction: f64,
    /// Median aggregate size of the tasks actually built for this point.
    pub actual_bytes: u64,
    /// The target was smaller than every sample, so one sample was used.
    pub single_sample: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MissRateCurve {
    pub points: Vec<CurvePoint>,
}

pub const CURVE_HEADER: &str = "task_size_bytes,misses_per_instruction";

impl MissRateCurve {
    pub fn from_pairs(pairs: &[(u64, f64)]) -> Result<Self, CacheError> {
        let curve = Self {
            points: pairs
                .iter()
                .map(|&(s, m)| CurvePoint {
                    task_size_bytes: s,
                    misses_per_instruction: m,
                    actual_bytes: s,
                    single_sample: false,
                })
                .collect(),
        };
        curve.validate()?;
        Ok(curve)
    }

    pub fn validate(&self) -> Result<(), CacheError> {
        if self
            .points
            .windows(2)
            .any(|w| w[0].task_size_bytes >= w[1].task_size_bytes)
        {
            return Err(CacheError::NonIncreasingSizes);
        }
        Ok(())
    }

    pub fn sizes(&self) -> Vec<u64> {
        self.points.iter().map(|p| p.task_size_bytes).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{CURVE_HEADER}")?;
        for p in &self.points {
            writeln!(w, "{},{}", p.task_size_bytes, p.misses_per_instruction)?;
        }
        w.flush()
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, CacheError> {
        let mut pairs = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| CacheError::Csv {
                line: i + 1,
                msg: e.to_string(),
            })?;
            if i == 0 {
                if line.trim() != CURVE_HEADER {
                    return Err(CacheError::Csv {
                        line: 1,
                        msg: "bad header".into(),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let parsed = line.split_once(',').and_then(|(a, b)| {
                Some((a.trim().parse::<u64>().ok()?, b.trim().parse::<f64>().ok()?))
            });
            match parsed {
                Some(p) => pairs.push(p),
                None => {
                    return Err(CacheError::Csv {
                        line: i + 1,
                        msg: "expected size,rate".into(),
                    })
                }
            }
        }
        Self::from_pairs(&pairs)
    }
}

/// Picks samples in random order, keeping each that still fits under
/// `target`. Returns the chosen shape and whether the target was below every
/// sample (in which case a single sample is used).
pub fn compose_task(entries: &[(u64, u64)], target: u64, seed: u64, salt: &[u64]) -> (Vec<(u64, u64)>, bool) {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..entries.len()).collect();
    let mut parts = vec![rng::TAG_PROFILE];
    parts.extend_from_slice(salt);
    order.shuffle(&mut rng::stream(seed, &parts));
    let mut chosen = Vec::new();
    let mut total = 0u64;
    for &i in &order {
        let (_, s) = entries[i];
        if total + s <= target {
            chosen.push(entries[i]);
            total += s;
        }
    }
    if chosen.is_empty() {
        return (vec![entries[order[0]]], true);
    }
    (chosen, false)
}

/// One curve point: the median misses per instruction over
/// [`PROFILE_REPEATS`] random tasks of about `target` bytes. `index`
/// salts the composition so different points draw different tasks.
pub fn profile_point(
    entries: &[(u64, u64)],
    spec: &SubsampleSpec,
    index: usize,
    target: u64,
    config: &CacheConfig,
    params: TraceParams,
) -> Result<CurvePoint, CacheError> {
    if entries.is_empty() {
        return Err(CacheError::EmptyDataset);
    }
    let mut rates = Vec::with_capacity(PROFILE_REPEATS);
    let mut actual = Vec::with_capacity(PROFILE_REPEATS);
    let mut single = false;
    for r in 0..PROFILE_REPEATS {
        let (task, flag) = compose_task(entries, target, spec.seed, &[index as u64, r as u64]);
        single |= flag;
        let rt = task_runs(&task, spec, params)?;
        rates.push(misses_per_instruction(&rt, config.capacity_blocks));
        actual.push(task.iter().map(|t| t.1).sum::<u64>() as f64);
    }
    Ok(CurvePoint {
        task_size_bytes: target,
        misses_per_instruction: stats::median(&rates).unwrap(),
        actual_bytes: stats::median(&actual).unwrap() as u64,
        single_sample: single,
    })
}

/// Profiles misses per instruction against task size using manifest sizes
/// only. Points are computed in parallel; the result is deterministic.
pub fn profile_curve_shapes(
    entries: &[(u64, u64)],
    spec: &SubsampleSpec,
    sizes: &[u64],
    config: &CacheConfig,
    params: TraceParams,
) -> Result<MissRateCurve, CacheError> {
    if entries.is_empty() {
        return Err(CacheError::EmptyDataset);
    }
    if sizes.len() < 2 {
        return Err(CacheError::TooFewSizes {
            need: 2,
            got: sizes.len(),
        });
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CacheError::NonIncreasingSizes);
    }
    if config.capacity_blocks == 0 {
        return Err(CacheError::ZeroCapacity);
    }
    let points = sizes
        .par_iter()
        .enumerate()
        .map(|(si, &target)| profile_point(entries, spec, si, target, config, params))
        .collect::<Result<Vec<_>, CacheError>>()?;
    Ok(MissRateCurve { points })
}

/// Profiles a dataset: each point is the median over a few random task
/// compositions of roughly that aggregate size.
pub fn profile_curve(
    dataset: &Dataset,
    spec: &SubsampleSpec,
    sizes: &[u64],
    config: &CacheConfig,
) -> Result<MissRateCurve, CacheError> {
    let entries: Vec<(u64, u64)> = dataset.manifest().iter().map(|e| (e.id, e.size_bytes)).collect();
    profile_curve_shapes(&entries, spec, sizes, config, TraceParams::default())
}

/// Geometric candidate sizes from `start` up to and including `end`.
pub fn geometric_sizes(start: u64, end: u64, factor: f64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut s = start.max(1) as f64;
    while (s as u64) < end {
        let v = s.round() as u64;
        if out.last() != Some(&v) {
            out.push(v);
        }
        s *= factor.max(1.0 + 1e-9);
    }
    if out.last() != Some(&end) {
        out.push(end);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(v: &[u64]) -> AccessTrace {
        AccessTrace::new(v.to_vec(), 64)
    }

    #[test]
    fn distances_small_cases() {
        assert_eq!(stack_distances(&tr(&[1, 2, 1])), vec![None, None, Some(1)]);
        assert_eq!(stack_distances(&tr(&[1, 1, 1])), vec![None, Some(0), Some(0)]);
        assert_eq!(
            stack_distances(&tr(&[1, 2, 3, 2, 1])),
            vec![None, None, None, Some(1), Some(2)]
        );
    }

    #[test]
    fn lru_small_cases() {
        let c2 = CacheConfig::single(2).unwrap();
        let c1 = CacheConfig::single(1).unwrap();
        assert!((simulate_lru(&tr(&[1, 2, 1]), &c2).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(simulate_lru(&tr(&[1, 2, 1]), &c1).unwrap(), 1.0);
        assert_eq!(simulate_lru(&tr(&[]), &c1), Err(CacheError::EmptyTrace));
        assert_eq!(CacheConfig::single(0), Err(CacheError::ZeroCapacity));
    }

    #[test]
    fn amat_formula() {
        assert_eq!(amat(&AmatModel::single(1.0, 63.0), &[0.0]).unwrap(), 1.0);
        assert_eq!(amat(&AmatModel::single(1.0, 63.0), &[1.0]).unwrap(), 64.0);
        let two = AmatModel {
            fastest_hit_cycles: 1.0,
            level_miss_penalties: vec![10.0, 63.0],
        };
        assert_eq!(amat(&two, &[0.5, 0.5]).unwrap(), 21.75);
        assert!(amat(&two, &[0.5]).is_err());
    }

    #[test]
    fn level_validation() {
        let lv = |c, h| CacheLevel {
            capacity_blocks: c,
            hit_cycles: h,
        };
        assert!(CacheConfig::with_levels(vec![lv(4, 1.0), lv(8, 3.0)]).is_ok());
        assert_eq!(
            CacheConfig::with_levels(vec![lv(8, 1.0), lv(4, 3.0)]),
            Err(CacheError::BadLevels)
        );
        assert_eq!(
            CacheConfig::with_levels(vec![lv(4, 3.0), lv(8, 1.0)]),
            Err(CacheError::BadLevels)
        );
    }

    #[test]
    fn full_fraction_trace_is_sequential() {
        let spec = SubsampleSpec::new(1.0, 1, 0.9, 1).unwrap();
        let s = Sample::new(
            0,
            (0..64)
                .map(|i| workload::Record { key: i, value: 0.0 })
                .collect(),
        );
        let t = task_trace(&[s], &spec, 64).unwrap();
        assert_eq!(t.len(), 64 * DEFAULT_TOUCHES_PER_RECORD as usize);
        assert!(t.accesses.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1));
        assert_eq!(t.footprint_blocks(), 16);
    }

    #[test]
    fn run_trace_merges_and_expands() {
        let t = tr(&[5, 5, 7, 7, 7, 5]);
        let rt = RunTrace::from_trace(&t);
        assert_eq!(rt.runs(), 3);
        assert_eq!(rt.len(), 6);
        assert_eq!(rt.expand(64).accesses, vec![0, 0, 1, 1, 1, 0]);
    }

    #[test]
    fn geometric_schedule() {
        assert_eq!(geometric_sizes(100, 400, 2.0), vec![100, 200, 400]);
        assert_eq!(geometric_sizes(100, 300, 2.0), vec![100, 200, 300]);
    }

    #[test]
    fn curve_csv_roundtrip() {
        let c = MissRateCurve::from_pairs(&[(10, 0.5), (20, 0.25)]).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert_eq!(MissRateCurve::read_csv(&buf[..]).unwrap(), c);
        assert!(MissRateCurve::from_pairs(&[(10, 0.5), (10, 0.25)]).is_err());
    }
}
