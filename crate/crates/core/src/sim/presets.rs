//! Named simulator configurations.
//!
//! Platform profiles scale startup and add a per-task tax on top of a base
//! configuration. Bench presets bundle a synthetic dataset shape with a
//! cache and cost calibration. All values are tunable parameters.

use crate::cache_model::{geometric_sizes, AmatModel, CacheConfig, CacheLevel, TraceParams};
use crate::datalayer::LatencyModel;
use crate::workload::{self, Blueprint, SubsampleSpec};

use super::SimConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct PlatformProfile {
    pub name: &'static str,
    /// Startup relative to the baseline platform.
    pub startup_ratio: f64,
    /// Added fractional slowdown per task.
    pub runtime_tax: f64,
}

impl PlatformProfile {
    pub fn apply(&self, base: &SimConfig) -> SimConfig {
        SimConfig {
            startup_ms: base.startup_ms * self.startup_ratio,
            runtime_tax: base.runtime_tax + self.runtime_tax,
            ..base.clone()
        }
    }
}

/// `bts` (baseline), `jlh` (job-level recovery Hadoop-like, 3x startup) and
/// `vh` (vanilla Hadoop-like, 4x startup plus a 20% monitoring tax).
pub fn platform_overhead_profiles() -> Vec<PlatformProfile> {
    vec![
        PlatformProfile {
            name: "bts",
            startup_ratio: 1.0,
            runtime_tax: 0.0,
        },
        PlatformProfile {
            name: "jlh",
            startup_ratio: 3.0,
            runtime_tax: 0.0,
        },
        PlatformProfile {
            name: "vh",
            startup_ratio: 4.0,
            runtime_tax: 0.20,
        },
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchPreset {
    pub name: &'static str,
    pub blueprint: Blueprint,
    pub spec: SubsampleSpec,
    pub sim: SimConfig,
    /// Candidate sizes for the offline kneepoint search.
    pub candidates: Vec<u64>,
    pub relative_noise: f64,
    /// Repetitions traced per profiling task (fewer than the job's).
    pub profile_repetitions: u32,
}

impl BenchPreset {
    pub fn entries(&self) -> Vec<(u64, u64)> {
        self.blueprint.entries.clone()
    }

    pub fn by_name(name: &str) -> Option<BenchPreset> {
        match name {
            "eaglet" => Some(eaglet_preset(true)),
            "eaglet-no-outliers" => Some(eaglet_preset(false)),
            "ratings" => Some(ratings_preset()),
            _ => None,
        }
    }
}

pub const PRESET_NAMES: [&str; 3] = ["eaglet", "eaglet-no-outliers", "ratings"];

/// Two-level hierarchy scaled 1/16 from a 1.5 MB L2 and 15 MB L3, 64-byte
/// lines.
fn scaled_cache() -> (CacheConfig, AmatModel) {
    let levels = vec![
        CacheLevel {
            capacity_blocks: 1536,
            hit_cycles: 1.0,
        },
        CacheLevel {
            capacity_blocks: 15_360,
            hit_cycles: 10.0,
        },
    ];
    let amat = AmatModel::from_levels(&levels, 63.0);
    (CacheConfig::with_levels(levels).expect("valid levels"), amat)
}

/// 1,200 heavy-tailed samples, mean 37,696 bytes (589 KB scaled 1/16),
/// 10% subsampling, 30 repetitions, 24 workers.
pub fn eaglet_preset(inject_outliers: bool) -> BenchPreset {
    let seed = 2015;
    let mean = 37_696;
    let blueprint = workload::heavy_tailed_blueprint(1200, mean, seed, inject_outliers).expect("valid preset");
    let (cache, amat) = scaled_cache();
    let n_workers = 24;
    let sim = SimConfig {
        n_workers,
        startup_ms: 20.0,
        overhead_ms: 2.0,
        per_sample_overhead_ms: 0.0,
        cache,
        amat,
        trace: TraceParams::default(),
        cycle_scale_ms: 1e-5,
        latency: LatencyModel::new(0.05, 0.05),
        bandwidth_bytes_per_ms: 1e6,
        seed,
        ..SimConfig::default()
    };
    let partition = blueprint.total_bytes() / n_workers as u64;
    BenchPreset {
        name: if inject_outliers { "eaglet" } else { "eaglet-no-outliers" },
        spec: SubsampleSpec::new(0.1, 30, 0.98, seed).unwrap(),
        candidates: geometric_sizes(mean, partition, 1.5),
        blueprint,
        sim,
        relative_noise: 0.05,
        profile_repetitions: 3,
    }
}

/// 2,000 movies of about 7,552 bytes (118 KB scaled 1/16), a single-stage
/// pipeline with very low per-task overhead.
pub fn ratings_preset() -> BenchPreset {
    let seed = 2006;
    let per_movie = 7_552;
    let blueprint = workload::ratings_blueprint(2000, per_movie, seed).expect("valid preset");
    let (cache, amat) = scaled_cache();
    let n_workers = 24;
    let sim = SimConfig {
        n_workers,
        startup_ms: 20.0,
        overhead_ms: 0.05,
        cache,
        amat,
        cycle_scale_ms: 1e-5,
        latency: LatencyModel::new(0.01, 0.01),
        bandwidth_bytes_per_ms: 1e6,
        seed,
        ..SimConfig::default()
    };
    let partition = blueprint.total_bytes() / n_workers as u64;
    BenchPreset {
        name: "ratings",
        spec: SubsampleSpec::new(0.1, 30, 0.98, seed).unwrap(),
        candidates: geometric_sizes(per_movie, partition, 1.5),
        blueprint,
        sim,
        relative_noise: 0.05,
        profile_repetitions: 3,
    }
}
