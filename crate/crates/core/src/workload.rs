//! Samples, datasets and the subsampling map/reduce pair.
//!
//! A [`Sample`] is every record sharing one unique id (one family, one
//! movie). Map tasks draw a random fraction of each sample's records and
//! emit the mean of the drawn values as an [`IntermediateResult`]; the reduce
//! side folds those into a [`JobStatistic`].
//!
//! Records are fixed 16-byte pairs (8-byte key, 8-byte value), so a
//! sample's byte size and record count determine each other exactly.

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

use crate::rng;

pub const RECORD_BYTES: u64 = 16;

#[derive(Debug, thiserror::Error)]
pub enum WorkloadError {
    #[error("empty sample")]
    EmptySample,
    #[error("nothing to reduce")]
    NothingToReduce,
    #[error("need at least 2 samples to place the 15x and 7x outliers, got {0}")]
    TooFewSamples(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("duplicate sample id {0}")]
    DuplicateId(u64),
    #[error("payload for sample {id} is {len} bytes, not a whole number of records")]
    RaggedPayload { id: u64, len: usize },
    #[error("sample {id}: manifest says {expected} bytes, payload has {actual}")]
    SizeMismatch { id: u64, expected: u64, actual: u64 },
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = WorkloadError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub key: u64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub records: Vec<Record>,
}

impl Sample {
    pub fn new(id: u64, records: Vec<Record>) -> Self {
        Self { id, records }
    }

    pub fn size_bytes(&self) -> u64 {
        self.records.len() as u64 * RECORD_BYTES
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Mean over every record, summed in record order.
    pub fn exhaustive_mean(&self) -> Option<f64> {
        if self.records.is_empty() {
            return None;
        }
        let sum: f64 = self.records.iter().map(|r| r.value).sum();
        Some(sum / self.records.len() as f64)
    }

    /// Flat little-endian payload: `key u64 | value f64` per record.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.size_bytes() as usize);
        for r in &self.records {
            out.extend_from_slice(&r.key.to_le_bytes());
            out.extend_from_slice(&r.value.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(id: u64, bytes: &[u8]) -> Result<Self> {
        if !(bytes.len() as u64).is_multiple_of(RECORD_BYTES) {
            return Err(WorkloadError::RaggedPayload {
                id,
                len: bytes.len(),
            });
        }
        let records = bytes
            .chunks_exact(RECORD_BYTES as usize)
            .map(|c| Record {
                key: u64::from_le_bytes(c[..8].try_into().unwrap()),
                value: f64::from_le_bytes(c[8..].try_into().unwrap()),
            })
            .collect();
        Ok(Self { id, records })
    }
}

/// One manifest line: `id,size_bytes,locator`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: u64,
    pub size_bytes: u64,
    pub locator: String,
}

pub fn default_locator(id: u64) -> String {
    format!("sample-{id:016x}.bin")
}

pub fn write_manifest<W: Write>(mut w: W, entries: &[ManifestEntry]) -> io::Result<()> {
    for e in entries {
        writeln!(w, "{},{},{}", e.id, e.size_bytes, e.locator)?;
    }
    w.flush()
}

pub fn read_manifest<R: BufRead>(r: R) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, ',');
        let bad = |msg: &str| WorkloadError::Manifest {
            line: lineno,
            msg: msg.to_string(),
        };
        let id = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("bad id"))?;
        let size_bytes = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("bad size_bytes"))?;
        let locator = parts
            .next()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| bad("missing locator"))?;
        out.push(ManifestEntry {
            id,
            size_bytes,
            locator,
        });
    }
    Ok(out)
}

/// An ordered collection of samples plus its manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    manifest: Vec<ManifestEntry>,
    total_bytes: u64,
    index: HashMap<u64, usize>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let manifest = samples
            .iter()
            .map(|s| ManifestEntry {
                id: s.id,
                size_bytes: s.size_bytes(),
                locator: default_locator(s.id),
            })
            .collect();
        Self::with_manifest(samples, manifest)
    }

    fn with_manifest(samples: Vec<Sample>, manifest: Vec<ManifestEntry>) -> Result<Self> {
        let mut index = HashMap::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if index.insert(s.id, i).is_some() {
                return Err(WorkloadError::DuplicateId(s.id));
            }
        }
        let total_bytes = samples.iter().map(Sample::size_bytes).sum();
        Ok(Self {
            samples,
            manifest,
            total_bytes,
            index,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn manifest(&self) -> &[ManifestEntry] {
        &self.manifest
    }

    pub fn total_bytes(&self) -> u64 {
        self.total_bytes
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&Sample> {
        self.index.get(&id).map(|&i| &self.samples[i])
    }

    /// `total_bytes / n_samples`; zero for an empty dataset.
    pub fn avg_sample_size(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.total_bytes as f64 / self.samples.len() as f64
        }
    }

    /// Writes `manifest.csv` and one payload file per sample into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        for (s, e) in self.samples.iter().zip(&self.manifest) {
            fs::write(dir.join(&e.locator), s.to_bytes())?;
        }
        let path = dir.join("manifest.csv");
        write_manifest(BufWriter::new(fs::File::create(&path)?), &self.manifest)?;
        Ok(path)
    }

    /// Loads a manifest and its payloads; locators resolve relative to the
    /// manifest's directory.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = read_manifest(BufReader::new(fs::File::open(manifest_path)?))?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let mut samples = Vec::with_capacity(manifest.len());
        for e in &manifest {
            let bytes = fs::read(base.join(&e.locator))?;
            if bytes.len() as u64 != e.size_bytes {
                return Err(WorkloadError::SizeMismatch {
                    id: e.id,
                    expected: e.size_bytes,
                    actual: bytes.len() as u64,
                });
            }
            samples.push(Sample::from_bytes(e.id, &bytes)?);
        }
        Self::with_manifest(samples, manifest)
    }
}

/// How each sample is subsampled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsampleSpec {
    pub fraction: f64,
    pub repetitions: u32,
    pub confidence: f64,
    pub seed: u64,
}

impl SubsampleSpec {
    pub fn new(fraction: f64, repetitions: u32, confidence: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            fraction,
            repetitions,
            confidence,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(WorkloadError::InvalidArgument(format!(
                "fraction must be in (0,1], got {}",
                self.fraction
            )));
        }
        if self.repetitions == 0 {
            return Err(WorkloadError::InvalidArgument(
                "repetitions must be >= 1".into(),
            ));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(WorkloadError::InvalidArgument(format!(
                "confidence must be in (0,1), got {}",
                self.confidence
            )));
        }
        Ok(())
    }

    /// Records drawn from a sample of `n` records: `ceil(fraction * n)`.
    pub fn draws(&self, n: usize) -> usize {
        if n == 0 {
            return 0;
        }
        // The epsilon keeps e.g. 0.1 * 10_000 from rounding up to 1001.
        let k = (self.fraction * n as f64 - 1e-9).ceil() as usize;
        k.clamp(1, n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntermediateResult {
    pub sample_id: u64,
    pub repetition_index: u32,
    pub statistic: f64,
    pub count: u64,
}

/// Record indices drawn for one (sample, repetition), in draw order.
pub fn subsample_indices(
    n_records: usize,
    spec: &SubsampleSpec,
    sample_id: u64,
    repetition: u32,
) -> Vec<usize> {
    let k = spec.draws(n_records);
    if k == 0 {
        return Vec::new();
    }
    let mut rng = rng::subsample_stream(spec.seed, sample_id, repetition);
    rand::seq::index::sample(&mut rng, n_records, k).into_vec()
}

/// Draws `ceil(fraction * |records|)` records without replacement and returns
/// their mean. A pure function of `(sample, spec, repetition)`.
pub fn subsample(
    sample: &Sample,
    spec: &SubsampleSpec,
    repetition: u32,
) -> Result<IntermediateResult> {
    if sample.is_empty() {
        return Err(WorkloadError::EmptySample);
    }
    if repetition >= spec.repetitions {
        return Err(WorkloadError::InvalidArgument(format!(
            "repetition {repetition} out of range 0..{}",
            spec.repetitions
        )));
    }
    let mut idx = subsample_indices(sample.len(), spec, sample.id, repetition);
    // Summing in index order makes fraction = 1 reproduce the exhaustive mean.
    idx.sort_unstable();
    let sum: f64 = idx.iter().map(|&i| sample.records[i].value).sum();
    Ok(IntermediateResult {
        sample_id: sample.id,
        repetition_index: repetition,
        statistic: sum / idx.len() as f64,
        count: idx.len() as u64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleEstimate {
    pub sample_id: u64,
    /// Count-weighted mean of this sample's statistics.
    pub mean: f64,
    pub count: u64,
    pub repetitions: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobStatistic {
    pub per_sample: Vec<SampleEstimate>,
    /// Count-weighted mean over every part.
    pub aggregate: f64,
    pub total_count: u64,
    pub parts: usize,
}

/// Folds intermediate results. Parts are sorted on
/// `(sample_id, repetition_index)` first, so any permutation or grouping of
/// the same parts yields a bit-identical statistic.
pub fn reduce_combine(parts: &[IntermediateResult]) -> Result<JobStatistic> {
    if parts.is_empty() {
        return Err(WorkloadError::NothingToReduce);
    }
    let mut sorted = parts.to_vec();
    sorted.sort_by(|a, b| {
        (a.sample_id, a.repetition_index)
            .cmp(&(b.sample_id, b.repetition_index))
            .then(a.statistic.total_cmp(&b.statistic))
            .then(a.count.cmp(&b.count))
    });

    let mut per_sample: Vec<SampleEstimate> = Vec::new();
    let mut cur: Option<(u64, f64, u64, u32)> = None;
    let mut total_weighted = 0.0;
    let mut total_count = 0u64;
    for p in &sorted {
        let w = p.statistic * p.count as f64;
        total_weighted += w;
        total_count += p.count;
        match cur.as_mut() {
            Some((id, sum, n, reps)) if *id == p.sample_id => {
                *sum += w;
                *n += p.count;
                *reps += 1;
            }
            _ => {
                if let Some(done) = cur.take() {
                    per_sample.push(finish_sample(done));
                }
                cur = Some((p.sample_id, w, p.count, 1));
            }
        }
    }
    if let Some(done) = cur {
        per_sample.push(finish_sample(done));
    }
    let aggregate = if total_count == 0 {
        f64::NAN
    } else {
        total_weighted / total_count as f64
    };
    Ok(JobStatistic {
        per_sample,
        aggregate,
        total_count,
        parts: sorted.len(),
    })
}

fn finish_sample((sample_id, sum, count, repetitions): (u64, f64, u64, u32)) -> SampleEstimate {
    SampleEstimate {
        sample_id,
        mean: if count == 0 { f64::NAN } else { sum / count as f64 },
        count,
        repetitions,
    }
}

/// Two-sided z quantile for a confidence level.
pub fn z_for_confidence(confidence: f64) -> f64 {
    let n = StatNormal::new(0.0, 1.0).expect("standard normal");
    n.inverse_cdf(1.0 - (1.0 - confidence) / 2.0)
}

/// Half-width of the normal-approximation confidence interval for the mean
/// of `draws` values sampled without replacement from a population of
/// `population` values with standard deviation `population_sd`.
pub fn mean_ci_halfwidth(population_sd: f64, population: usize, draws: usize, confidence: f64) -> f64 {
    let n = population as f64;
    let k = draws as f64;
    let fpc = if population > 1 {
        ((n - k) / (n - 1.0)).max(0.0).sqrt()
    } else {
        0.0
    };
    z_for_confidence(confidence) * population_sd / k.sqrt() * fpc
}

// ---------------------------------------------------------------------------
// Synthetic datasets
// ---------------------------------------------------------------------------

/// Log-normal shape parameter with `P(size > 5 * mean) = 1%`.
///
/// For a log-normal with mean `m`, `P(X > 5m) = 1 - Phi((ln 5 + s^2/2) / s)`;
/// setting the argument to `z_0.99` gives a quadratic in `s` whose smaller
/// root is the gentler tail.
pub fn heavy_tail_sigma() -> f64 {
    let n = StatNormal::new(0.0, 1.0).expect("standard normal");
    let z = n.inverse_cdf(0.99);
    z - (z * z - 2.0 * 5f64.ln()).sqrt()
}

/// Ordinary samples are capped below this multiple of the mean so that the
/// injected 15x and 7x outliers remain the two largest samples.
const ORDINARY_CAP: f64 = 6.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DatasetKind {
    HeavyTailed,
    Ratings,
}

/// Sizes and seeds of a synthetic dataset, without the record payloads.
/// Materializing is deterministic, and each sample can be materialized on
/// its own.
#[derive(Debug, Clone, PartialEq)]
pub struct Blueprint {
    pub kind: DatasetKind,
    pub seed: u64,
    /// `(id, size_bytes)` in manifest order.
    pub entries: Vec<(u64, u64)>,
}

impl Blueprint {
    pub fn total_bytes(&self) -> u64 {
        self.entries.iter().map(|&(_, s)| s).sum()
    }

    pub fn materialize_sample(&self, idx: usize) -> Sample {
        let (id, size) = self.entries[idx];
        let n = (size / RECORD_BYTES) as usize;
        let mut rng = rng::stream(self.seed, &[rng::TAG_RECORDS, id]);
        let records = match self.kind {
            DatasetKind::HeavyTailed => {
                let centre: f64 = rng.sample(Normal::new(0.0, 1.0).unwrap());
                let noise = Normal::new(centre, 1.0).unwrap();
                (0..n)
                    .map(|i| Record {
                        key: (id << 32) | i as u64,
                        value: noise.sample(&mut rng),
                    })
                    .collect()
            }
            DatasetKind::Ratings => {
                let quality: f64 = rng.random_range(1.5..4.5);
                let spread = Normal::new(quality, 1.0).unwrap();
                (0..n)
                    .map(|_| {
                        let day: u64 = rng.random_range(0..2243);
                        let user: u64 = rng.random_range(0..480_189);
                        let rating = spread.sample(&mut rng).round().clamp(1.0, 5.0);
                        Record {
                            key: (day << 32) | user,
                            value: rating,
                        }
                    })
                    .collect()
            }
        };
        Sample::new(id, records)
    }

    pub fn materialize(&self) -> Dataset {
        let samples = (0..self.entries.len())
            .map(|i| self.materialize_sample(i))
            .collect();
        Dataset::new(samples).expect("blueprint ids are unique")
    }
}

fn round_to_records(bytes: f64) -> u64 {
    ((bytes / RECORD_BYTES as f64).round() as u64).max(1) * RECORD_BYTES
}

/// Sizes for a heavy-tailed dataset. With `inject_outliers`, two samples are
/// exactly 15x and 7x `mean_size_bytes`; every other size is log-normal
/// with mean `mean_size_bytes`.
pub fn heavy_tailed_blueprint(
    n_samples: usize,
    mean_size_bytes: u64,
    seed: u64,
    inject_outliers: bool,
) -> Result<Blueprint> {
    if inject_outliers && n_samples < 2 {
        return Err(WorkloadError::TooFewSamples(n_samples));
    }
    if n_samples == 0 {
        return Err(WorkloadError::InvalidArgument("n_samples must be >= 1".into()));
    }
    if mean_size_bytes < RECORD_BYTES {
        return Err(WorkloadError::InvalidArgument(format!(
            "mean_size_bytes must be >= {RECORD_BYTES}"
        )));
    }
    let mean = mean_size_bytes as f64;
    let sigma = heavy_tail_sigma();
    let law = LogNormal::new(mean.ln() - sigma * sigma / 2.0, sigma).unwrap();
    let mut rng = rng::stream(seed, &[rng::TAG_SIZES]);

    let mut sizes: Vec<u64> = (0..n_samples)
        .map(|_| round_to_records(law.sample(&mut rng).min(ORDINARY_CAP * mean)))
        .collect();
    if inject_outliers {
        let picks = rand::seq::index::sample(&mut rng, n_samples, 2).into_vec();
        sizes[picks[0]] = round_to_records(15.0 * mean);
        sizes[picks[1]] = round_to_records(7.0 * mean);
    }
    Ok(Blueprint {
        kind: DatasetKind::HeavyTailed,
        seed,
        entries: sizes.into_iter().enumerate().map(|(i, s)| (i as u64, s)).collect(),
    })
}

pub fn generate_heavy_tailed_dataset(n_samples: usize, mean_size_bytes: u64, seed: u64) -> Result<Dataset> {
    Ok(heavy_tailed_blueprint(n_samples, mean_size_bytes, seed, true)?.materialize())
}

/// Sizes for a ratings dataset: one sample per movie, each within 10% of
/// `bytes_per_movie`.
pub fn ratings_blueprint(n_movies: usize, bytes_per_movie: u64, seed: u64) -> Result<Blueprint> {
    if n_movies == 0 {
        return Err(WorkloadError::InvalidArgument("n_movies must be >= 1".into()));
    }
    if bytes_per_movie < RECORD_BYTES {
        return Err(WorkloadError::InvalidArgument(format!(
            "bytes_per_movie must be >= {RECORD_BYTES}"
        )));
    }
    let mut rng = rng::stream(seed, &[rng::TAG_SIZES]);
    let entries = (0..n_movies)
        .map(|i| {
            let jitter: f64 = rng.random_range(0.9..1.1);
            (i as u64, round_to_records(bytes_per_movie as f64 * jitter))
        })
        .collect();
    Ok(Blueprint {
        kind: DatasetKind::Ratings,
        seed,
        entries,
    })
}

pub fn generate_ratings_dataset(n_movies: usize, bytes_per_movie: u64, seed: u64) -> Result<Dataset> {
    Ok(ratings_blueprint(n_movies, bytes_per_movie, seed)?.materialize())
}
