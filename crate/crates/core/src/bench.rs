//! Benchmark drivers over a [`TieredStore`].
//!
//! The storage mountain measures read throughput over a grid of data sizes
//! and skip sizes: each point reads one application buffer, advances the
//! cursor by the skip size and repeats to the end of the data. The
//! sequential benchmark writes and reads a run of equally sized files.
//!
//! Elapsed time is read from the store's clock, so under a virtual clock
//! with simulated devices every figure is deterministic.

use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{format_mbps, Direction};
use crate::store::{PinTarget, ReadMode, TieredStore, WriteMode, KIB, MIB};

#[derive(Debug, Clone, PartialEq)]
pub struct MountainSpec {
    /// Ascending, geometric.
    pub data_sizes: Vec<u64>,
    /// Ascending; usually 0 followed by a geometric series.
    pub skip_sizes: Vec<u64>,
    pub repetitions: usize,
    /// Must match the store's tier capacity.
    pub tier_capacity: u64,
    /// Pin the blocks left in the tier after ingest, so that reads of data
    /// larger than the tier keep the resident fraction fixed instead of
    /// cycling it through LRU.
    pub pin_resident: bool,
    /// Upper bound on the total bytes ingested into the backing store.
    pub backing_capacity: Option<u64>,
}

/// `start, 2·start, 4·start, …` up to and including `end`.
pub fn geometric(start: u64, end: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut v = start.max(1);
    while v <= end {
        out.push(v);
        v *= 2;
    }
    out
}

impl MountainSpec {
    /// 64 MiB tier, 4 MiB to 1 GiB of data, skips from 0 to 4 MiB. The
    /// largest data size is 16 times the tier.
    pub fn desk_scale() -> Self {
        let mut skips = vec![0];
        skips.extend(geometric(128 * KIB, 4 * MIB));
        MountainSpec {
            data_sizes: geometric(4 * MIB, 1024 * MIB),
            skip_sizes: skips,
            repetitions: 5,
            tier_capacity: 64 * MIB,
            pin_resident: true,
            backing_capacity: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_sizes.is_empty() || self.skip_sizes.is_empty() {
            return Err(Error::invalid(
                "mountain needs at least one data size and one skip size",
            ));
        }
        if !self.data_sizes.windows(2).all(|w| w[0] < w[1])
            || !self.skip_sizes.windows(2).all(|w| w[0] < w[1])
        {
            return Err(Error::invalid("mountain sizes must be strictly ascending"));
        }
        if self.data_sizes[0] == 0 {
            return Err(Error::invalid("data sizes must be positive"));
        }
        if self.repetitions == 0 {
            return Err(Error::invalid("repetitions must be at least 1"));
        }
        Ok(())
    }
}

impl Default for MountainSpec {
    fn default() -> Self {
        MountainSpec::desk_scale()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MountainPoint {
    pub data_size: u64,
    pub skip_size: u64,
    /// Median of `samples`, decimal MB/s.
    pub throughput_mbps: f64,
    /// One value per repetition, in run order.
    pub samples: Vec<f64>,
    /// Tier-resident fraction of the data when the point was measured.
    pub residency: f64,
}

/// Median that does not depend on sample order.
pub fn median(samples: &[f64]) -> f64 {
    assert!(!samples.is_empty(), "median of nothing");
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

/// Deterministic pseudo-random content for benchmark files.
pub fn fill_pattern(buf: &mut [u8], seed: u64) {
    ChaCha8Rng::seed_from_u64(seed).fill_bytes(buf);
}

fn ingest(store: &TieredStore, path: &str, size: u64, mode: WriteMode, seed: u64) -> Result<()> {
    let h = store.create(path, mode)?;
    let chunk = store.config().app_buffer;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0u8; chunk as usize];
    let mut left = size;
    while left > 0 {
        let n = left.min(chunk) as usize;
        rng.fill_bytes(&mut buf[..n]);
        store.append(&h, &buf[..n])?;
        left -= n as u64;
    }
    store.seal(path)?;
    Ok(())
}

fn elapsed_rate(bytes: u64, elapsed_us: f64) -> Result<f64> {
    if elapsed_us <= 0.0 {
        return Err(Error::invalid(
            "no time elapsed; configure simulated device timing or use the real clock",
        ));
    }
    Ok(bytes as f64 / elapsed_us)
}

/// Reads the file with the skip pattern once and returns MB/s.
pub fn skip_read(store: &TieredStore, path: &str, skip: u64, mode: ReadMode) -> Result<f64> {
    let mut reader = store.reader(path, mode)?;
    let len = reader.len();
    let request = store.config().app_buffer;
    let clock = store.clock();
    let start = clock.now_us();
    let mut cursor = 0;
    let mut bytes = 0;
    while cursor < len {
        let n = request.min(len - cursor);
        reader.read_at(cursor, n)?;
        bytes += n;
        cursor += n + skip;
    }
    elapsed_rate(bytes, clock.now_us() - start)
}

/// Sequential whole-file read rate under `mode`.
pub fn measure_read_rate(store: &TieredStore, path: &str, mode: ReadMode) -> Result<f64> {
    skip_read(store, path, 0, mode)
}

pub fn mountain_path(data_size: u64) -> String {
    format!("mountain/{data_size}")
}

/// Runs the storage mountain on `store`. Each data size is ingested
/// write-through into its own file after the tier has been emptied, so the
/// tier holds the first `tier_capacity` bytes of it. The file is deleted
/// once its row of points is measured.
pub fn run_mountain(store: &TieredStore, spec: &MountainSpec) -> Result<Vec<MountainPoint>> {
    spec.validate()?;
    if store.config().tier_capacity != spec.tier_capacity {
        return Err(Error::invalid(format!(
            "store tier capacity {} differs from the mountain's {}",
            store.config().tier_capacity,
            spec.tier_capacity
        )));
    }
    let largest = *spec.data_sizes.last().expect("validated");
    if spec.tier_capacity >= largest {
        return Err(Error::invalid(
            "tier capacity must be below the largest data size",
        ));
    }
    if let Some(cap) = spec.backing_capacity {
        let total: u64 = spec.data_sizes.iter().sum();
        if total > cap {
            return Err(Error::Capacity {
                needed: total,
                available: cap,
            });
        }
    }

    let mut points = Vec::with_capacity(spec.data_sizes.len() * spec.skip_sizes.len());
    for &size in &spec.data_sizes {
        store.evict_all();
        let path = mountain_path(size);
        if store.metadata(&path).is_ok() {
            store.delete(&path)?;
        }
        ingest(store, &path, size, WriteMode::WriteThrough, size)?;
        if spec.pin_resident {
            pin_resident_blocks(store, &path)?;
        }
        let residency = store.residency_ratio(&path)?;
        for &skip in &spec.skip_sizes {
            let samples = (0..spec.repetitions)
                .map(|_| skip_read(store, &path, skip, ReadMode::TieredCaching))
                .collect::<Result<Vec<f64>>>()?;
            points.push(MountainPoint {
                data_size: size,
                skip_size: skip,
                throughput_mbps: median(&samples),
                samples,
                residency,
            });
        }
        store.delete(&path)?;
    }
    Ok(points)
}

fn pin_resident_blocks(store: &TieredStore, path: &str) -> Result<()> {
    for b in store.metadata(path)?.blocks {
        if b.residency.in_tier() {
            store.pin(PinTarget::Block(b.block_id), true)?;
        }
    }
    Ok(())
}

pub const MOUNTAIN_HEADER: &str = "data_size,skip_size,throughput_mbps,samples";

/// Writes mountain points as CSV; samples are `;`-separated.
pub fn emit_mountain_csv(points: &[MountainPoint], out: &mut dyn Write) -> Result<()> {
    if points.is_empty() {
        return Err(Error::invalid("no mountain points to write"));
    }
    writeln!(out, "{MOUNTAIN_HEADER}")?;
    for p in points {
        let samples: Vec<String> = p.samples.iter().map(|s| format_mbps(*s)).collect();
        writeln!(
            out,
            "{},{},{},{}",
            p.data_size,
            p.skip_size,
            format_mbps(p.throughput_mbps),
            samples.join(";")
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqTarget {
    /// Memory tier only.
    Tier,
    /// Backing store only.
    Backing,
    /// Write-through ingest, tiered reads.
    Tiered,
}

impl std::str::FromStr for SeqTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tier" => Ok(SeqTarget::Tier),
            "backing" => Ok(SeqTarget::Backing),
            "tiered" => Ok(SeqTarget::Tiered),
            other => Err(Error::invalid(format!("unknown seqbench target `{other}`"))),
        }
    }
}

impl SeqTarget {
    fn modes(self) -> (WriteMode, ReadMode) {
        match self {
            SeqTarget::Tier => (WriteMode::MemoryOnly, ReadMode::MemoryOnly),
            SeqTarget::Backing => (WriteMode::Bypass, ReadMode::BypassNoCache),
            SeqTarget::Tiered => (WriteMode::WriteThrough, ReadMode::TieredCaching),
        }
    }
}

/// What to do about caches between the write and read phases.
///
/// Operating-system page caches cannot be dropped portably, so
/// `BestEffortBypass` only empties the store's own tier before reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CacheDiscipline {
    #[default]
    BestEffortBypass,
    None,
}

impl std::str::FromStr for CacheDiscipline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "best-effort-bypass" | "best_effort_bypass" => Ok(CacheDiscipline::BestEffortBypass),
            "none" => Ok(CacheDiscipline::None),
            other => Err(Error::invalid(format!(
                "unknown cache discipline `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqBenchSpec {
    pub target: SeqTarget,
    pub file_count: usize,
    pub file_size: u64,
    pub direction: Direction,
    pub cache_discipline: CacheDiscipline,
    /// Independent file streams run concurrently.
    pub streams: usize,
    /// Prefix of the benchmark file names.
    pub prefix: String,
}

impl Default for SeqBenchSpec {
    fn default() -> Self {
        SeqBenchSpec {
            target: SeqTarget::Backing,
            file_count: 16,
            file_size: 16 * MIB,
            direction: Direction::Read,
            cache_discipline: CacheDiscipline::default(),
            streams: 1,
            prefix: "seqbench".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqFileResult {
    pub index: usize,
    pub bytes: u64,
    pub elapsed_us: f64,
    pub throughput_mbps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqReport {
    pub direction: Direction,
    pub files: Vec<SeqFileResult>,
    pub mean_mbps: f64,
    pub total_bytes: u64,
}

fn seq_path(spec: &SeqBenchSpec, i: usize) -> String {
    format!("{}/{i}", spec.prefix)
}

/// Writes (and for reads, first ingests) `file_count` files, timing each
/// one. Reads use `app_buffer` requests.
pub fn run_seqbench(store: &TieredStore, spec: &SeqBenchSpec) -> Result<SeqReport> {
    if spec.file_count == 0 || spec.streams == 0 {
        return Err(Error::invalid("file_count and streams must be at least 1"));
    }
    let (write_mode, read_mode) = spec.target.modes();
    if spec.target == SeqTarget::Tier {
        let total = spec.file_count as u64 * spec.file_size;
        if total > store.config().tier_capacity {
            return Err(Error::Capacity {
                needed: total,
                available: store.config().tier_capacity,
            });
        }
    }

    let write_one = |i: usize| -> Result<SeqFileResult> {
        let clock = store.clock();
        let start = clock.now_us();
        ingest(
            store,
            &seq_path(spec, i),
            spec.file_size,
            write_mode,
            i as u64,
        )?;
        let elapsed = clock.now_us() - start;
        Ok(SeqFileResult {
            index: i,
            bytes: spec.file_size,
            elapsed_us: elapsed,
            throughput_mbps: elapsed_rate(spec.file_size, elapsed)?,
        })
    };
    let read_one = |i: usize| -> Result<SeqFileResult> {
        let path = seq_path(spec, i);
        let clock = store.clock();
        let mut reader = store.reader(&path, read_mode)?;
        let len = reader.len();
        let request = store.config().app_buffer;
        let start = clock.now_us();
        let mut pos = 0;
        while pos < len {
            let n = request.min(len - pos);
            reader.read_at(pos, n)?;
            pos += n;
        }
        let elapsed = clock.now_us() - start;
        Ok(SeqFileResult {
            index: i,
            bytes: len,
            elapsed_us: elapsed,
            throughput_mbps: elapsed_rate(len, elapsed)?,
        })
    };

    let files = match spec.direction {
        Direction::Write => run_streams(spec, write_one)?,
        Direction::Read => {
            for i in 0..spec.file_count {
                if store.metadata(&seq_path(spec, i)).is_err() {
                    write_one(i)?;
                }
            }
            if spec.cache_discipline == CacheDiscipline::BestEffortBypass
                && spec.target == SeqTarget::Tiered
            {
                store.evict_all();
            }
            run_streams(spec, read_one)?
        }
    };
    let total_bytes = files.iter().map(|f| f.bytes).sum();
    let mean_mbps = files.iter().map(|f| f.throughput_mbps).sum::<f64>() / files.len() as f64;
    Ok(SeqReport {
        direction: spec.direction,
        files,
        mean_mbps,
        total_bytes,
    })
}

fn run_streams<F>(spec: &SeqBenchSpec, one: F) -> Result<Vec<SeqFileResult>>
where
    F: Fn(usize) -> Result<SeqFileResult> + Sync,
{
    if spec.streams == 1 {
        return (0..spec.file_count).map(&one).collect();
    }
    let mut results: Vec<SeqFileResult> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..spec.streams)
            .map(|s| {
                let one = &one;
                scope.spawn(move || {
                    (s..spec.file_count)
                        .step_by(spec.streams)
                        .map(one)
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("stream thread panicked"))
            .collect::<Result<Vec<Vec<_>>>>()
    })?
    .into_iter()
    .flatten()
    .collect();
    results.sort_by_key(|r| r.index);
    Ok(results)
}

pub const SEQ_HEADER: &str = "file,direction,bytes,elapsed_us,throughput_mbps";

/// One row per file, then a `mean` row.
pub fn emit_seq_csv(report: &SeqReport, out: &mut dyn Write) -> Result<()> {
    if report.files.is_empty() {
        return Err(Error::invalid("no seqbench results to write"));
    }
    writeln!(out, "{SEQ_HEADER}")?;
    for f in &report.files {
        writeln!(
            out,
            "{},{},{},{},{}",
            f.index,
            report.direction,
            f.bytes,
            format_mbps(f.elapsed_us),
            format_mbps(f.throughput_mbps)
        )?;
    }
    let elapsed: f64 = report.files.iter().map(|f| f.elapsed_us).sum();
    writeln!(
        out,
        "mean,{},{},{},{}",
        report.direction,
        report.total_bytes,
        format_mbps(elapsed),
        format_mbps(report.mean_mbps)
    )?;
    Ok(())
}
