//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use twotier::backing::BlockId;
use twotier::tier::Tier;
use twotier::{
    BackingStore, DeviceTiming, Error, PinTarget, ReadMode, Residency, ServerTarget, SimClock,
    StoreConfig, StripeLayout, TieredStore, WriteMode,
};

/// A simulated store under a fresh virtual clock.
#[derive(Debug, Clone)]
pub struct Rig {
    pub block: u64,
    pub capacity: u64,
    pub app_buffer: u64,
    pub backing_buffer: u64,
    pub stripe: u64,
    pub servers: usize,
    pub backing: DeviceTiming,
    pub tier: Option<DeviceTiming>,
}

impl Rig {
    pub fn small() -> Self {
        Rig {
            block: 16,
            capacity: 64,
            app_buffer: 8,
            backing_buffer: 16,
            stripe: 8,
            servers: 2,
            backing: DeviceTiming::symmetric(100.0, 0.0),
            tier: None,
        }
    }

    pub fn build(&self) -> TieredStore {
        let servers = ServerTarget::simulated_set(self.servers, self.backing);
        let layout = StripeLayout::new(self.stripe, (0..self.servers).collect());
        let backing = BackingStore::simulated(servers, layout, SimClock::virtual_clock()).unwrap();
        let config = StoreConfig {
            block_size: self.block,
            tier_capacity: self.capacity,
            app_buffer: self.app_buffer,
            backing_buffer: self.backing_buffer,
            tier_timing: self.tier,
            ..StoreConfig::default()
        };
        TieredStore::new(config, backing).unwrap()
    }
}

pub fn pattern(n: usize, seed: u64) -> Vec<u8> {
    let mut v = vec![0u8; n];
    twotier::bench::fill_pattern(&mut v, seed);
    v
}

/// Reference LRU: a plain list ordered from least to most recently used.
#[derive(Debug, Default)]
pub struct ListLru {
    capacity: u64,
    entries: Vec<(BlockId, u64, bool)>,
}

impl ListLru {
    pub fn new(capacity: u64) -> Self {
        ListLru {
            capacity,
            entries: Vec::new(),
        }
    }

    fn used(&self) -> u64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.entries.iter().any(|e| e.0 == id)
    }

    pub fn touch(&mut self, id: BlockId) {
        if let Some(i) = self.entries.iter().position(|e| e.0 == id) {
            let e = self.entries.remove(i);
            self.entries.push(e);
        }
    }

    pub fn insert(&mut self, id: BlockId, size: u64) {
        let pinned = match self.entries.iter().position(|e| e.0 == id) {
            Some(i) => self.entries.remove(i).2,
            None => false,
        };
        self.entries.push((id, size, pinned));
    }

    pub fn set_pinned(&mut self, id: BlockId, on: bool) {
        if let Some(e) = self.entries.iter_mut().find(|e| e.0 == id) {
            e.2 = on;
        }
    }

    pub fn evict(&mut self, target_free: u64) -> Vec<BlockId> {
        let goal = self.capacity.saturating_sub(target_free);
        let mut out = Vec::new();
        let mut i = 0;
        while self.used() > goal && i < self.entries.len() {
            if self.entries[i].2 {
                i += 1;
            } else {
                out.push(self.entries.remove(i).0);
            }
        }
        out
    }
}

/// Replays one random access trace against [`Tier`] and the list oracle.
/// Returns the number of victims compared.
pub fn lru_trace(seed: u64, accesses: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let capacity = rng.random_range(4..=16u64) * 8;
    let mut tier = Tier::new(capacity);
    let mut oracle = ListLru::new(capacity);
    let universe = rng.random_range(4..40u64);
    let mut compared = 0;
    for step in 0..accesses {
        let id = rng.random_range(0..universe);
        let roll = rng.random_range(0..100);
        let (got, want) = if roll < 5 {
            let on = rng.random_bool(0.5);
            tier.set_pinned(id, on);
            oracle.set_pinned(id, on);
            (vec![], vec![])
        } else if roll < 12 {
            let target = rng.random_range(0..=capacity);
            (
                tier.evict(target, &[]).into_iter().map(|v| v.0).collect(),
                oracle.evict(target),
            )
        } else if tier.contains(id) {
            tier.get(id);
            oracle.touch(id);
            (vec![], vec![])
        } else {
            let size = rng.random_range(1..=2u64) * 8;
            let g: Vec<BlockId> = tier.evict(size, &[]).into_iter().map(|v| v.0).collect();
            let w = oracle.evict(size);
            if tier.used() + size <= capacity {
                tier.insert(id, bytes::Bytes::from(vec![0u8; size as usize]));
                oracle.insert(id, size);
            }
            (g, w)
        };
        if got != want {
            return Err(format!(
                "seed {seed} step {step}: victims {got:?}, oracle {want:?}"
            ));
        }
        compared += got.len();
        if tier.contains(id) != oracle.contains(id) {
            return Err(format!(
                "seed {seed} step {step}: residency of {id} differs"
            ));
        }
    }
    Ok(compared)
}

const WRITE_MODES: [WriteMode; 3] = [
    WriteMode::MemoryOnly,
    WriteMode::Bypass,
    WriteMode::WriteThrough,
];
const READ_MODES: [ReadMode; 3] = [
    ReadMode::MemoryOnly,
    ReadMode::BypassNoCache,
    ReadMode::TieredCaching,
];

struct Expected {
    path: String,
    mode: WriteMode,
    data: Vec<u8>,
    sealed: bool,
    /// Every block was persisted while none was lost.
    safe: bool,
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SequenceReport {
    pub reads_checked: u64,
    pub bytes_compared: u64,
    pub data_loss_errors: u64,
    /// Bit `3 * write_mode + read_mode` is set once that pairing was read.
    pub mode_pairs: u16,
}

fn fail(seed: u64, step: usize, what: impl std::fmt::Display) -> String {
    format!("seed {seed} step {step}: {what}")
}

/// Runs one random operation sequence on a small simulated store and checks
/// every read against a byte-level reference. Reads may fail only with the
/// errors the file's write mode and the read mode allow, and never return
/// wrong bytes.
pub fn store_sequence(seed: u64, ops: usize) -> Result<SequenceReport, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rig = Rig {
        stripe: [4, 8, 16][rng.random_range(0..3)],
        servers: rng.random_range(1..=3),
        ..Rig::small()
    };
    let store = rig.build();
    let cap = rig.capacity as usize;
    let mut files: Vec<Expected> = Vec::new();
    let mut report = SequenceReport::default();

    for step in 0..ops {
        match rng.random_range(0..100) {
            0..=24 => {
                let mode = WRITE_MODES[rng.random_range(0..3)];
                let path = format!("f{step}");
                let h = store.create(&path, mode).map_err(|e| fail(seed, step, e))?;
                let total = rng.random_range(0..=8 * cap);
                let content = pattern(total, seed ^ step as u64);
                let mut written = Vec::new();
                let mut pos = 0;
                while pos < total {
                    let n = rng.random_range(1..=40).min(total - pos);
                    match store.append(&h, &content[pos..pos + n]) {
                        Ok(_) => written.extend_from_slice(&content[pos..pos + n]),
                        Err(Error::Capacity { .. }) if mode == WriteMode::MemoryOnly => {}
                        Err(e) => return Err(fail(seed, step, format!("append: {e}"))),
                    }
                    pos += n;
                }
                let sealed = rng.random_bool(0.9);
                if sealed {
                    store.seal(&path).map_err(|e| fail(seed, step, e))?;
                }
                let mut safe = mode != WriteMode::MemoryOnly;
                if sealed && !safe && rng.random_bool(0.5) {
                    let meta = store.metadata(&path).unwrap();
                    let intact = meta.blocks.iter().all(|b| b.residency != Residency::Lost);
                    store.checkpoint(&path).map_err(|e| fail(seed, step, e))?;
                    safe = intact;
                }
                files.push(Expected {
                    path,
                    mode,
                    data: written,
                    sealed,
                    safe,
                });
            }
            25..=64 if !files.is_empty() => {
                let f = &files[rng.random_range(0..files.len())];
                let rm = rng.random_range(0..3);
                let mode = READ_MODES[rm];
                let wm = WRITE_MODES.iter().position(|m| *m == f.mode).unwrap();
                report.mode_pairs |= 1 << (3 * wm + rm);
                let len = f.data.len() as u64;
                let off = rng.random_range(0..=len);
                let n = rng.random_range(0..=len - off);
                match store.read(&f.path, off, n, mode) {
                    Ok(got) => {
                        if !f.sealed {
                            return Err(fail(seed, step, "read of unsealed file succeeded"));
                        }
                        if got != f.data[off as usize..(off + n) as usize] {
                            return Err(fail(
                                seed,
                                step,
                                format!("byte mismatch in {} at {off}+{n}", f.path),
                            ));
                        }
                        report.reads_checked += 1;
                        report.bytes_compared += n;
                    }
                    Err(Error::NotSealed(_)) if !f.sealed => {}
                    Err(Error::DataLoss { .. }) if !f.safe => report.data_loss_errors += 1,
                    Err(Error::NotResident { .. })
                        if mode == ReadMode::MemoryOnly
                            || (mode == ReadMode::BypassNoCache
                                && f.mode == WriteMode::MemoryOnly) => {}
                    Err(e) => {
                        return Err(fail(
                            seed,
                            step,
                            format!("read {} ({:?}, {mode}): {e}", f.path, f.mode),
                        ))
                    }
                }
            }
            65..=74 => {
                store.evict(rng.random_range(0..=rig.capacity));
            }
            75..=82 if !files.is_empty() => {
                let i = rng.random_range(0..files.len());
                let f = &mut files[i];
                let intact = store
                    .metadata(&f.path)
                    .unwrap()
                    .blocks
                    .iter()
                    .all(|b| b.residency != Residency::Lost);
                store.checkpoint(&f.path).map_err(|e| fail(seed, step, e))?;
                if intact && f.sealed {
                    f.safe = true;
                }
            }
            83..=90 if !files.is_empty() => {
                let f = &files[rng.random_range(0..files.len())];
                match store.pin(PinTarget::Path(&f.path), rng.random_bool(0.5)) {
                    Ok(()) | Err(Error::NotResident { .. }) => {}
                    Err(e) => return Err(fail(seed, step, format!("pin: {e}"))),
                }
            }
            91..=95 if !files.is_empty() => {
                let f = &files[rng.random_range(0..files.len())];
                match store.verify(&f.path) {
                    Ok(()) => {}
                    Err(Error::DataLoss { .. }) if !f.safe => {}
                    Err(e) => return Err(fail(seed, step, format!("verify: {e}"))),
                }
            }
            _ => {
                // Memory-only data evicted before any checkpoint must be
                // reported lost.
                let path = format!("loss{step}");
                let h = store.create(&path, WriteMode::MemoryOnly).unwrap();
                let data = pattern(rng.random_range(1..=rig.block as usize), step as u64);
                match store.append(&h, &data) {
                    Ok(_) => {}
                    Err(Error::Capacity { .. }) => continue,
                    Err(e) => return Err(fail(seed, step, e)),
                }
                store.seal(&path).unwrap();
                let victims = store.evict_all();
                let meta = store.metadata(&path).unwrap();
                let id = meta.blocks[0].block_id;
                if victims.contains(&id) {
                    match store.read_all(&path, ReadMode::TieredCaching) {
                        Err(Error::DataLoss { block_id, .. }) if block_id == id => {
                            report.data_loss_errors += 1
                        }
                        other => {
                            return Err(fail(
                                seed,
                                step,
                                format!("expected data loss, got {other:?}"),
                            ))
                        }
                    }
                }
                files.push(Expected {
                    path,
                    mode: WriteMode::MemoryOnly,
                    data,
                    sealed: true,
                    safe: false,
                });
            }
        }
    }
    Ok(report)
}

/// Stores one block of `len` bytes over `m` simulated servers and checks
/// balance, exact partitioning and byte-identical reassembly.
pub fn stripe_case(len: u64, stripe: u64, m: usize, block_id: BlockId) -> Result<(), String> {
    let servers = ServerTarget::simulated_set(m, DeviceTiming::symmetric(1000.0, 0.0));
    let store = BackingStore::simulated(
        servers,
        StripeLayout::new(stripe, (0..m).collect()),
        SimClock::virtual_clock(),
    )
    .map_err(|e| e.to_string())?;
    let data = pattern(len as usize, block_id ^ len);
    let records = store
        .put_block(block_id, &data)
        .map_err(|e| e.to_string())?;
    let ctx = format!("len {len} stripe {stripe} m {m}");

    let mut counts = vec![0usize; m];
    let mut next = 0;
    for (i, r) in records.iter().enumerate() {
        if r.stripe_seq as usize != i || r.offset != next || r.length == 0 || r.length > stripe {
            return Err(format!("{ctx}: bad record {r:?}"));
        }
        next += r.length;
        counts[r.server_id] += 1;
    }
    if next != len {
        return Err(format!("{ctx}: stripes cover {next} bytes"));
    }
    let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
    if hi - lo > 1 {
        return Err(format!("{ctx}: unbalanced counts {counts:?}"));
    }
    if store.get_block(block_id).map_err(|e| e.to_string())? != data {
        return Err(format!("{ctx}: reassembly differs"));
    }
    Ok(())
}
