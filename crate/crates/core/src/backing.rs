//! Persistent striped block storage.
//!
//! Each block is cut into `stripe_size` chunks placed round-robin over a
//! set of server targets. A target is either a directory on the local file
//! system (one file per stripe, named `<block_id>.<seq>`) or a simulated
//! device that keeps stripes in memory and charges a [`SimClock`] for every
//! transfer. Every stripe carries a checksum that is verified on read.
//!
//! A block becomes visible only once all of its stripe records have been
//! committed to the manifest.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use bytes::{Bytes, BytesMut};
use parking_lot::{Mutex, RwLock};

use crate::clock::{DeviceTiming, SimClock};
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::model::Direction;

pub type BlockId = u64;

/// 64-bit content digest used for blocks and stripes.
pub fn digest(bytes: &[u8]) -> u64 {
    xxhash_rust::xxh3::xxh3_64(bytes)
}

/// Which server receives the first stripe of a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StartPolicy {
    /// Every block starts on the first server of the layout.
    FixedZero,
    /// Block `b` starts on server `b mod M`.
    #[default]
    RotatePerBlock,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ServerKind {
    Directory { root: PathBuf },
    Simulated { timing: DeviceTiming },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerTarget {
    pub id: usize,
    pub kind: ServerKind,
}

impl ServerTarget {
    pub fn directory(id: usize, root: impl Into<PathBuf>) -> Self {
        ServerTarget {
            id,
            kind: ServerKind::Directory { root: root.into() },
        }
    }

    pub fn simulated(id: usize, timing: DeviceTiming) -> Self {
        ServerTarget {
            id,
            kind: ServerKind::Simulated { timing },
        }
    }

    /// `count` directory targets under `parent/server-<i>`.
    pub fn directories(parent: &Path, count: usize) -> Vec<Self> {
        (0..count)
            .map(|i| Self::directory(i, parent.join(format!("server-{i}"))))
            .collect()
    }

    /// `count` identical simulated targets.
    pub fn simulated_set(count: usize, timing: DeviceTiming) -> Vec<Self> {
        (0..count).map(|i| Self::simulated(i, timing)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StripeLayout {
    pub stripe_size: u64,
    /// Server ids, in round-robin order.
    pub servers: Vec<usize>,
    pub start_policy: StartPolicy,
}

impl StripeLayout {
    pub fn new(stripe_size: u64, servers: Vec<usize>) -> Self {
        StripeLayout {
            stripe_size,
            servers,
            start_policy: StartPolicy::default(),
        }
    }

    pub fn with_start_policy(mut self, policy: StartPolicy) -> Self {
        self.start_policy = policy;
        self
    }

    fn start(&self, block_id: BlockId) -> usize {
        match self.start_policy {
            StartPolicy::FixedZero => 0,
            StartPolicy::RotatePerBlock => (block_id % self.servers.len() as u64) as usize,
        }
    }

    /// Server receiving stripe `seq` of `block_id`.
    pub fn server_for(&self, block_id: BlockId, seq: u32) -> usize {
        let m = self.servers.len();
        self.servers[(self.start(block_id) + seq as usize) % m]
    }

    /// `(seq, server, offset, length)` for every stripe of a block of `len`
    /// bytes.
    pub fn plan(&self, block_id: BlockId, len: u64) -> Vec<(u32, usize, u64, u64)> {
        let mut out = Vec::new();
        let mut offset = 0;
        let mut seq = 0u32;
        while offset < len {
            let length = self.stripe_size.min(len - offset);
            out.push((seq, self.server_for(block_id, seq), offset, length));
            offset += length;
            seq += 1;
        }
        out
    }

    fn validate(&self, server_count: usize) -> Result<()> {
        if self.stripe_size == 0 {
            return Err(Error::invalid("stripe size must be positive"));
        }
        if self.servers.is_empty() {
            return Err(Error::invalid("layout needs at least one server"));
        }
        let mut seen = HashSet::new();
        for &s in &self.servers {
            if s >= server_count {
                return Err(Error::invalid(format!("unknown server {s}")));
            }
            if !seen.insert(s) {
                return Err(Error::invalid(format!("server {s} listed twice")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StripeRecord {
    pub block_id: BlockId,
    pub stripe_seq: u32,
    pub server_id: usize,
    /// Offset within the block.
    pub offset: u64,
    pub length: u64,
    pub checksum: u64,
}

#[derive(Debug)]
struct BlockEntry {
    layout: StripeLayout,
    records: Vec<StripeRecord>,
}

impl BlockEntry {
    fn len(&self) -> u64 {
        self.records.last().map_or(0, |r| r.offset + r.length)
    }
}

#[derive(Debug)]
struct Server {
    target: ServerTarget,
    mem: Mutex<HashMap<(BlockId, u32), Bytes>>,
    fail_writes: AtomicBool,
}

impl Server {
    fn stripe_path(&self, block_id: BlockId, seq: u32) -> Option<PathBuf> {
        match &self.target.kind {
            ServerKind::Directory { root } => Some(root.join(format!("{block_id}.{seq}"))),
            ServerKind::Simulated { .. } => None,
        }
    }

    fn write(&self, clock: &SimClock, block_id: BlockId, seq: u32, data: Bytes) -> Result<()> {
        if self.fail_writes.load(Ordering::Relaxed) {
            return Err(Error::Io(io::Error::other(format!(
                "injected write failure on server {}",
                self.target.id
            ))));
        }
        match &self.target.kind {
            ServerKind::Directory { .. } => {
                let path = self.stripe_path(block_id, seq).expect("directory server");
                let tmp = path.with_extension(format!("{seq}.tmp"));
                {
                    let mut f = fs::File::create(&tmp)?;
                    f.write_all(&data)?;
                    f.sync_data()?;
                }
                fs::rename(&tmp, &path)?;
            }
            ServerKind::Simulated { timing } => {
                clock.charge(timing.transfer_us(Direction::Write, data.len() as u64));
                self.mem.lock().insert((block_id, seq), data);
            }
        }
        Ok(())
    }

    fn read(&self, clock: &SimClock, rec: &StripeRecord) -> Result<Bytes> {
        let missing = || Error::MissingStripe {
            block_id: rec.block_id,
            seq: rec.stripe_seq,
            server: self.target.id,
        };
        let data = match &self.target.kind {
            ServerKind::Directory { .. } => {
                let path = self
                    .stripe_path(rec.block_id, rec.stripe_seq)
                    .expect("directory server");
                match fs::read(&path) {
                    Ok(v) => Bytes::from(v),
                    Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(missing()),
                    Err(e) => return Err(e.into()),
                }
            }
            ServerKind::Simulated { timing } => {
                let data = self
                    .mem
                    .lock()
                    .get(&(rec.block_id, rec.stripe_seq))
                    .cloned();
                let data = data.ok_or_else(missing)?;
                clock.charge(timing.transfer_us(Direction::Read, data.len() as u64));
                data
            }
        };
        let found = digest(&data);
        if found != rec.checksum || data.len() as u64 != rec.length {
            return Err(Error::Integrity {
                what: format!(
                    "stripe {} of block {} on server {}",
                    rec.stripe_seq, rec.block_id, self.target.id
                ),
                expected: rec.checksum,
                found,
            });
        }
        Ok(data)
    }

    fn remove(&self, block_id: BlockId, seq: u32) -> Result<()> {
        match self.stripe_path(block_id, seq) {
            Some(path) => match fs::remove_file(path) {
                Ok(()) => Ok(()),
                Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
                Err(e) => Err(e.into()),
            },
            None => {
                self.mem.lock().remove(&(block_id, seq));
                Ok(())
            }
        }
    }
}

const LOCK_STRIPES: usize = 64;

/// Striped block store over a fixed set of server targets.
#[derive(Debug)]
pub struct BackingStore {
    servers: Vec<Server>,
    layout: RwLock<StripeLayout>,
    blocks: RwLock<HashMap<BlockId, Arc<BlockEntry>>>,
    block_locks: Vec<Mutex<()>>,
    clock: SimClock,
    manifest: Manifest,
}

impl BackingStore {
    /// Opens a store over `servers`, recovering any blocks recorded in
    /// `manifest`. Directory roots are created as needed.
    pub fn open(
        servers: Vec<ServerTarget>,
        layout: StripeLayout,
        clock: SimClock,
        manifest: Manifest,
    ) -> Result<Self> {
        for (i, s) in servers.iter().enumerate() {
            if s.id != i {
                return Err(Error::invalid(format!(
                    "server ids must be 0..M, found {} at {i}",
                    s.id
                )));
            }
            match &s.kind {
                ServerKind::Directory { root } => fs::create_dir_all(root)?,
                ServerKind::Simulated { timing } if !timing.is_valid() => {
                    return Err(Error::invalid(format!(
                        "server {i} has a non-positive rate"
                    )));
                }
                ServerKind::Simulated { .. } => {}
            }
        }
        layout.validate(servers.len())?;

        let mut blocks = HashMap::new();
        for (id, records) in manifest.snapshot().stripes {
            let recovered = recovered_layout(&layout, &records);
            blocks.insert(
                id,
                Arc::new(BlockEntry {
                    layout: recovered,
                    records,
                }),
            );
        }
        Ok(BackingStore {
            servers: servers
                .into_iter()
                .map(|target| Server {
                    target,
                    mem: Mutex::new(HashMap::new()),
                    fail_writes: AtomicBool::new(false),
                })
                .collect(),
            layout: RwLock::new(layout),
            blocks: RwLock::new(blocks),
            block_locks: (0..LOCK_STRIPES).map(|_| Mutex::new(())).collect(),
            clock,
            manifest,
        })
    }

    /// In-memory store over simulated servers with no persisted manifest.
    pub fn simulated(
        servers: Vec<ServerTarget>,
        layout: StripeLayout,
        clock: SimClock,
    ) -> Result<Self> {
        Self::open(servers, layout, clock, Manifest::in_memory())
    }

    pub fn clock(&self) -> &SimClock {
        &self.clock
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn layout(&self) -> StripeLayout {
        self.layout.read().clone()
    }

    pub fn server_count(&self) -> usize {
        self.servers.len()
    }

    pub fn servers(&self) -> impl Iterator<Item = &ServerTarget> {
        self.servers.iter().map(|s| &s.target)
    }

    fn lock_for(&self, block_id: BlockId) -> &Mutex<()> {
        &self.block_locks[(block_id % LOCK_STRIPES as u64) as usize]
    }

    fn entry(&self, block_id: BlockId) -> Result<Arc<BlockEntry>> {
        self.blocks
            .read()
            .get(&block_id)
            .cloned()
            .ok_or(Error::UnknownBlock(block_id))
    }

    pub fn contains(&self, block_id: BlockId) -> bool {
        self.blocks.read().contains_key(&block_id)
    }

    pub fn block_ids(&self) -> Vec<BlockId> {
        let mut ids: Vec<_> = self.blocks.read().keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    pub fn block_len(&self, block_id: BlockId) -> Result<u64> {
        Ok(self.entry(block_id)?.len())
    }

    pub fn records(&self, block_id: BlockId) -> Result<Vec<StripeRecord>> {
        Ok(self.entry(block_id)?.records.clone())
    }

    /// On-disk location of a stripe, for directory targets.
    pub fn stripe_path(&self, rec: &StripeRecord) -> Option<PathBuf> {
        self.servers
            .get(rec.server_id)?
            .stripe_path(rec.block_id, rec.stripe_seq)
    }

    /// Makes every subsequent write to `server_id` fail (fault injection).
    pub fn inject_write_failure(&self, server_id: usize, on: bool) {
        if let Some(s) = self.servers.get(server_id) {
            s.fail_writes.store(on, Ordering::Relaxed);
        }
    }

    /// Changes stripe size and server set for blocks written from now on.
    /// Existing blocks keep the layout they were written with.
    pub fn set_layout_hint(
        &self,
        stripe_size: u64,
        servers: Option<Vec<usize>>,
    ) -> Result<StripeLayout> {
        let mut layout = self.layout.write();
        let candidate = StripeLayout {
            stripe_size,
            servers: servers.unwrap_or_else(|| layout.servers.clone()),
            start_policy: layout.start_policy,
        };
        candidate.validate(self.servers.len())?;
        *layout = candidate.clone();
        Ok(candidate)
    }

    /// Charges one simulated transfer to the clock and returns its modeled
    /// duration in microseconds. Directory targets are not modeled and
    /// return zero.
    pub fn transfer(&self, server_id: usize, direction: Direction, nbytes: u64) -> Result<f64> {
        let server = self
            .servers
            .get(server_id)
            .ok_or_else(|| Error::invalid(format!("unknown server {server_id}")))?;
        match &server.target.kind {
            ServerKind::Simulated { timing } => {
                let us = timing.transfer_us(direction, nbytes);
                self.clock.charge(us);
                Ok(us)
            }
            ServerKind::Directory { .. } => Ok(0.0),
        }
    }

    /// Writes a new block striped under the current layout.
    pub fn put_block(&self, block_id: BlockId, data: &[u8]) -> Result<Vec<StripeRecord>> {
        if data.is_empty() {
            return Err(Error::invalid("cannot store an empty block"));
        }
        let _guard = self.lock_for(block_id).lock();
        if self.contains(block_id) {
            return Err(Error::invalid(format!("block {block_id} already exists")));
        }
        self.put_locked(block_id, data)
    }

    fn put_locked(&self, block_id: BlockId, data: &[u8]) -> Result<Vec<StripeRecord>> {
        let layout = self.layout();
        let data = Bytes::copy_from_slice(data);
        let plan = layout.plan(block_id, data.len() as u64);
        let mut records: Vec<StripeRecord> = Vec::with_capacity(plan.len());
        for &(seq, server, offset, length) in &plan {
            let chunk = data.slice(offset as usize..(offset + length) as usize);
            let checksum = digest(&chunk);
            if let Err(e) = self.servers[server].write(&self.clock, block_id, seq, chunk) {
                for r in &records {
                    let _ = self.servers[r.server_id].remove(block_id, r.stripe_seq);
                }
                return Err(Error::PartialPut {
                    block_id,
                    written: records.len(),
                    total: plan.len(),
                    source: Box::new(e),
                });
            }
            records.push(StripeRecord {
                block_id,
                stripe_seq: seq,
                server_id: server,
                offset,
                length,
                checksum,
            });
        }
        self.commit(block_id, layout, records.clone())?;
        Ok(records)
    }

    /// Appends `data` to a block, creating it if absent. A short final
    /// stripe is rewritten in place; new stripes continue the block's own
    /// round-robin sequence.
    pub fn extend_block(&self, block_id: BlockId, data: &[u8]) -> Result<Vec<StripeRecord>> {
        if data.is_empty() {
            return self.records(block_id);
        }
        let _guard = self.lock_for(block_id).lock();
        let Ok(entry) = self.entry(block_id) else {
            return self.put_locked(block_id, data);
        };
        let layout = entry.layout.clone();
        let mut records = entry.records.clone();
        let mut rest = data;

        if let Some(last) = records.last().copied() {
            if last.length < layout.stripe_size {
                let old = self.servers[last.server_id].read(&self.clock, &last)?;
                let take = ((layout.stripe_size - last.length) as usize).min(rest.len());
                let mut merged = BytesMut::with_capacity(old.len() + take);
                merged.extend_from_slice(&old);
                merged.extend_from_slice(&rest[..take]);
                let merged = merged.freeze();
                let checksum = digest(&merged);
                let length = merged.len() as u64;
                self.servers[last.server_id].write(
                    &self.clock,
                    block_id,
                    last.stripe_seq,
                    merged,
                )?;
                *records.last_mut().expect("non-empty") = StripeRecord {
                    length,
                    checksum,
                    ..last
                };
                rest = &rest[take..];
            }
        }

        let mut offset = entry.len() + (data.len() - rest.len()) as u64;
        let mut seq = records.len() as u32;
        let written_before = records.len();
        let total = written_before + rest.len().div_ceil(layout.stripe_size as usize);
        while !rest.is_empty() {
            let take = (layout.stripe_size as usize).min(rest.len());
            let chunk = Bytes::copy_from_slice(&rest[..take]);
            let checksum = digest(&chunk);
            let server = layout.server_for(block_id, seq);
            if let Err(e) = self.servers[server].write(&self.clock, block_id, seq, chunk) {
                return Err(Error::PartialPut {
                    block_id,
                    written: records.len() - written_before,
                    total: total - written_before,
                    source: Box::new(e),
                });
            }
            records.push(StripeRecord {
                block_id,
                stripe_seq: seq,
                server_id: server,
                offset,
                length: take as u64,
                checksum,
            });
            offset += take as u64;
            seq += 1;
            rest = &rest[take..];
        }
        self.commit(block_id, layout, records.clone())?;
        Ok(records)
    }

    fn commit(
        &self,
        block_id: BlockId,
        layout: StripeLayout,
        records: Vec<StripeRecord>,
    ) -> Result<()> {
        self.manifest
            .commit_stripes(block_id, Some(records.clone()))?;
        self.blocks
            .write()
            .insert(block_id, Arc::new(BlockEntry { layout, records }));
        Ok(())
    }

    /// Reads `length` bytes at `offset` within a block, verifying every
    /// stripe it touches.
    pub fn get_range(&self, block_id: BlockId, offset: u64, length: u64) -> Result<Bytes> {
        let entry = self.entry(block_id)?;
        let end = offset
            .checked_add(length)
            .filter(|&e| e <= entry.len())
            .ok_or_else(|| {
                Error::invalid(format!(
                    "range {offset}+{length} exceeds block {block_id} of {} bytes",
                    entry.len()
                ))
            })?;
        if length == 0 {
            return Ok(Bytes::new());
        }
        let touched: Vec<&StripeRecord> = entry
            .records
            .iter()
            .filter(|r| r.offset < end && r.offset + r.length > offset)
            .collect();
        if let [only] = touched.as_slice() {
            let data = self.servers[only.server_id].read(&self.clock, only)?;
            let lo = (offset - only.offset) as usize;
            return Ok(data.slice(lo..lo + length as usize));
        }
        let mut out = BytesMut::with_capacity(length as usize);
        for rec in touched {
            let data = self.servers[rec.server_id].read(&self.clock, rec)?;
            let lo = offset.max(rec.offset) - rec.offset;
            let hi = end.min(rec.offset + rec.length) - rec.offset;
            out.extend_from_slice(&data[lo as usize..hi as usize]);
        }
        Ok(out.freeze())
    }

    pub fn get_block(&self, block_id: BlockId) -> Result<Bytes> {
        let len = self.block_len(block_id)?;
        self.get_range(block_id, 0, len)
    }

    /// Removes all stripes and records of a block.
    pub fn delete_block(&self, block_id: BlockId) -> Result<()> {
        let _guard = self.lock_for(block_id).lock();
        let entry = self.entry(block_id)?;
        self.manifest.commit_stripes(block_id, None)?;
        self.blocks.write().remove(&block_id);
        for r in &entry.records {
            self.servers[r.server_id].remove(block_id, r.stripe_seq)?;
        }
        Ok(())
    }
}

/// Best reconstruction of the layout a recovered block was written with.
fn recovered_layout(current: &StripeLayout, records: &[StripeRecord]) -> StripeLayout {
    let stripe_size = match records {
        [first, _, ..] => first.length,
        [only] => only.length.max(current.stripe_size),
        [] => current.stripe_size,
    };
    let mut servers: Vec<usize> = Vec::new();
    for r in records {
        if !servers.contains(&r.server_id) {
            servers.push(r.server_id);
        }
    }
    for &s in &current.servers {
        if !servers.contains(&s) {
            servers.push(s);
        }
    }
    StripeLayout {
        stripe_size,
        servers,
        start_policy: StartPolicy::FixedZero,
    }
}
