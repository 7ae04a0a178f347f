//! Two-level block store: a capacity-bounded memory tier over a striped
//! [`BackingStore`].
//!
//! Files are write-once: they are created with a [`WriteMode`], appended to,
//! then sealed. Data is cut into fixed-size blocks; the last block of a file
//! may be short. Each block is resident in the tier, the backing store, both,
//! or has been lost (a tier-only block evicted before it was checkpointed).
//!
//! Reads pick the nearest copy first. Under [`ReadMode::TieredCaching`] a
//! block missing from the tier is fetched whole, inserted (evicting least
//! recently used blocks) and served; when the tier cannot make room because
//! too much of it is pinned, the block is instead streamed from the backing
//! store in `backing_buffer`-sized chunks without being cached.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use bytes::{Bytes, BytesMut};
use parking_lot::{Mutex, MutexGuard};
use xxhash_rust::xxh3::Xxh3;

use crate::backing::{digest, BackingStore, BlockId};
use crate::clock::{DeviceTiming, SimClock};
use crate::error::{Error, Result};
use crate::manifest::{BlockRecord, FileRecord};
use crate::model::Direction;
use crate::tier::{Tier, TierEntry};

pub const KIB: u64 = 1 << 10;
pub const MIB: u64 = 1 << 20;
pub const GIB: u64 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WriteMode {
    /// Tier only; data is lost if evicted before a checkpoint.
    MemoryOnly,
    /// Backing store only.
    Bypass,
    /// Tier and backing store, synchronously.
    WriteThrough,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReadMode {
    /// Tier only; a non-resident block is an error.
    MemoryOnly,
    /// Backing store only; the tier is not consulted or modified.
    BypassNoCache,
    /// Tier first, then backing store, caching what was fetched.
    TieredCaching,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Residency {
    Tier,
    Backing,
    Both,
    Lost,
}

macro_rules! str_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($ty::$variant => $name),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().replace('_', "-").as_str() {
                    $($name => Ok($ty::$variant),)+
                    other => Err(Error::invalid(format!(
                        concat!("unknown ", stringify!($ty), " `{}`"), other
                    ))),
                }
            }
        }
    };
}

str_enum!(WriteMode { MemoryOnly => "memory-only", Bypass => "bypass", WriteThrough => "write-through" });
str_enum!(ReadMode { MemoryOnly => "memory-only", BypassNoCache => "bypass-no-cache", TieredCaching => "tiered-caching" });
str_enum!(Residency { Tier => "tier", Backing => "backing", Both => "both", Lost => "lost" });

impl Residency {
    pub fn in_tier(self) -> bool {
        matches!(self, Residency::Tier | Residency::Both)
    }

    pub fn in_backing(self) -> bool {
        matches!(self, Residency::Backing | Residency::Both)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreConfig {
    pub block_size: u64,
    /// Zero makes a bypass-only store.
    pub tier_capacity: u64,
    /// Request size between the application and the tier.
    pub app_buffer: u64,
    /// Request size between the tier and the backing store.
    pub backing_buffer: u64,
    pub default_write_mode: WriteMode,
    pub default_read_mode: ReadMode,
    /// Simulated tier speed; `None` charges nothing for tier accesses.
    pub tier_timing: Option<DeviceTiming>,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            block_size: 4 * MIB,
            tier_capacity: 64 * MIB,
            app_buffer: MIB,
            backing_buffer: 4 * MIB,
            default_write_mode: WriteMode::WriteThrough,
            default_read_mode: ReadMode::TieredCaching,
            tier_timing: None,
        }
    }
}

impl StoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 {
            return Err(Error::invalid("block_size must be positive"));
        }
        if self.tier_capacity != 0 && self.tier_capacity < self.block_size {
            return Err(Error::invalid(
                "tier_capacity must be zero or at least one block",
            ));
        }
        if self.app_buffer == 0 || self.backing_buffer == 0 {
            return Err(Error::invalid("buffer sizes must be positive"));
        }
        if self.app_buffer > self.backing_buffer {
            return Err(Error::invalid("app_buffer must not exceed backing_buffer"));
        }
        if let Some(t) = self.tier_timing {
            if !t.is_valid() {
                return Err(Error::invalid("tier timing needs positive rates"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockDescriptor {
    pub block_id: BlockId,
    pub ordinal: u32,
    pub logical_length: u64,
    pub residency: Residency,
    pub checksum: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileMetadata {
    pub path: String,
    pub length: u64,
    pub blocks: Vec<BlockDescriptor>,
    pub sealed: bool,
    pub write_mode: WriteMode,
}

/// Monotone counters. "Misses" and "fetches" count per block span read.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StoreStats {
    pub tier_hits: u64,
    pub tier_misses: u64,
    pub backing_fetches: u64,
    pub tier_bytes_served: u64,
    pub backing_bytes_served: u64,
    pub tier_bytes_written: u64,
    pub backing_bytes_written: u64,
    pub evictions: u64,
    pub lost_blocks: u64,
}

#[derive(Debug, Default)]
struct Counters {
    tier_hits: AtomicU64,
    tier_misses: AtomicU64,
    backing_fetches: AtomicU64,
    tier_bytes_served: AtomicU64,
    backing_bytes_served: AtomicU64,
    tier_bytes_written: AtomicU64,
    backing_bytes_written: AtomicU64,
    evictions: AtomicU64,
    lost_blocks: AtomicU64,
}

fn bump(c: &AtomicU64, n: u64) {
    c.fetch_add(n, Ordering::Relaxed);
}

impl Counters {
    fn snapshot(&self) -> StoreStats {
        let g = |c: &AtomicU64| c.load(Ordering::Relaxed);
        StoreStats {
            tier_hits: g(&self.tier_hits),
            tier_misses: g(&self.tier_misses),
            backing_fetches: g(&self.backing_fetches),
            tier_bytes_served: g(&self.tier_bytes_served),
            backing_bytes_served: g(&self.backing_bytes_served),
            tier_bytes_written: g(&self.tier_bytes_written),
            backing_bytes_written: g(&self.backing_bytes_written),
            evictions: g(&self.evictions),
            lost_blocks: g(&self.lost_blocks),
        }
    }
}

/// Write access to one unsealed file. Returned once, by [`TieredStore::create`].
#[derive(Debug)]
pub struct FileHandle {
    path: String,
}

impl FileHandle {
    pub fn path(&self) -> &str {
        &self.path
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PinTarget<'a> {
    Path(&'a str),
    Block(BlockId),
}

struct FileState {
    meta: FileMetadata,
    /// Running digest of the last block while the file is open.
    tail_hasher: Xxh3,
}

struct Inner {
    files: BTreeMap<String, FileState>,
    owners: HashMap<BlockId, (String, u32)>,
    tier: Tier,
    next_block_id: BlockId,
}

pub struct TieredStore {
    config: StoreConfig,
    backing: BackingStore,
    inner: Mutex<Inner>,
    counters: Counters,
}

impl fmt::Debug for TieredStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TieredStore")
            .field("config", &self.config)
            .field("stats", &self.stats())
            .finish_non_exhaustive()
    }
}

fn validate_path(path: &str) -> Result<()> {
    if path.is_empty() || path == "F" || path == "S" || path.chars().any(char::is_control) {
        return Err(Error::invalid(format!("unusable file name {path:?}")));
    }
    Ok(())
}

impl TieredStore {
    /// Builds a store over `backing`, recovering files recorded in its
    /// manifest. Recovered files are sealed; tier-only blocks of a previous
    /// run are lost, and stripes no file refers to are deleted.
    pub fn new(config: StoreConfig, backing: BackingStore) -> Result<Self> {
        config.validate()?;
        let doc = backing.manifest().snapshot();
        let mut files: BTreeMap<String, FileState> = BTreeMap::new();
        for f in &doc.files {
            files.insert(
                f.path.clone(),
                FileState {
                    meta: FileMetadata {
                        path: f.path.clone(),
                        length: 0,
                        blocks: Vec::new(),
                        sealed: true,
                        write_mode: config.default_write_mode,
                    },
                    tail_hasher: Xxh3::new(),
                },
            );
        }
        let mut blocks = doc.blocks.clone();
        blocks.sort_by(|a, b| (&a.path, a.ordinal).cmp(&(&b.path, b.ordinal)));
        let mut owners = HashMap::new();
        let mut max_id = None::<BlockId>;
        for b in blocks {
            let Some(state) = files.get_mut(&b.path) else {
                return Err(Error::Manifest {
                    path: backing.manifest().path().unwrap_or_default(),
                    line: 0,
                    detail: format!("block {} belongs to unknown file `{}`", b.block_id, b.path),
                });
            };
            let residency = if b.residency.in_backing() && backing.contains(b.block_id) {
                Residency::Backing
            } else {
                Residency::Lost
            };
            state.meta.length += b.logical_length;
            state.meta.blocks.push(BlockDescriptor {
                block_id: b.block_id,
                ordinal: b.ordinal,
                logical_length: b.logical_length,
                residency,
                checksum: b.checksum,
            });
            owners.insert(b.block_id, (b.path.clone(), b.ordinal));
            max_id = max_id.max(Some(b.block_id));
        }
        for id in backing.block_ids() {
            max_id = max_id.max(Some(id));
            if !owners.contains_key(&id) {
                backing.delete_block(id)?;
            }
        }
        let store = TieredStore {
            inner: Mutex::new(Inner {
                files,
                owners,
                tier: Tier::new(config.tier_capacity),
                next_block_id: max_id.map_or(0, |m| m + 1),
            }),
            config,
            backing,
            counters: Counters::default(),
        };
        Ok(store)
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn backing(&self) -> &BackingStore {
        &self.backing
    }

    pub fn clock(&self) -> &SimClock {
        self.backing.clock()
    }

    pub fn stats(&self) -> StoreStats {
        self.counters.snapshot()
    }

    pub fn tier_used(&self) -> u64 {
        self.inner.lock().tier.used()
    }

    /// Resident block ids, least recently used first.
    pub fn tier_lru_order(&self) -> Vec<BlockId> {
        self.inner.lock().tier.lru_order()
    }

    pub fn list(&self) -> Vec<String> {
        self.inner.lock().files.keys().cloned().collect()
    }

    pub fn metadata(&self, path: &str) -> Result<FileMetadata> {
        let inner = self.inner.lock();
        Ok(file(&inner, path)?.meta.clone())
    }

    pub fn len(&self, path: &str) -> Result<u64> {
        Ok(self.metadata(path)?.length)
    }

    fn charge_tier(&self, direction: Direction, nbytes: u64) {
        if let Some(t) = self.config.tier_timing {
            let mut left = nbytes;
            while left > 0 {
                let n = left.min(self.config.app_buffer);
                self.clock().charge(t.transfer_us(direction, n));
                left -= n;
            }
        }
    }

    pub fn create(&self, path: &str, mode: WriteMode) -> Result<FileHandle> {
        validate_path(path)?;
        let mut inner = self.inner.lock();
        if inner.files.contains_key(path) {
            return Err(Error::DuplicatePath(path.to_string()));
        }
        inner.files.insert(
            path.to_string(),
            FileState {
                meta: FileMetadata {
                    path: path.to_string(),
                    length: 0,
                    blocks: Vec::new(),
                    sealed: false,
                    write_mode: mode,
                },
                tail_hasher: Xxh3::new(),
            },
        );
        Ok(FileHandle {
            path: path.to_string(),
        })
    }

    /// Appends `data` in `app_buffer`-sized pieces according to the file's
    /// write mode. A memory-only append that cannot fit in the tier even
    /// after evicting every unpinned block fails before anything is written.
    pub fn append(&self, handle: &FileHandle, data: &[u8]) -> Result<u64> {
        let mut inner = self.inner.lock();
        let state = file(&inner, &handle.path)?;
        if state.meta.sealed {
            return Err(Error::Sealed(handle.path.clone()));
        }
        if data.is_empty() {
            return Ok(0);
        }
        let mode = state.meta.write_mode;
        if mode == WriteMode::MemoryOnly {
            self.check_memory_append(&inner, &handle.path, data.len() as u64)?;
        }
        let mut rest = data;
        let result = loop {
            if rest.is_empty() {
                break Ok(data.len() as u64);
            }
            let n = rest.len().min(self.config.app_buffer as usize);
            if let Err(e) = self.append_buffer(&mut inner, &handle.path, &rest[..n]) {
                break Err(e);
            }
            rest = &rest[n..];
        };
        if mode != WriteMode::MemoryOnly {
            self.persist(&inner)?;
        }
        result
    }

    fn check_memory_append(&self, inner: &Inner, path: &str, len: u64) -> Result<()> {
        let meta = &file(inner, path)?.meta;
        let mut need = len;
        if let Some(last) = meta.blocks.last() {
            if last.logical_length < self.config.block_size {
                if last.residency == Residency::Lost {
                    return Err(self.lost(path, last));
                }
                let tail_pinned = inner.tier.peek(last.block_id).is_some_and(|e| e.pinned);
                if !tail_pinned {
                    need += last.logical_length;
                }
            }
        }
        let available = inner
            .tier
            .capacity()
            .saturating_sub(inner.tier.pinned_bytes());
        if need > available {
            return Err(Error::Capacity {
                needed: need,
                available,
            });
        }
        Ok(())
    }

    fn lost(&self, path: &str, d: &BlockDescriptor) -> Error {
        Error::DataLoss {
            path: path.to_string(),
            ordinal: d.ordinal,
            block_id: d.block_id,
        }
    }

    fn append_buffer(&self, inner: &mut Inner, path: &str, mut data: &[u8]) -> Result<()> {
        while !data.is_empty() {
            let meta = &file(inner, path)?.meta;
            let tail = meta
                .blocks
                .last()
                .filter(|b| b.logical_length < self.config.block_size)
                .cloned();
            let room = tail.as_ref().map_or(self.config.block_size, |b| {
                self.config.block_size - b.logical_length
            });
            let n = (room as usize).min(data.len());
            self.append_piece(inner, path, tail, &data[..n])?;
            data = &data[n..];
        }
        Ok(())
    }

    fn append_piece(
        &self,
        inner: &mut Inner,
        path: &str,
        tail: Option<BlockDescriptor>,
        piece: &[u8],
    ) -> Result<()> {
        let mode = file(inner, path)?.meta.write_mode;
        let (id, ordinal, old_len, old_residency) = match &tail {
            Some(b) => (b.block_id, b.ordinal, b.logical_length, Some(b.residency)),
            None => {
                let ordinal = file(inner, path)?.meta.blocks.len() as u32;
                (inner.next_block_id, ordinal, 0, None)
            }
        };
        if old_residency == Some(Residency::Lost) {
            return Err(Error::DataLoss {
                path: path.to_string(),
                ordinal,
                block_id: id,
            });
        }
        let piece_len = piece.len() as u64;
        let new_len = old_len + piece_len;

        let residency = match mode {
            WriteMode::MemoryOnly => {
                let old = match old_residency {
                    None => Bytes::new(),
                    Some(r) if r.in_tier() => inner.tier.peek(id).expect("resident").data.clone(),
                    Some(_) => self.backing.get_block(id)?,
                };
                let mut merged = BytesMut::with_capacity(new_len as usize);
                merged.extend_from_slice(&old);
                merged.extend_from_slice(piece);
                let old_in_tier = inner.tier.peek(id).map_or(0, |e| e.data.len() as u64);
                let victims = inner.tier.evict(new_len - old_in_tier, &[id]);
                self.apply_evictions(inner, victims);
                if inner.tier.used() - old_in_tier + new_len > inner.tier.capacity() {
                    return Err(Error::Capacity {
                        needed: new_len,
                        available: inner.tier.capacity() - (inner.tier.used() - old_in_tier),
                    });
                }
                inner.tier.insert(id, merged.freeze());
                self.charge_tier(Direction::Write, piece_len);
                bump(&self.counters.tier_bytes_written, piece_len);
                if old_residency.is_some_and(Residency::in_backing) {
                    self.backing.delete_block(id)?;
                }
                Residency::Tier
            }
            WriteMode::Bypass => {
                self.backing.extend_block(id, piece)?;
                bump(&self.counters.backing_bytes_written, piece_len);
                inner.tier.remove(id);
                Residency::Backing
            }
            WriteMode::WriteThrough => {
                self.backing.extend_block(id, piece)?;
                bump(&self.counters.backing_bytes_written, piece_len);
                let tier = &mut inner.tier;
                let cached = match tier.peek(id).map(|e| e.data.clone()) {
                    Some(old) => {
                        if tier.used() - old.len() as u64 + new_len <= tier.capacity() {
                            let mut merged = BytesMut::with_capacity(new_len as usize);
                            merged.extend_from_slice(&old);
                            merged.extend_from_slice(piece);
                            tier.insert(id, merged.freeze());
                            true
                        } else {
                            tier.remove(id);
                            false
                        }
                    }
                    // Admit fresh blocks only into free space; writes never
                    // displace resident data.
                    None if old_len == 0 && tier.used() + new_len <= tier.capacity() => {
                        tier.insert(id, Bytes::copy_from_slice(piece));
                        true
                    }
                    None => false,
                };
                if cached {
                    self.charge_tier(Direction::Write, piece_len);
                    bump(&self.counters.tier_bytes_written, piece_len);
                    Residency::Both
                } else {
                    Residency::Backing
                }
            }
        };

        let state = inner.files.get_mut(path).expect("file exists");
        if tail.is_none() {
            state.tail_hasher = Xxh3::new();
            state.meta.blocks.push(BlockDescriptor {
                block_id: id,
                ordinal,
                logical_length: 0,
                residency,
                checksum: 0,
            });
            inner.owners.insert(id, (path.to_string(), ordinal));
            inner.next_block_id += 1;
        }
        state.tail_hasher.update(piece);
        let d = state.meta.blocks.last_mut().expect("tail block");
        d.logical_length = new_len;
        d.residency = residency;
        d.checksum = state.tail_hasher.digest();
        state.meta.length += piece_len;
        Ok(())
    }

    fn apply_evictions(&self, inner: &mut Inner, victims: Vec<(BlockId, TierEntry)>) {
        for (id, _) in victims {
            bump(&self.counters.evictions, 1);
            let Some((path, ordinal)) = inner.owners.get(&id) else {
                continue;
            };
            let Some(state) = inner.files.get_mut(path) else {
                continue;
            };
            let d = &mut state.meta.blocks[*ordinal as usize];
            d.residency = match d.residency {
                Residency::Both | Residency::Backing => Residency::Backing,
                Residency::Tier | Residency::Lost => {
                    bump(&self.counters.lost_blocks, 1);
                    Residency::Lost
                }
            };
        }
    }

    /// Makes a file immutable and records it in the manifest. Sealing twice
    /// is a no-op.
    pub fn seal(&self, path: &str) -> Result<FileMetadata> {
        let mut inner = self.inner.lock();
        let state = inner
            .files
            .get_mut(path)
            .ok_or_else(|| Error::NotFound(path.to_string()))?;
        state.meta.sealed = true;
        let meta = state.meta.clone();
        self.persist(&inner)?;
        Ok(meta)
    }

    fn persist(&self, inner: &Inner) -> Result<()> {
        let manifest = self.backing.manifest();
        if manifest.path().is_none() {
            return Ok(());
        }
        let mut files = Vec::with_capacity(inner.files.len());
        let mut blocks = Vec::new();
        for (path, state) in &inner.files {
            files.push(FileRecord {
                path: path.clone(),
                length: state.meta.length,
                sealed: state.meta.sealed,
            });
            blocks.extend(state.meta.blocks.iter().map(|b| BlockRecord {
                path: path.clone(),
                ordinal: b.ordinal,
                block_id: b.block_id,
                logical_length: b.logical_length,
                checksum: b.checksum,
                residency: b.residency,
            }));
        }
        manifest.commit_files(files, blocks)
    }

    /// Removes a file with its tier copies (pinned or not) and backing
    /// stripes.
    pub fn delete(&self, path: &str) -> Result<()> {
        let mut inner = self.inner.lock();
        let state = inner
            .files
            .remove(path)
            .ok_or_else(|| Error::NotFound(path.to_string()))?;
        for b in &state.meta.blocks {
            inner.owners.remove(&b.block_id);
            inner.tier.remove(b.block_id);
            if self.backing.contains(b.block_id) {
                self.backing.delete_block(b.block_id)?;
            }
        }
        self.persist(&inner)
    }

    /// Copies every tier-only block of a file to the backing store. Returns
    /// how many blocks were written.
    pub fn checkpoint(&self, path: &str) -> Result<usize> {
        let mut inner = self.inner.lock();
        let pending: Vec<BlockId> = file(&inner, path)?
            .meta
            .blocks
            .iter()
            .filter(|b| b.residency == Residency::Tier)
            .map(|b| b.block_id)
            .collect();
        let mut written = 0;
        let mut outcome = Ok(());
        for id in pending {
            let data = inner
                .tier
                .peek(id)
                .expect("tier-resident block")
                .data
                .clone();
            if self.backing.contains(id) {
                if let Err(e) = self.backing.delete_block(id) {
                    outcome = Err(e);
                    break;
                }
            }
            if let Err(e) = self.backing.put_block(id, &data) {
                outcome = Err(e);
                break;
            }
            bump(&self.counters.backing_bytes_written, data.len() as u64);
            let (p, ordinal) = inner.owners[&id].clone();
            inner.files.get_mut(&p).expect("owner").meta.blocks[ordinal as usize].residency =
                Residency::Both;
            written += 1;
        }
        self.persist(&inner)?;
        outcome.map(|()| written)
    }

    /// Evicts unpinned blocks, least recently used first, until at least
    /// `target_bytes` of tier capacity is free or nothing evictable remains.
    pub fn evict(&self, target_bytes: u64) -> Vec<BlockId> {
        let mut inner = self.inner.lock();
        let victims = inner.tier.evict(target_bytes, &[]);
        let ids: Vec<BlockId> = victims.iter().map(|(id, _)| *id).collect();
        self.apply_evictions(&mut inner, victims);
        if !ids.is_empty() {
            // Residency is informational in the manifest; a failed rewrite
            // here loses nothing that recovery depends on.
            let _ = self.persist(&inner);
        }
        ids
    }

    /// Evicts every unpinned block.
    pub fn evict_all(&self) -> Vec<BlockId> {
        self.evict(self.config.tier_capacity)
    }

    /// Pins or unpins one block or every block of a file. Pinning requires
    /// residency in the tier; unpinning a non-resident block does nothing.
    pub fn pin(&self, target: PinTarget<'_>, on: bool) -> Result<()> {
        let mut inner = self.inner.lock();
        let ids: Vec<BlockId> = match target {
            PinTarget::Path(path) => file(&inner, path)?
                .meta
                .blocks
                .iter()
                .map(|b| b.block_id)
                .collect(),
            PinTarget::Block(id) => {
                if !inner.owners.contains_key(&id) {
                    return Err(Error::UnknownBlock(id));
                }
                vec![id]
            }
        };
        if on {
            if let Some(&missing) = ids.iter().find(|id| !inner.tier.contains(**id)) {
                let (path, ordinal) = inner.owners[&missing].clone();
                return Err(Error::NotResident {
                    path,
                    ordinal,
                    block_id: missing,
                });
            }
        }
        for id in ids {
            inner.tier.set_pinned(id, on);
        }
        Ok(())
    }

    /// Fraction of a sealed file's bytes resident in the tier. An empty
    /// file counts as fully resident.
    pub fn residency_ratio(&self, path: &str) -> Result<f64> {
        let inner = self.inner.lock();
        let meta = &file(&inner, path)?.meta;
        if !meta.sealed {
            return Err(Error::NotSealed(path.to_string()));
        }
        if meta.length == 0 {
            return Ok(1.0);
        }
        let resident: u64 = meta
            .blocks
            .iter()
            .filter(|b| b.residency.in_tier())
            .map(|b| b.logical_length)
            .sum();
        Ok(resident as f64 / meta.length as f64)
    }

    /// Recomputes every block digest from the nearest copy and compares it
    /// with the recorded checksum.
    pub fn verify(&self, path: &str) -> Result<()> {
        let meta = self.metadata(path)?;
        for b in &meta.blocks {
            let data = match b.residency {
                Residency::Lost => return Err(self.lost(path, b)),
                Residency::Tier | Residency::Both => {
                    let inner = self.inner.lock();
                    match inner.tier.peek(b.block_id) {
                        Some(e) => e.data.clone(),
                        None => continue,
                    }
                }
                Residency::Backing => self.backing.get_block(b.block_id)?,
            };
            check_block(b, &data)?;
        }
        Ok(())
    }

    pub fn reader(&self, path: &str, mode: ReadMode) -> Result<FileReader<'_>> {
        let inner = self.inner.lock();
        let meta = &file(&inner, path)?.meta;
        if !meta.sealed {
            return Err(Error::NotSealed(path.to_string()));
        }
        Ok(FileReader {
            store: self,
            path: path.to_string(),
            mode,
            length: meta.length,
            chunk: None,
        })
    }

    /// Reads `length` bytes at `offset` from a sealed file.
    pub fn read(&self, path: &str, offset: u64, length: u64, mode: ReadMode) -> Result<Vec<u8>> {
        self.reader(path, mode)?.read_at(offset, length)
    }

    pub fn read_all(&self, path: &str, mode: ReadMode) -> Result<Vec<u8>> {
        let mut r = self.reader(path, mode)?;
        let len = r.len();
        r.read_at(0, len)
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock()
    }
}

fn file<'a>(inner: &'a Inner, path: &str) -> Result<&'a FileState> {
    inner
        .files
        .get(path)
        .ok_or_else(|| Error::NotFound(path.to_string()))
}

fn check_block(b: &BlockDescriptor, data: &[u8]) -> Result<()> {
    let found = digest(data);
    if found != b.checksum {
        return Err(Error::Integrity {
            what: format!("block {} (ordinal {})", b.block_id, b.ordinal),
            expected: b.checksum,
            found,
        });
    }
    Ok(())
}

enum Source {
    Tier(Bytes),
    FetchAndCache,
    Stream,
}

/// Sequential reader over one sealed file. Keeps the last backing-store
/// chunk it fetched so that consecutive small reads of an uncached block
/// share one backing request.
#[derive(Debug)]
pub struct FileReader<'s> {
    store: &'s TieredStore,
    path: String,
    mode: ReadMode,
    length: u64,
    chunk: Option<(BlockId, u64, Bytes)>,
}

impl FileReader<'_> {
    pub fn len(&self) -> u64 {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    pub fn read_at(&mut self, offset: u64, length: u64) -> Result<Vec<u8>> {
        let end = offset
            .checked_add(length)
            .filter(|&e| e <= self.length)
            .ok_or_else(|| Error::OutOfRange {
                path: self.path.clone(),
                offset,
                length,
                file_len: self.length,
            })?;
        let bs = self.store.config.block_size;
        let mut out = Vec::with_capacity(length as usize);
        let mut pos = offset;
        while pos < end {
            let ordinal = (pos / bs) as usize;
            let lo = pos - ordinal as u64 * bs;
            let hi = (end - ordinal as u64 * bs).min(bs);
            self.read_span(ordinal, lo, hi, &mut out)?;
            pos += hi - lo;
        }
        Ok(out)
    }

    fn read_span(&mut self, ordinal: usize, lo: u64, hi: u64, out: &mut Vec<u8>) -> Result<()> {
        let store = self.store;
        let counters = &store.counters;
        let span = hi - lo;
        let (desc, source) = {
            let mut inner = store.lock();
            let d = file(&inner, &self.path)?.meta.blocks[ordinal].clone();
            if d.residency == Residency::Lost {
                return Err(store.lost(&self.path, &d));
            }
            let source = match self.mode {
                ReadMode::BypassNoCache if !d.residency.in_backing() => {
                    return Err(Error::NotResident {
                        path: self.path.clone(),
                        ordinal: d.ordinal,
                        block_id: d.block_id,
                    })
                }
                ReadMode::BypassNoCache => Source::Stream,
                ReadMode::MemoryOnly => match inner.tier.get(d.block_id) {
                    Some(data) => Source::Tier(data),
                    None => {
                        return Err(Error::NotResident {
                            path: self.path.clone(),
                            ordinal: d.ordinal,
                            block_id: d.block_id,
                        })
                    }
                },
                ReadMode::TieredCaching => match inner.tier.get(d.block_id) {
                    Some(data) => Source::Tier(data),
                    None if d.logical_length <= inner.tier.reclaimable_capacity(&[]) => {
                        Source::FetchAndCache
                    }
                    None => Source::Stream,
                },
            };
            (d, source)
        };

        match source {
            Source::Tier(data) => {
                bump(&counters.tier_hits, 1);
                bump(&counters.tier_bytes_served, span);
                store.charge_tier(Direction::Read, span);
                out.extend_from_slice(&data[lo as usize..hi as usize]);
            }
            Source::FetchAndCache => {
                bump(&counters.tier_misses, 1);
                bump(&counters.backing_fetches, 1);
                let data = store.backing.get_block(desc.block_id)?;
                check_block(&desc, &data)?;
                {
                    let mut inner = store.lock();
                    if !inner.tier.contains(desc.block_id) {
                        let victims = inner.tier.evict(desc.logical_length, &[]);
                        store.apply_evictions(&mut inner, victims);
                        if inner.tier.used() + desc.logical_length <= inner.tier.capacity() {
                            inner.tier.insert(desc.block_id, data.clone());
                            let (p, o) = inner.owners[&desc.block_id].clone();
                            let d = &mut inner.files.get_mut(&p).expect("owner").meta.blocks
                                [o as usize];
                            d.residency = Residency::Both;
                            store.charge_tier(Direction::Write, desc.logical_length);
                            bump(&counters.tier_bytes_written, desc.logical_length);
                        }
                    }
                }
                bump(&counters.backing_bytes_served, span);
                store.charge_tier(Direction::Read, span);
                out.extend_from_slice(&data[lo as usize..hi as usize]);
            }
            Source::Stream => {
                if self.mode == ReadMode::TieredCaching {
                    bump(&counters.tier_misses, 1);
                }
                let bb = store.config.backing_buffer;
                let mut pos = lo;
                while pos < hi {
                    let c0 = pos / bb * bb;
                    let clen = bb.min(desc.logical_length - c0);
                    let cached = matches!(&self.chunk, Some((id, start, _)) if *id == desc.block_id && *start == c0);
                    if !cached {
                        bump(&counters.backing_fetches, 1);
                        let data = store.backing.get_range(desc.block_id, c0, clen)?;
                        self.chunk = Some((desc.block_id, c0, data));
                    }
                    let (_, _, data) = self.chunk.as_ref().expect("chunk loaded");
                    let take_hi = hi.min(c0 + clen);
                    out.extend_from_slice(&data[(pos - c0) as usize..(take_hi - c0) as usize]);
                    bump(&counters.backing_bytes_served, take_hi - pos);
                    pos = take_hi;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backing::{ServerTarget, StripeLayout};

    fn store(block: u64, capacity: u64) -> TieredStore {
        let servers = ServerTarget::simulated_set(2, DeviceTiming::symmetric(100.0, 0.0));
        let backing = BackingStore::simulated(
            servers,
            StripeLayout::new(block.div_ceil(2).max(1), vec![0, 1]),
            SimClock::virtual_clock(),
        )
        .unwrap();
        let config = StoreConfig {
            block_size: block,
            tier_capacity: capacity,
            app_buffer: block,
            backing_buffer: block,
            ..StoreConfig::default()
        };
        TieredStore::new(config, backing).unwrap()
    }

    fn bytes(n: usize, seed: u8) -> Vec<u8> {
        (0..n).map(|i| (i as u8) ^ seed.wrapping_mul(7)).collect()
    }

    fn write(s: &TieredStore, path: &str, mode: WriteMode, data: &[u8]) {
        let h = s.create(path, mode).unwrap();
        s.append(&h, data).unwrap();
        s.seal(path).unwrap();
    }

    #[test]
    fn duplicate_create() {
        let s = store(16, 64);
        s.create("a", WriteMode::WriteThrough).unwrap();
        assert!(matches!(
            s.create("a", WriteMode::Bypass),
            Err(Error::DuplicatePath(_))
        ));
        assert_eq!(s.len("a").unwrap(), 0);
    }

    #[test]
    fn bad_names_rejected() {
        let s = store(16, 64);
        for name in ["", "a\tb", "x\ny", "S", "F"] {
            assert!(s.create(name, WriteMode::Bypass).is_err(), "{name:?}");
        }
    }

    #[test]
    fn blocks_cut_at_boundaries() {
        let s = store(4 * MIB, 16 * MIB);
        write(
            &s,
            "f",
            WriteMode::WriteThrough,
            &bytes(10 * MIB as usize, 1),
        );
        let lens: Vec<u64> = s
            .metadata("f")
            .unwrap()
            .blocks
            .iter()
            .map(|b| b.logical_length)
            .collect();
        assert_eq!(lens, vec![4 * MIB, 4 * MIB, 2 * MIB]);
    }

    #[test]
    fn small_appends_grow_the_tail_block() {
        let s = store(16, 64);
        let data = bytes(40, 3);
        let h = s.create("f", WriteMode::WriteThrough).unwrap();
        for piece in data.chunks(7) {
            s.append(&h, piece).unwrap();
        }
        s.seal("f").unwrap();
        s.verify("f").unwrap();
        assert_eq!(s.read_all("f", ReadMode::TieredCaching).unwrap(), data);
        assert_eq!(s.read_all("f", ReadMode::BypassNoCache).unwrap(), data);
    }

    #[test]
    fn sealed_rejects_append_and_double_seal_is_fine() {
        let s = store(16, 64);
        let h = s.create("f", WriteMode::Bypass).unwrap();
        s.seal("f").unwrap();
        let m = s.seal("f").unwrap();
        assert_eq!(m.length, 0);
        assert!(matches!(s.append(&h, b"x"), Err(Error::Sealed(_))));
        assert_eq!(
            s.read_all("f", ReadMode::TieredCaching).unwrap(),
            Vec::<u8>::new()
        );
        assert_eq!(s.residency_ratio("f").unwrap(), 1.0);
    }

    #[test]
    fn read_requires_seal() {
        let s = store(16, 64);
        let h = s.create("f", WriteMode::Bypass).unwrap();
        s.append(&h, b"abc").unwrap();
        assert!(matches!(
            s.read("f", 0, 1, ReadMode::TieredCaching),
            Err(Error::NotSealed(_))
        ));
    }

    #[test]
    fn out_of_range() {
        let s = store(16, 64);
        write(&s, "f", WriteMode::Bypass, &bytes(20, 0));
        assert!(matches!(
            s.read("f", 10, 11, ReadMode::TieredCaching),
            Err(Error::OutOfRange { .. })
        ));
        assert!(s
            .read("f", 20, 0, ReadMode::TieredCaching)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn offset_arithmetic_crosses_blocks() {
        let s = store(4 * MIB, 16 * MIB);
        let data = bytes(12 * MIB as usize, 9);
        write(&s, "f", WriteMode::Bypass, &data);
        let got = s
            .read("f", 5 * MIB, 4 * MIB, ReadMode::BypassNoCache)
            .unwrap();
        assert_eq!(got, &data[5 * MIB as usize..9 * MIB as usize]);
    }

    #[test]
    fn bypass_then_tiered_read_caches() {
        let s = store(16, 64);
        let data = bytes(30, 4);
        write(&s, "f", WriteMode::Bypass, &data);
        assert_eq!(s.residency_ratio("f").unwrap(), 0.0);
        assert_eq!(s.read_all("f", ReadMode::TieredCaching).unwrap(), data);
        let st = s.stats();
        assert_eq!(
            (st.tier_hits, st.tier_misses, st.backing_fetches),
            (0, 2, 2)
        );
        assert_eq!(s.residency_ratio("f").unwrap(), 1.0);
        assert_eq!(s.read_all("f", ReadMode::TieredCaching).unwrap(), data);
        assert_eq!(s.stats().tier_hits, 2);
    }

    #[test]
    fn memory_only_read_misses_are_errors() {
        let s = store(16, 64);
        write(&s, "f", WriteMode::Bypass, &bytes(16, 1));
        assert!(matches!(
            s.read_all("f", ReadMode::MemoryOnly),
            Err(Error::NotResident { ordinal: 0, .. })
        ));
    }

    #[test]
    fn bypass_read_leaves_tier_alone() {
        let s = store(16, 64);
        write(&s, "f", WriteMode::WriteThrough, &bytes(48, 1));
        let before = s.stats();
        let order = s.tier_lru_order();
        s.read_all("f", ReadMode::BypassNoCache).unwrap();
        let after = s.stats();
        assert_eq!(after.tier_hits, before.tier_hits);
        assert_eq!(after.tier_misses, before.tier_misses);
        assert_eq!(after.evictions, before.evictions);
        assert!(after.backing_fetches > before.backing_fetches);
        assert_eq!(s.tier_lru_order(), order);
    }

    #[test]
    fn eight_blocks_four_resident_sequential_read() {
        let s = store(16, 64);
        write(&s, "f", WriteMode::WriteThrough, &bytes(128, 2));
        assert_eq!(s.residency_ratio("f").unwrap(), 0.5);
        let base = s.stats();
        s.read_all("f", ReadMode::TieredCaching).unwrap();
        let st = s.stats();
        assert_eq!(st.tier_hits - base.tier_hits, 4);
        assert_eq!(st.backing_fetches - base.backing_fetches, 4);
    }

    #[test]
    fn memory_only_capacity_error_leaves_no_state() {
        let s = store(16, 64);
        let h = s.create("f", WriteMode::MemoryOnly).unwrap();
        let err = s.append(&h, &bytes(65, 0)).unwrap_err();
        assert!(matches!(
            err,
            Error::Capacity {
                needed: 65,
                available: 64
            }
        ));
        assert_eq!(s.len("f").unwrap(), 0);
        assert_eq!(s.tier_used(), 0);
    }

    #[test]
    fn memory_only_capacity_accounts_for_pins() {
        let s = store(16, 64);
        write(&s, "hot", WriteMode::WriteThrough, &bytes(32, 0));
        s.pin(PinTarget::Path("hot"), true).unwrap();
        let h = s.create("f", WriteMode::MemoryOnly).unwrap();
        assert!(matches!(
            s.append(&h, &bytes(33, 0)),
            Err(Error::Capacity { .. })
        ));
        s.append(&h, &bytes(32, 0)).unwrap();
        assert!(s.tier_used() <= 64);
    }

    #[test]
    fn checkpoint_is_idempotent() {
        let s = store(16, 64);
        write(&s, "m", WriteMode::MemoryOnly, &bytes(40, 5));
        assert_eq!(s.checkpoint("m").unwrap(), 3);
        assert_eq!(s.checkpoint("m").unwrap(), 0);
        write(&s, "b", WriteMode::Bypass, &bytes(40, 5));
        assert_eq!(s.checkpoint("b").unwrap(), 0);
    }

    #[test]
    fn checkpoint_then_evict_round_trips() {
        let s = store(16, 64);
        let data = bytes(40, 6);
        write(&s, "m", WriteMode::MemoryOnly, &data);
        s.checkpoint("m").unwrap();
        s.evict_all();
        assert_eq!(s.residency_ratio("m").unwrap(), 0.0);
        assert_eq!(s.read_all("m", ReadMode::TieredCaching).unwrap(), data);
    }

    #[test]
    fn evicting_unckeckpointed_memory_block_loses_it() {
        let s = store(16, 64);
        write(&s, "m", WriteMode::MemoryOnly, &bytes(40, 6));
        let evicted = s.evict_all();
        assert_eq!(evicted.len(), 3);
        assert_eq!(s.stats().lost_blocks, 3);
        let err = s.read_all("m", ReadMode::TieredCaching).unwrap_err();
        match err {
            Error::DataLoss {
                ordinal, block_id, ..
            } => {
                assert_eq!(ordinal, 0);
                assert_eq!(block_id, s.metadata("m").unwrap().blocks[0].block_id);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn pin_semantics() {
        let s = store(16, 64);
        write(&s, "a", WriteMode::WriteThrough, &bytes(16, 1));
        let id = s.metadata("a").unwrap().blocks[0].block_id;
        s.pin(PinTarget::Block(id), true).unwrap();
        assert!(s.evict_all().is_empty());
        s.pin(PinTarget::Block(id), false).unwrap();
        assert_eq!(s.evict_all(), vec![id]);
        assert!(matches!(
            s.pin(PinTarget::Block(id), true),
            Err(Error::NotResident { .. })
        ));
        assert!(matches!(
            s.pin(PinTarget::Block(999), true),
            Err(Error::UnknownBlock(999))
        ));
    }

    #[test]
    fn lru_victim_order() {
        let s = store(16, 48);
        for p in ["A", "B", "C"] {
            write(&s, p, WriteMode::WriteThrough, &bytes(16, 0));
        }
        let id = |p: &str| s.metadata(p).unwrap().blocks[0].block_id;
        assert_eq!(s.evict(16), vec![id("A")]);
        s.read_all("B", ReadMode::TieredCaching).unwrap();
        assert_eq!(s.evict(32), vec![id("C")]);
    }

    #[test]
    fn pinned_lru_victim_skips() {
        let s = store(16, 48);
        for p in ["A", "B", "C"] {
            write(&s, p, WriteMode::WriteThrough, &bytes(16, 0));
        }
        s.pin(PinTarget::Path("A"), true).unwrap();
        let id = |p: &str| s.metadata(p).unwrap().blocks[0].block_id;
        assert_eq!(s.evict(16), vec![id("B")]);
    }

    #[test]
    fn residency_ratio_counts_blocks() {
        let s = store(16, 64);
        write(&s, "f", WriteMode::WriteThrough, &bytes(64, 0));
        assert_eq!(s.residency_ratio("f").unwrap(), 1.0);
        s.evict(32);
        assert_eq!(s.residency_ratio("f").unwrap(), 0.5);
        s.evict_all();
        assert_eq!(s.residency_ratio("f").unwrap(), 0.0);
    }

    #[test]
    fn fresh_stats_are_zero_and_hits_count_blocks() {
        let s = store(16, 64);
        assert_eq!(s.stats(), StoreStats::default());
        write(&s, "f", WriteMode::WriteThrough, &bytes(48, 0));
        s.read_all("f", ReadMode::TieredCaching).unwrap();
        assert_eq!(s.stats().tier_hits, 3);
    }

    #[test]
    fn degenerate_capacity_serves_without_caching() {
        let s = store(16, 32);
        write(&s, "hot", WriteMode::WriteThrough, &bytes(32, 1));
        s.pin(PinTarget::Path("hot"), true).unwrap();
        let data = bytes(48, 2);
        write(&s, "cold", WriteMode::Bypass, &data);
        assert_eq!(s.read_all("cold", ReadMode::TieredCaching).unwrap(), data);
        assert_eq!(s.residency_ratio("cold").unwrap(), 0.0);
        assert!(s.tier_used() <= 32);
    }

    #[test]
    fn zero_capacity_store_is_bypass_only() {
        let s = store(16, 0);
        let data = bytes(40, 8);
        write(&s, "f", WriteMode::WriteThrough, &data);
        assert_eq!(s.residency_ratio("f").unwrap(), 0.0);
        assert_eq!(s.read_all("f", ReadMode::TieredCaching).unwrap(), data);
        let h = s.create("m", WriteMode::MemoryOnly).unwrap();
        assert!(matches!(s.append(&h, b"x"), Err(Error::Capacity { .. })));
    }

    #[test]
    fn config_validation() {
        let ok = StoreConfig::default();
        ok.validate().unwrap();
        assert!(StoreConfig {
            block_size: 0,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(StoreConfig {
            tier_capacity: 1,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(StoreConfig {
            app_buffer: 8 * MIB,
            ..ok.clone()
        }
        .validate()
        .is_err());
        StoreConfig {
            tier_capacity: 0,
            ..ok
        }
        .validate()
        .unwrap();
    }

    #[test]
    fn mode_names_parse() {
        assert_eq!(
            "write-through".parse::<WriteMode>().unwrap(),
            WriteMode::WriteThrough
        );
        assert_eq!(
            "tiered_caching".parse::<ReadMode>().unwrap(),
            ReadMode::TieredCaching
        );
        assert!("sometimes".parse::<ReadMode>().is_err());
    }

    #[test]
    fn delete_releases_everything() {
        let s = store(16, 64);
        write(&s, "a", WriteMode::WriteThrough, &bytes(40, 1));
        s.pin(PinTarget::Path("a"), true).unwrap();
        s.delete("a").unwrap();
        assert_eq!(s.tier_used(), 0);
        assert!(s.backing().block_ids().is_empty());
        assert!(s.list().is_empty());
        assert!(matches!(s.delete("a"), Err(Error::NotFound(_))));
        write(&s, "a", WriteMode::WriteThrough, &bytes(8, 2));
    }
}
