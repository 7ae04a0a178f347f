//! Capacity-bounded in-memory block tier with LRU ordering and pinning.
//!
//! Every access stamps the block with the next value of a global logical
//! clock, so stamps are unique and eviction order is the ascending stamp
//! order of unpinned blocks.

use std::collections::{BTreeMap, HashMap};

use bytes::Bytes;

use crate::backing::BlockId;

#[derive(Debug, Clone)]
pub struct TierEntry {
    pub data: Bytes,
    pub last_access: u64,
    pub pinned: bool,
}

#[derive(Debug, Default)]
pub struct Tier {
    capacity: u64,
    used: u64,
    pinned_bytes: u64,
    stamp: u64,
    entries: HashMap<BlockId, TierEntry>,
    recency: BTreeMap<u64, BlockId>,
}

impl Tier {
    pub fn new(capacity: u64) -> Self {
        Tier {
            capacity,
            ..Default::default()
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn pinned_bytes(&self) -> u64 {
        self.pinned_bytes
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn peek(&self, id: BlockId) -> Option<&TierEntry> {
        self.entries.get(&id)
    }

    fn next_stamp(&mut self) -> u64 {
        self.stamp += 1;
        self.stamp
    }

    /// Marks a block as most recently used.
    pub fn touch(&mut self, id: BlockId) -> bool {
        let stamp = self.next_stamp();
        match self.entries.get_mut(&id) {
            Some(e) => {
                self.recency.remove(&e.last_access);
                e.last_access = stamp;
                self.recency.insert(stamp, id);
                true
            }
            None => false,
        }
    }

    /// Returns the block's data and marks it most recently used.
    pub fn get(&mut self, id: BlockId) -> Option<Bytes> {
        if self.touch(id) {
            self.entries.get(&id).map(|e| e.data.clone())
        } else {
            None
        }
    }

    /// Inserts or replaces a block as most recently used. Does not evict;
    /// callers make room first. A replaced block keeps its pin.
    pub fn insert(&mut self, id: BlockId, data: Bytes) {
        let stamp = self.next_stamp();
        let len = data.len() as u64;
        let pinned = match self.entries.remove(&id) {
            Some(old) => {
                self.recency.remove(&old.last_access);
                self.used -= old.data.len() as u64;
                if old.pinned {
                    self.pinned_bytes -= old.data.len() as u64;
                }
                old.pinned
            }
            None => false,
        };
        self.used += len;
        if pinned {
            self.pinned_bytes += len;
        }
        self.recency.insert(stamp, id);
        self.entries.insert(
            id,
            TierEntry {
                data,
                last_access: stamp,
                pinned,
            },
        );
    }

    pub fn remove(&mut self, id: BlockId) -> Option<TierEntry> {
        let e = self.entries.remove(&id)?;
        self.recency.remove(&e.last_access);
        self.used -= e.data.len() as u64;
        if e.pinned {
            self.pinned_bytes -= e.data.len() as u64;
        }
        Some(e)
    }

    /// Returns false if the block is not resident.
    pub fn set_pinned(&mut self, id: BlockId, on: bool) -> bool {
        let Some(e) = self.entries.get_mut(&id) else {
            return false;
        };
        if e.pinned != on {
            let len = e.data.len() as u64;
            if on {
                self.pinned_bytes += len;
            } else {
                self.pinned_bytes -= len;
            }
            e.pinned = on;
        }
        true
    }

    /// Bytes that could be occupied after evicting every unpinned block
    /// outside `keep`.
    pub fn reclaimable_capacity(&self, keep: &[BlockId]) -> u64 {
        let kept: u64 = keep
            .iter()
            .filter_map(|id| self.entries.get(id))
            .filter(|e| !e.pinned)
            .map(|e| e.data.len() as u64)
            .sum();
        self.capacity.saturating_sub(self.pinned_bytes + kept)
    }

    /// Block ids from least to most recently used.
    pub fn lru_order(&self) -> Vec<BlockId> {
        self.recency.values().copied().collect()
    }

    /// Removes unpinned blocks not in `keep`, least recently used first,
    /// until `used <= capacity - target_free` or nothing evictable is left.
    pub fn evict(&mut self, target_free: u64, keep: &[BlockId]) -> Vec<(BlockId, TierEntry)> {
        let goal = self.capacity.saturating_sub(target_free);
        let mut victims: Vec<BlockId> = Vec::new();
        if self.used <= goal {
            return Vec::new();
        }
        let mut freed = 0u64;
        for &id in self.recency.values() {
            if self.used - freed <= goal {
                break;
            }
            let e = &self.entries[&id];
            if e.pinned || keep.contains(&id) {
                continue;
            }
            freed += e.data.len() as u64;
            victims.push(id);
        }
        victims
            .into_iter()
            .map(|id| {
                let e = self.remove(id).expect("victim is resident");
                (id, e)
            })
            .collect()
    }
}
