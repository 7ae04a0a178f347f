//! A two-level storage system: a block-granular in-memory tier over a
//! striped persistent backing store, analytic throughput models for node-local,
//! parallel and tiered storage, and benchmark drivers that characterize the
//! tiered read path.
//!
//! The modules map onto the main capabilities:
//!
//! - [`model`]: per-node and aggregate throughput equations, the HDFS
//!   crossover solver and node-count sweeps.
//! - [`store`]: the tiered store with its three write modes and three read
//!   modes, LRU eviction, pinning and checkpointing.
//! - [`backing`]: round-robin striping of blocks over directory or simulated
//!   server targets, with per-stripe checksums.
//! - [`bench`]: the storage-mountain sweep and a sequential file benchmark.
//! - [`config`] and [`cli`]: the `key = value` configuration file and the
//!   `twotier` command line.
//!
//! Runnable walkthroughs of each capability live in `examples/`.

pub mod backing;
pub mod bench;
pub mod cli;
pub mod clock;
pub mod config;
pub mod error;
pub mod manifest;
pub mod model;
pub mod store;
pub mod tier;

pub use backing::{BackingStore, BlockId, ServerTarget, StartPolicy, StripeLayout, StripeRecord};
pub use clock::{ClockMode, DeviceTiming, SimClock};
pub use error::{Error, Result};
pub use manifest::Manifest;
pub use model::{ClusterParams, Direction, Locality, ModelQuery, StorageKind, ThroughputReport};
pub use store::{
    FileHandle, FileMetadata, PinTarget, ReadMode, Residency, StoreConfig, StoreStats, TieredStore,
    WriteMode,
};
