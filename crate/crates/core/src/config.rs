//! The flat `key = value` configuration file shared by every subcommand.
//!
//! Blank lines and `#` comments are ignored. Sizes accept binary suffixes
//! (`KiB`, `MiB`, `GiB`, or just `K`, `M`, `G`) and decimal ones (`KB`,
//! `MB`, `GB`). Size lists are either comma separated or a doubling range
//! written `4MiB..1GiB`.
//!
//! ```text
//! # desk-scale mountain on simulated devices
//! backing = simulated
//! servers = 2
//! sim_read_mbps = 200
//! tier_read_mbps = 6267
//! tier_capacity = 64MiB
//! mountain.data_sizes = 4MiB..1GiB
//! ```

use std::path::{Path, PathBuf};

use crate::backing::{BackingStore, ServerTarget, StartPolicy, StripeLayout};
use crate::bench::{geometric, CacheDiscipline, MountainSpec, SeqBenchSpec, SeqTarget};
use crate::clock::{ClockMode, DeviceTiming, SimClock};
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::model::ClusterParams;
use crate::store::{StoreConfig, TieredStore, MIB};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackingKind {
    Directory,
    Simulated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub cluster: ClusterParams,
    /// Default parallel file system bandwidth for model commands.
    pub pfs_mbps: Option<f64>,
    pub store: StoreConfig,
    /// Unset means directory when `root` is given, simulated otherwise.
    pub backing: Option<BackingKind>,
    pub root: Option<PathBuf>,
    /// Explicit directory per server; overrides `root/server-<i>`.
    pub server_roots: Vec<PathBuf>,
    pub servers: usize,
    pub stripe_size: u64,
    pub start_policy: StartPolicy,
    pub manifest: Option<PathBuf>,
    pub sim_timing: DeviceTiming,
    pub clock: ClockMode,
    pub mountain: MountainSpec,
    pub seq: SeqBenchSpec,
}

impl Default for CliConfig {
    fn default() -> Self {
        let store = StoreConfig {
            tier_timing: Some(DeviceTiming::symmetric(6267.0, 0.0)),
            ..StoreConfig::default()
        };
        CliConfig {
            cluster: ClusterParams::case_study(),
            pfs_mbps: None,
            mountain: MountainSpec {
                tier_capacity: store.tier_capacity,
                ..MountainSpec::desk_scale()
            },
            store,
            backing: None,
            root: None,
            server_roots: Vec::new(),
            servers: 2,
            stripe_size: MIB,
            start_policy: StartPolicy::RotatePerBlock,
            manifest: None,
            sim_timing: DeviceTiming {
                read_mbps: 400.0,
                write_mbps: 200.0,
                latency_us: 0.0,
            },
            clock: ClockMode::Virtual,
            seq: SeqBenchSpec::default(),
        }
    }
}

/// Parses `64MiB`, `4 KiB`, `1G`, `10MB` or a plain byte count.
pub fn parse_size(s: &str) -> Result<u64> {
    let s = s.trim();
    let split = s
        .find(|c: char| !c.is_ascii_digit() && c != '.')
        .unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let mult: u64 = match unit.trim().to_ascii_lowercase().as_str() {
        "" | "b" => 1,
        "k" | "kib" => 1 << 10,
        "m" | "mib" => 1 << 20,
        "g" | "gib" => 1 << 30,
        "kb" => 1_000,
        "mb" => 1_000_000,
        "gb" => 1_000_000_000,
        other => {
            return Err(Error::Config(format!(
                "unknown size unit `{other}` in `{s}`"
            )))
        }
    };
    let v: f64 = num
        .parse()
        .map_err(|_| Error::Config(format!("bad size `{s}`")))?;
    let bytes = v * mult as f64;
    if !(bytes >= 0.0 && bytes.fract() == 0.0) {
        return Err(Error::Config(format!(
            "size `{s}` is not a whole number of bytes"
        )));
    }
    Ok(bytes as u64)
}

/// `a,b,c` or the doubling range `a..b`.
pub fn parse_size_list(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (parse_size(a)?, parse_size(b)?);
        if a == 0 {
            return Err(Error::Config(
                "size range must start above zero; list 0 explicitly".into(),
            ));
        }
        return Ok(geometric(a, b));
    }
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(parse_size)
        .collect()
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

fn cfg<T, E: std::fmt::Display>(r: std::result::Result<T, E>) -> Result<T> {
    r.map_err(|e| Error::Config(e.to_string()))
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut c = Self::default();
        c.apply_text(&text)?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, strip_config(e))))?;
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let c = &mut self.cluster;
        match key {
            "n_compute" | "nodes" => c.n_compute = num(key, v)?,
            "m_data" => c.m_data = num(key, v)?,
            "backplane_mbps" => c.backplane_bw = num(key, v)?,
            "nic_mbps" => c.nic_bw = num(key, v)?,
            "compute_disk_read_mbps" => c.compute_disk_read = num(key, v)?,
            "compute_disk_write_mbps" => c.compute_disk_write = num(key, v)?,
            "data_disk_read_mbps" => c.data_disk_read = num(key, v)?,
            "data_disk_write_mbps" => c.data_disk_write = num(key, v)?,
            "mem_mbps" => c.mem_bw = num(key, v)?,
            "replication" => c.replication = num(key, v)?,
            "pfs_mbps" => self.pfs_mbps = Some(num(key, v)?),

            "block_size" => self.store.block_size = parse_size(v)?,
            "tier_capacity" => {
                self.store.tier_capacity = parse_size(v)?;
                self.mountain.tier_capacity = self.store.tier_capacity;
            }
            "app_buffer" => self.store.app_buffer = parse_size(v)?,
            "backing_buffer" => self.store.backing_buffer = parse_size(v)?,
            "write_mode" => self.store.default_write_mode = cfg(v.parse())?,
            "read_mode" => self.store.default_read_mode = cfg(v.parse())?,
            "tier_read_mbps" => self.tier_timing().read_mbps = num(key, v)?,
            "tier_write_mbps" => self.tier_timing().write_mbps = num(key, v)?,
            "tier_mbps" => {
                let r = num(key, v)?;
                let t = self.tier_timing();
                t.read_mbps = r;
                t.write_mbps = r;
            }
            "tier_latency_us" => self.tier_timing().latency_us = num(key, v)?,
            "tier_timing" if v == "none" => self.store.tier_timing = None,

            "backing" => {
                self.backing = Some(match v {
                    "directory" => BackingKind::Directory,
                    "simulated" => BackingKind::Simulated,
                    _ => return Err(Error::Config(format!("unknown backing `{v}`"))),
                })
            }
            "root" => self.root = Some(PathBuf::from(v)),
            "server_roots" => {
                self.server_roots = v.split(',').map(|p| PathBuf::from(p.trim())).collect();
                self.servers = self.server_roots.len();
            }
            "servers" => self.servers = num(key, v)?,
            "stripe_size" => self.stripe_size = parse_size(v)?,
            "start_policy" => {
                self.start_policy = match v {
                    "rotate" | "rotate-per-block" => StartPolicy::RotatePerBlock,
                    "fixed" | "fixed-zero" => StartPolicy::FixedZero,
                    _ => return Err(Error::Config(format!("unknown start policy `{v}`"))),
                }
            }
            "manifest" => self.manifest = Some(PathBuf::from(v)),
            "sim_read_mbps" => self.sim_timing.read_mbps = num(key, v)?,
            "sim_write_mbps" => self.sim_timing.write_mbps = num(key, v)?,
            "sim_latency_us" => self.sim_timing.latency_us = num(key, v)?,
            "clock" => {
                self.clock = match v {
                    "virtual" => ClockMode::Virtual,
                    "real" => ClockMode::Real,
                    _ => return Err(Error::Config(format!("unknown clock `{v}`"))),
                }
            }

            "mountain.data_sizes" => self.mountain.data_sizes = parse_size_list(v)?,
            "mountain.skip_sizes" => self.mountain.skip_sizes = parse_size_list(v)?,
            "mountain.repetitions" => self.mountain.repetitions = num(key, v)?,
            "mountain.pin_resident" => self.mountain.pin_resident = num(key, v)?,
            "mountain.backing_capacity" => self.mountain.backing_capacity = Some(parse_size(v)?),

            "seq.target" => self.seq.target = cfg(v.parse::<SeqTarget>())?,
            "seq.file_count" => self.seq.file_count = num(key, v)?,
            "seq.file_size" => self.seq.file_size = parse_size(v)?,
            "seq.direction" => self.seq.direction = cfg(v.parse())?,
            "seq.cache" | "seq.cache_discipline" => {
                self.seq.cache_discipline = cfg(v.parse::<CacheDiscipline>())?
            }
            "seq.streams" => self.seq.streams = num(key, v)?,
            "seq.prefix" => self.seq.prefix = v.to_string(),

            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    fn tier_timing(&mut self) -> &mut DeviceTiming {
        self.store
            .tier_timing
            .get_or_insert(DeviceTiming::symmetric(6267.0, 0.0))
    }

    pub fn backing_kind(&self) -> BackingKind {
        self.backing
            .unwrap_or(if self.root.is_some() || !self.server_roots.is_empty() {
                BackingKind::Directory
            } else {
                BackingKind::Simulated
            })
    }

    pub fn manifest_path(&self) -> Option<PathBuf> {
        self.manifest
            .clone()
            .or_else(|| self.root.as_ref().map(|r| r.join("manifest.tsv")))
    }

    fn server_targets(&self) -> Result<Vec<ServerTarget>> {
        if self.servers == 0 {
            return Err(Error::Config("servers must be at least 1".into()));
        }
        Ok(match self.backing_kind() {
            BackingKind::Simulated => ServerTarget::simulated_set(self.servers, self.sim_timing),
            BackingKind::Directory if !self.server_roots.is_empty() => self
                .server_roots
                .iter()
                .enumerate()
                .map(|(i, r)| ServerTarget::directory(i, r))
                .collect(),
            BackingKind::Directory => {
                let root = self.root.as_ref().ok_or_else(|| {
                    Error::Config("directory backing needs `root` or `server_roots`".into())
                })?;
                ServerTarget::directories(root, self.servers)
            }
        })
    }

    /// Builds the store described by this configuration, recovering any
    /// state recorded in the manifest of a directory backing.
    pub fn open_store(&self) -> Result<TieredStore> {
        let servers = self.server_targets()?;
        let layout = StripeLayout::new(self.stripe_size, (0..servers.len()).collect())
            .with_start_policy(self.start_policy);
        let clock = SimClock::new(self.clock);
        let manifest = match (self.backing_kind(), self.manifest_path()) {
            (BackingKind::Directory, Some(path)) => {
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir)?;
                }
                Manifest::open(path)?
            }
            _ => Manifest::in_memory(),
        };
        let backing = BackingStore::open(servers, layout, clock, manifest)?;
        TieredStore::new(self.store.clone(), backing)
    }
}

fn strip_config(e: Error) -> String {
    match e {
        Error::Config(s) => s,
        other => other.to_string(),
    }
}
