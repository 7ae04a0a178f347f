//! Analytic per-node and aggregate I/O throughput models for four storage
//! back ends: node-local disk replication (HDFS), a shared parallel file
//! system (OFS), a per-node memory store (Tachyon) and the two-level store
//! (TLS) that layers the memory store over the parallel file system.
//!
//! Every function here is pure. All bandwidths are decimal MB/s, so an
//! aggregate of "10 GB/s" is `10_000.0`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Cluster description shared by all models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterParams {
    /// Number of compute nodes.
    pub n_compute: u32,
    /// Number of data nodes backing the parallel file system.
    pub m_data: u32,
    /// Switch backplane (bisection) bandwidth.
    pub backplane_bw: f64,
    /// Per-node network interface bandwidth.
    pub nic_bw: f64,
    pub compute_disk_read: f64,
    pub compute_disk_write: f64,
    pub data_disk_read: f64,
    pub data_disk_write: f64,
    /// Local memory bandwidth.
    pub mem_bw: f64,
    /// Number of copies HDFS writes.
    pub replication: u32,
}

impl ClusterParams {
    /// Parameters of the aggregate-throughput case study: 1,170 MB/s NICs,
    /// 237/116 MB/s local disk read/write, 6,267 MB/s memory, a 6.4 Tbps
    /// backplane (800,000 MB/s) and two RAID data nodes at 400/200 MB/s.
    pub fn case_study() -> Self {
        ClusterParams {
            n_compute: 16,
            m_data: 2,
            backplane_bw: 800_000.0,
            nic_bw: 1170.0,
            compute_disk_read: 237.0,
            compute_disk_write: 116.0,
            data_disk_read: 400.0,
            data_disk_write: 200.0,
            mem_bw: 6267.0,
            replication: 3,
        }
    }

    pub fn with_nodes(mut self, n_compute: u32) -> Self {
        self.n_compute = n_compute;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_compute < 1 {
            return Err(Error::invalid("n_compute must be at least 1"));
        }
        if self.m_data < 1 {
            return Err(Error::invalid("m_data must be at least 1"));
        }
        if self.replication < 1 {
            return Err(Error::invalid("replication must be at least 1"));
        }
        let bandwidths = [
            ("backplane_bw", self.backplane_bw),
            ("nic_bw", self.nic_bw),
            ("compute_disk_read", self.compute_disk_read),
            ("compute_disk_write", self.compute_disk_write),
            ("data_disk_read", self.data_disk_read),
            ("data_disk_write", self.data_disk_write),
            ("mem_bw", self.mem_bw),
        ];
        for (name, value) in bandwidths {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::invalid(format!(
                    "{name} must be a positive finite bandwidth, got {value}"
                )));
            }
        }
        Ok(())
    }

    fn n(&self) -> f64 {
        f64::from(self.n_compute)
    }

    /// The M/N share factor, clamped at 1 when there are at least as many
    /// data nodes as compute nodes.
    fn data_share(&self) -> f64 {
        (f64::from(self.m_data) / self.n()).min(1.0)
    }
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams::case_study()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StorageKind {
    Hdfs,
    Ofs,
    Tachyon,
    Tls,
}

impl StorageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StorageKind::Hdfs => "hdfs",
            StorageKind::Ofs => "ofs",
            StorageKind::Tachyon => "tachyon",
            StorageKind::Tls => "tls",
        }
    }

    pub fn needs_pfs(self) -> bool {
        matches!(self, StorageKind::Ofs | StorageKind::Tls)
    }
}

impl fmt::Display for StorageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StorageKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hdfs" => Ok(StorageKind::Hdfs),
            "ofs" | "orangefs" | "pfs" => Ok(StorageKind::Ofs),
            "tachyon" => Ok(StorageKind::Tachyon),
            "tls" | "two-level" => Ok(StorageKind::Tls),
            other => Err(Error::invalid(format!("unknown storage kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Read,
    Write,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Read => "read",
            Direction::Write => "write",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "read" => Ok(Direction::Read),
            "write" => Ok(Direction::Write),
            other => Err(Error::invalid(format!("unknown direction `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Locality {
    #[default]
    Local,
    Remote,
}

impl FromStr for Locality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "local" => Ok(Locality::Local),
            "remote" => Ok(Locality::Remote),
            other => Err(Error::invalid(format!("unknown locality `{other}`"))),
        }
    }
}

/// The resource whose bound produced a throughput value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BindingResource {
    Nic,
    BackplaneShare,
    LocalDisk,
    DataNicShare,
    DataDiskShare,
    Memory,
    PfsCap,
}

impl BindingResource {
    pub fn as_str(self) -> &'static str {
        match self {
            BindingResource::Nic => "nic",
            BindingResource::BackplaneShare => "backplane_share",
            BindingResource::LocalDisk => "local_disk",
            BindingResource::DataNicShare => "data_nic_share",
            BindingResource::DataDiskShare => "data_disk_share",
            BindingResource::Memory => "memory",
            BindingResource::PfsCap => "pfs_cap",
        }
    }
}

impl fmt::Display for BindingResource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A throughput value together with the resource that bounds it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub mbps: f64,
    pub resource: BindingResource,
}

impl Bound {
    fn new(mbps: f64, resource: BindingResource) -> Self {
        Bound { mbps, resource }
    }
}

/// Minimum over candidate bounds; the first candidate wins ties.
fn tightest<const K: usize>(candidates: [Bound; K]) -> Bound {
    let mut best = candidates[0];
    for c in &candidates[1..] {
        if c.mbps < best.mbps {
            best = *c;
        }
    }
    best
}

/// What to evaluate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelQuery {
    pub storage_kind: StorageKind,
    pub direction: Direction,
    /// Only meaningful for HDFS and Tachyon reads.
    pub locality: Locality,
    /// Fraction of the data resident in the memory tier (TLS reads).
    pub tachyon_fraction: f64,
    /// Data volume in MB, carried through to reports only.
    pub data_size: f64,
    /// Aggregate bandwidth cap of the parallel file system.
    pub pfs_aggregate_bw: Option<f64>,
}

impl ModelQuery {
    pub fn new(storage_kind: StorageKind, direction: Direction) -> Self {
        ModelQuery {
            storage_kind,
            direction,
            locality: Locality::Local,
            tachyon_fraction: 0.0,
            data_size: 0.0,
            pfs_aggregate_bw: None,
        }
    }

    pub fn locality(mut self, locality: Locality) -> Self {
        self.locality = locality;
        self
    }

    pub fn fraction(mut self, f: f64) -> Self {
        self.tachyon_fraction = f;
        self
    }

    pub fn pfs(mut self, mbps: f64) -> Self {
        self.pfs_aggregate_bw = Some(mbps);
        self
    }

    pub fn data_size(mut self, mb: f64) -> Self {
        self.data_size = mb;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tachyon_fraction) {
            return Err(Error::invalid(format!(
                "tachyon fraction must lie in [0, 1], got {}",
                self.tachyon_fraction
            )));
        }
        if let Some(pfs) = self.pfs_aggregate_bw {
            if !(pfs > 0.0 && pfs.is_finite()) {
                return Err(Error::invalid(format!(
                    "parallel file system bandwidth must be positive, got {pfs}"
                )));
            }
        }
        Ok(())
    }

    /// Label used in sweep output, e.g. `tls:f=0.2`.
    pub fn label(&self) -> String {
        match self.storage_kind {
            StorageKind::Tls if self.direction == Direction::Read => {
                format!("tls:f={}", self.tachyon_fraction)
            }
            kind => kind.as_str().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThroughputReport {
    pub per_node: f64,
    pub aggregate: f64,
    pub binding_resource: BindingResource,
    pub inputs_echo: ModelQuery,
}

// Per-node models.

fn hdfs_read_bound(p: &ClusterParams, locality: Locality) -> Bound {
    let disk = Bound::new(p.compute_disk_read, BindingResource::LocalDisk);
    match locality {
        Locality::Local => disk,
        Locality::Remote => tightest([
            Bound::new(p.nic_bw, BindingResource::Nic),
            Bound::new(p.backplane_bw / p.n(), BindingResource::BackplaneShare),
            disk,
        ]),
    }
}

fn hdfs_write_bound(p: &ClusterParams) -> Bound {
    let copies = f64::from(p.replication);
    let disk = Bound::new(p.compute_disk_write / copies, BindingResource::LocalDisk);
    if p.replication == 1 {
        return Bound::new(p.compute_disk_write, BindingResource::LocalDisk);
    }
    let mirrors = copies - 1.0;
    tightest([
        Bound::new(p.nic_bw / mirrors, BindingResource::Nic),
        Bound::new(
            p.backplane_bw / (mirrors * p.n()),
            BindingResource::BackplaneShare,
        ),
        disk,
    ])
}

fn ofs_bound(p: &ClusterParams, direction: Direction) -> Bound {
    let disk = match direction {
        Direction::Read => p.data_disk_read,
        Direction::Write => p.data_disk_write,
    };
    let share = p.data_share();
    tightest([
        Bound::new(p.nic_bw, BindingResource::Nic),
        Bound::new(p.backplane_bw / p.n(), BindingResource::BackplaneShare),
        Bound::new(share * p.nic_bw, BindingResource::DataNicShare),
        Bound::new(share * disk, BindingResource::DataDiskShare),
    ])
}

fn tachyon_read_bound(p: &ClusterParams, locality: Locality) -> Bound {
    let mem = Bound::new(p.mem_bw, BindingResource::Memory);
    match locality {
        Locality::Local => mem,
        Locality::Remote => tightest([
            Bound::new(p.nic_bw, BindingResource::Nic),
            Bound::new(p.backplane_bw / p.n(), BindingResource::BackplaneShare),
            mem,
        ]),
    }
}

fn tls_write_bound(p: &ClusterParams) -> Bound {
    let ofs = ofs_bound(p, Direction::Write);
    if p.mem_bw < ofs.mbps {
        Bound::new(p.mem_bw, BindingResource::Memory)
    } else {
        ofs
    }
}

/// Per-node HDFS read throughput. Local reads run at local disk speed;
/// remote reads are further bounded by the NIC and the backplane share.
pub fn hdfs_read(p: &ClusterParams, locality: Locality) -> f64 {
    hdfs_read_bound(p, locality).mbps
}

/// Per-node HDFS write throughput with `p.replication` copies: one to the
/// local disk and `r - 1` streamed over the network.
pub fn hdfs_write(p: &ClusterParams) -> f64 {
    hdfs_write_bound(p).mbps
}

/// Per-node parallel file system throughput; reads and writes differ only
/// in which data-disk rate applies.
pub fn ofs_throughput(p: &ClusterParams, direction: Direction) -> f64 {
    ofs_bound(p, direction).mbps
}

pub fn tachyon_read(p: &ClusterParams, locality: Locality) -> f64 {
    tachyon_read_bound(p, locality).mbps
}

pub fn tachyon_write(p: &ClusterParams) -> f64 {
    p.mem_bw
}

/// Synchronous write-through: bounded by the slower of memory and the
/// parallel file system.
pub fn tls_write(p: &ClusterParams) -> f64 {
    tachyon_write(p).min(ofs_throughput(p, Direction::Write))
}

/// Harmonic combination of memory-tier and parallel-file-system read rates
/// for a resident fraction `f`.
pub fn tls_read(mem_bw: f64, f: f64, q_ofs: f64) -> f64 {
    if f >= 1.0 {
        return mem_bw;
    }
    if f <= 0.0 {
        return q_ofs;
    }
    1.0 / (f / mem_bw + (1.0 - f) / q_ofs)
}

fn per_node(q: &ModelQuery, p: &ClusterParams) -> Bound {
    match (q.storage_kind, q.direction) {
        (StorageKind::Hdfs, Direction::Read) => hdfs_read_bound(p, q.locality),
        (StorageKind::Hdfs, Direction::Write) => hdfs_write_bound(p),
        (StorageKind::Ofs, d) => ofs_bound(p, d),
        (StorageKind::Tachyon, Direction::Read) => tachyon_read_bound(p, q.locality),
        (StorageKind::Tachyon, Direction::Write) => Bound::new(p.mem_bw, BindingResource::Memory),
        (StorageKind::Tls, Direction::Write) => tls_write_bound(p),
        (StorageKind::Tls, Direction::Read) => {
            let ofs = ofs_bound(p, Direction::Read);
            let f = q.tachyon_fraction;
            let resource = if f >= 1.0 || (f > 0.0 && f / p.mem_bw > (1.0 - f) / ofs.mbps) {
                BindingResource::Memory
            } else {
                ofs.resource
            };
            Bound::new(tls_read(p.mem_bw, f, ofs.mbps), resource)
        }
    }
}

/// Per-node throughput only; unlike [`aggregate`], no file system cap is
/// needed.
pub fn evaluate_per_node(q: &ModelQuery, p: &ClusterParams) -> Result<Bound> {
    p.validate()?;
    q.validate()?;
    Ok(per_node(q, p))
}

fn ofs_aggregate_bound(p: &ClusterParams, pfs: f64) -> Bound {
    tightest([
        Bound::new(pfs, BindingResource::PfsCap),
        Bound::new(p.n() * p.nic_bw, BindingResource::Nic),
        Bound::new(p.backplane_bw, BindingResource::BackplaneShare),
    ])
}

/// Cluster-wide throughput for `p.n_compute` nodes.
///
/// HDFS and Tachyon scale linearly with node count (reads assume the
/// locality carried in the query). The parallel file system is capped at
/// `min(pfs, N·ρ, Φ)`; the two-level store writes at that rate and reads at
/// the harmonic combination of `N·ν` and the capped file system rate.
pub fn aggregate(q: &ModelQuery, p: &ClusterParams) -> Result<ThroughputReport> {
    p.validate()?;
    q.validate()?;
    let node = per_node(q, p);
    let n = p.n();
    let (aggregate, binding, per_node_mbps) = if q.storage_kind.needs_pfs() {
        let pfs = q.pfs_aggregate_bw.ok_or_else(|| {
            Error::invalid(format!(
                "{} aggregate requires the parallel file system bandwidth",
                q.storage_kind
            ))
        })?;
        let ofs = ofs_aggregate_bound(p, pfs);
        let agg = match (q.storage_kind, q.direction) {
            (StorageKind::Tls, Direction::Read) => {
                let f = q.tachyon_fraction;
                let mbps = tls_read(n * p.mem_bw, f, ofs.mbps);
                let resource = if f >= 1.0 || (f > 0.0 && f / (n * p.mem_bw) > (1.0 - f) / ofs.mbps)
                {
                    BindingResource::Memory
                } else {
                    ofs.resource
                };
                Bound::new(mbps, resource)
            }
            (StorageKind::Tls, Direction::Write) if n * p.mem_bw < ofs.mbps => {
                Bound::new(n * p.mem_bw, BindingResource::Memory)
            }
            _ => ofs,
        };
        // A node cannot receive more than its fair share of the capped total.
        let share = agg.mbps / n;
        if share < node.mbps {
            (agg.mbps, agg.resource, share)
        } else {
            (agg.mbps, node.resource, node.mbps)
        }
    } else {
        (n * node.mbps, node.resource, node.mbps)
    };
    Ok(ThroughputReport {
        per_node: per_node_mbps,
        aggregate,
        binding_resource: binding,
        inputs_echo: *q,
    })
}

/// HDFS query matching a rival's direction, with full read locality.
fn hdfs_counterpart(rival: &ModelQuery) -> ModelQuery {
    ModelQuery {
        storage_kind: StorageKind::Hdfs,
        direction: rival.direction,
        locality: Locality::Local,
        tachyon_fraction: 0.0,
        data_size: rival.data_size,
        pfs_aggregate_bw: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossoverResult {
    pub node_count: u32,
    pub hdfs_aggregate_at_n: f64,
    pub rival_aggregate_at_n: f64,
}

/// Default upper bound on the node-count scan.
pub const DEFAULT_CROSSOVER_CEILING: u32 = 10_000;

/// Smallest node count at which HDFS aggregate throughput strictly exceeds
/// the rival's. Returns `Ok(None)` when no crossing occurs up to `ceiling`.
pub fn crossover_nodes(
    rival: &ModelQuery,
    p: &ClusterParams,
    ceiling: u32,
) -> Result<Option<CrossoverResult>> {
    if !rival.storage_kind.needs_pfs() {
        return Err(Error::invalid(format!(
            "crossover rival must be ofs or tls, got {}",
            rival.storage_kind
        )));
    }
    if rival.pfs_aggregate_bw.is_none() {
        return Err(Error::invalid(
            "crossover requires the parallel file system bandwidth",
        ));
    }
    let hdfs = hdfs_counterpart(rival);
    for n in 1..=ceiling {
        let at = p.with_nodes(n);
        let h = aggregate(&hdfs, &at)?.aggregate;
        let r = aggregate(rival, &at)?.aggregate;
        if h > r {
            return Ok(Some(CrossoverResult {
                node_count: n,
                hdfs_aggregate_at_n: h,
                rival_aggregate_at_n: r,
            }));
        }
    }
    Ok(None)
}

/// One row of a node-count sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n: u32,
    pub kind: String,
    pub direction: Direction,
    pub per_node: f64,
    pub aggregate: f64,
    pub binding: BindingResource,
}

pub const SWEEP_HEADER: &str = "n,kind,direction,per_node_mbps,aggregate_mbps,binding_resource";

/// Evaluates every query at every node count in `nodes`. Rows come out
/// sorted by node count, then by query order (kind, direction, fraction).
pub fn sweep(
    p: &ClusterParams,
    queries: &[ModelQuery],
    nodes: impl IntoIterator<Item = u32>,
) -> Result<Vec<SweepRow>> {
    let mut ordered: Vec<ModelQuery> = queries.to_vec();
    ordered.sort_by(|a, b| {
        (a.storage_kind, a.direction)
            .cmp(&(b.storage_kind, b.direction))
            .then(a.tachyon_fraction.total_cmp(&b.tachyon_fraction))
    });
    let mut node_counts: Vec<u32> = nodes.into_iter().collect();
    if node_counts.is_empty() {
        return Err(Error::invalid("sweep needs at least one node count"));
    }
    node_counts.sort_unstable();
    node_counts.dedup();
    let mut rows = Vec::with_capacity(node_counts.len() * ordered.len());
    for n in node_counts {
        let at = p.with_nodes(n);
        for q in &ordered {
            let r = aggregate(q, &at)?;
            rows.push(SweepRow {
                n,
                kind: q.label(),
                direction: q.direction,
                per_node: r.per_node,
                aggregate: r.aggregate,
                binding: r.binding_resource,
            });
        }
    }
    Ok(rows)
}

/// Renders a number with at most three decimals and no trailing zeros.
pub fn format_mbps(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.n,
            r.kind,
            r.direction,
            format_mbps(r.per_node),
            format_mbps(r.aggregate),
            r.binding
        ));
    }
    out
}
