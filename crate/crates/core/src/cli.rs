//! The `twotier` command line.
//!
//! Failures print `error: <code>: <detail>` on stderr and exit with 2 for
//! usage and configuration problems, 3 for data and integrity problems and
//! 4 when the tier or backing store runs out of room.
//!
//! Each store subcommand runs in a fresh process, so the memory tier starts
//! empty every time and only checkpointed or backing-resident data survives
//! between invocations.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bench::{emit_mountain_csv, emit_seq_csv, run_mountain, run_seqbench, SeqTarget};
use crate::config::{parse_size, BackingKind, CliConfig};
use crate::error::{Error, Result};
use crate::model::{
    aggregate, crossover_nodes, evaluate_per_node, format_mbps, sweep, sweep_csv, Direction,
    Locality, ModelQuery, StorageKind, DEFAULT_CROSSOVER_CEILING,
};
use crate::store::{ReadMode, TieredStore, WriteMode};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_CAPACITY: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "twotier",
    version,
    about = "Tiered storage models, store operations and benchmarks"
)]
struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Write tabular output (or `store get` bytes) here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Analytic throughput models.
    #[command(subcommand)]
    Model(ModelCmd),
    /// Operations on the store at the configured root.
    #[command(subcommand)]
    Store(StoreCmd),
    /// Storage mountain and sequential benchmarks.
    #[command(subcommand)]
    Bench(BenchCmd),
}

#[derive(Debug, Args)]
struct ModelFlags {
    #[arg(long, default_value = "read")]
    direction: Direction,
    /// Fraction of the data resident in memory (two-level reads).
    #[arg(long = "f", default_value_t = 0.0)]
    f: f64,
    /// Aggregate parallel file system bandwidth.
    #[arg(long = "pfs-mbps")]
    pfs_mbps: Option<f64>,
    /// Compute node count.
    #[arg(long)]
    nodes: Option<u32>,
}

#[derive(Debug, Subcommand)]
enum ModelCmd {
    /// Per-node and aggregate throughput of one storage kind.
    Eval {
        #[arg(long)]
        kind: StorageKind,
        #[arg(long, default_value = "local")]
        locality: Locality,
        /// Require the aggregate figure (needs --pfs-mbps for ofs and tls).
        #[arg(long)]
        aggregate: bool,
        #[command(flatten)]
        flags: ModelFlags,
    },
    /// Smallest node count at which HDFS overtakes a rival.
    Crossover {
        #[arg(long)]
        rival: StorageKind,
        #[arg(long, default_value_t = DEFAULT_CROSSOVER_CEILING)]
        ceiling: u32,
        #[command(flatten)]
        flags: ModelFlags,
    },
    /// CSV of throughput over a node-count range.
    Sweep {
        /// `A:B` inclusive, or a single count.
        #[arg(long = "n", default_value = "1:500")]
        n: String,
        #[arg(long = "pfs-mbps")]
        pfs_mbps: Option<f64>,
        /// Comma-separated `kind:direction[:f]` items.
        #[arg(long)]
        queries: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
enum StoreCmd {
    /// Copy a local file into the store and seal it.
    Put {
        local: PathBuf,
        /// Store path; defaults to the local file name.
        #[arg(long = "as")]
        name: Option<String>,
        #[arg(long)]
        mode: Option<WriteMode>,
        /// Persist memory-only blocks before exiting.
        #[arg(long)]
        checkpoint: bool,
    },
    /// Read a file to stdout or --out.
    Get {
        name: String,
        #[arg(long)]
        mode: Option<ReadMode>,
    },
    Seal {
        name: String,
    },
    /// Persist tier-only blocks of a file.
    Checkpoint {
        name: String,
    },
    /// Evict unpinned tier blocks until the given bytes are free.
    Evict {
        #[arg(long, value_parser = parse_size_arg)]
        bytes: u64,
    },
    /// List files, or describe one.
    Stat {
        name: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
enum BenchCmd {
    /// Storage mountain CSV.
    Mountain,
    /// Sequential benchmark CSV.
    Seq {
        #[arg(long)]
        target: Option<SeqTarget>,
        #[arg(long)]
        direction: Option<Direction>,
    },
}

fn parse_size_arg(s: &str) -> std::result::Result<u64, String> {
    parse_size(s).map_err(|e| e.to_string())
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Invalid(_)
        | Error::Config(_)
        | Error::DuplicatePath(_)
        | Error::Sealed(_)
        | Error::NotSealed(_)
        | Error::OutOfRange { .. } => EXIT_USAGE,
        Error::Capacity { .. } => EXIT_CAPACITY,
        Error::PartialPut { source, .. } => exit_code(source),
        _ => EXIT_DATA,
    }
}

/// Runs the command line and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{}", e.render());
                return 0;
            }
            let text = e.render().to_string();
            let text = text.strip_prefix("error: ").unwrap_or(&text);
            let _ = write!(stderr, "error: usage: {text}");
            return EXIT_USAGE;
        }
    };
    match execute(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}: {e}", e.code());
            exit_code(&e)
        }
    }
}

fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    for kv in &cli.set {
        config.apply_override(kv)?;
    }
    let out = cli.out.as_deref();
    match cli.command {
        Command::Model(cmd) => model(cmd, &config, out, stdout),
        Command::Store(cmd) => store(cmd, &config, out, stdout),
        Command::Bench(cmd) => bench(cmd, &config, out, stdout),
    }
}

/// Sends tabular output to `--out` when given, else stdout.
fn emit(out: Option<&Path>, stdout: &mut dyn Write, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => fs::write(p, bytes)?,
        None => stdout.write_all(bytes)?,
    }
    Ok(())
}

fn query(kind: StorageKind, flags: &ModelFlags, config: &CliConfig) -> ModelQuery {
    let mut q = ModelQuery::new(kind, flags.direction).fraction(flags.f);
    q.pfs_aggregate_bw = flags.pfs_mbps.or(config.pfs_mbps);
    q
}

fn model(
    cmd: ModelCmd,
    config: &CliConfig,
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<()> {
    let mut p = config.cluster;
    match cmd {
        ModelCmd::Eval {
            kind,
            locality,
            aggregate: want_aggregate,
            flags,
        } => {
            if let Some(n) = flags.nodes {
                p.n_compute = n;
            }
            let q = query(kind, &flags, config).locality(locality);
            let mut text = format!(
                "kind: {}\ndirection: {}\nnodes: {}\n",
                q.label(),
                q.direction,
                p.n_compute
            );
            if kind.needs_pfs() && q.pfs_aggregate_bw.is_none() && !want_aggregate {
                p.validate()?;
                q.validate()?;
                let b = evaluate_per_node(&q, &p)?;
                text += &format!(
                    "per_node_mbps: {}\nbinding_resource: {}\n",
                    format_mbps(b.mbps),
                    b.resource
                );
            } else {
                let r = aggregate(&q, &p)?;
                text += &format!(
                    "per_node_mbps: {}\naggregate_mbps: {}\nbinding_resource: {}\n",
                    format_mbps(r.per_node),
                    format_mbps(r.aggregate),
                    r.binding_resource
                );
            }
            emit(out, stdout, text.as_bytes())
        }
        ModelCmd::Crossover {
            rival,
            ceiling,
            flags,
        } => {
            let q = query(rival, &flags, config);
            let text = match crossover_nodes(&q, &p, ceiling)? {
                Some(c) => format!(
                    "rival: {}\ndirection: {}\nnode_count: {}\nhdfs_aggregate_mbps: {}\nrival_aggregate_mbps: {}\n",
                    q.label(),
                    q.direction,
                    c.node_count,
                    format_mbps(c.hdfs_aggregate_at_n),
                    format_mbps(c.rival_aggregate_at_n)
                ),
                None => format!(
                    "rival: {}\ndirection: {}\nnode_count: none\nceiling: {ceiling}\n",
                    q.label(),
                    q.direction
                ),
            };
            emit(out, stdout, text.as_bytes())
        }
        ModelCmd::Sweep {
            n,
            pfs_mbps,
            queries,
        } => {
            let (lo, hi) = parse_range(&n)?;
            let pfs = pfs_mbps.or(config.pfs_mbps);
            let qs = match queries {
                Some(s) => parse_queries(&s, pfs)?,
                None => default_sweep_queries(pfs),
            };
            let rows = sweep(&p, &qs, lo..=hi)?;
            emit(out, stdout, sweep_csv(&rows).as_bytes())
        }
    }
}

fn parse_range(s: &str) -> Result<(u32, u32)> {
    let bad = || Error::invalid(format!("bad node range `{s}`; expected A:B"));
    let (lo, hi) = match s.split_once(':') {
        Some((a, b)) => (
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        ),
        None => {
            let v = s.trim().parse().map_err(|_| bad())?;
            (v, v)
        }
    };
    if lo == 0 || lo > hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn parse_queries(s: &str, pfs: Option<f64>) -> Result<Vec<ModelQuery>> {
    s.split(',')
        .map(|item| {
            let parts: Vec<&str> = item.trim().split(':').collect();
            if parts.len() < 2 || parts.len() > 3 {
                return Err(Error::invalid(format!(
                    "bad query `{item}`; expected kind:direction[:f]"
                )));
            }
            let mut q = ModelQuery::new(parts[0].parse()?, parts[1].parse()?);
            if let Some(f) = parts.get(2) {
                q = q.fraction(
                    f.parse()
                        .map_err(|_| Error::invalid(format!("bad fraction in `{item}`")))?,
                );
            }
            q.pfs_aggregate_bw = pfs;
            Ok(q)
        })
        .collect()
}

fn default_sweep_queries(pfs: Option<f64>) -> Vec<ModelQuery> {
    let mut qs = vec![
        ModelQuery::new(StorageKind::Hdfs, Direction::Read),
        ModelQuery::new(StorageKind::Hdfs, Direction::Write),
    ];
    if let Some(pfs) = pfs {
        qs.extend([
            ModelQuery::new(StorageKind::Ofs, Direction::Read).pfs(pfs),
            ModelQuery::new(StorageKind::Ofs, Direction::Write).pfs(pfs),
            ModelQuery::new(StorageKind::Tls, Direction::Read)
                .fraction(0.2)
                .pfs(pfs),
            ModelQuery::new(StorageKind::Tls, Direction::Read)
                .fraction(0.5)
                .pfs(pfs),
            ModelQuery::new(StorageKind::Tls, Direction::Write).pfs(pfs),
        ]);
    }
    qs
}

fn open_persistent(config: &CliConfig) -> Result<TieredStore> {
    if config.backing_kind() != BackingKind::Directory {
        return Err(Error::Config(
            "store subcommands need a directory backing; set `root` or `server_roots`".into(),
        ));
    }
    config.open_store()
}

fn store(
    cmd: StoreCmd,
    config: &CliConfig,
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<()> {
    let s = open_persistent(config)?;
    match cmd {
        StoreCmd::Put {
            local,
            name,
            mode,
            checkpoint,
        } => {
            let name = match name {
                Some(n) => n,
                None => local
                    .file_name()
                    .and_then(|n| n.to_str())
                    .ok_or_else(|| {
                        Error::invalid(format!("cannot name `{}`; pass --as", local.display()))
                    })?
                    .to_string(),
            };
            let data = fs::read(&local)?;
            let h = s.create(&name, mode.unwrap_or(config.store.default_write_mode))?;
            for chunk in data.chunks(s.config().app_buffer as usize) {
                s.append(&h, chunk)?;
            }
            let meta = s.seal(&name)?;
            if checkpoint {
                s.checkpoint(&name)?;
            }
            writeln!(
                stdout,
                "{}\t{}\t{} blocks",
                meta.path,
                meta.length,
                meta.blocks.len()
            )?;
        }
        StoreCmd::Get { name, mode } => {
            let bytes = s.read_all(&name, mode.unwrap_or(config.store.default_read_mode))?;
            emit(out, stdout, &bytes)?;
        }
        StoreCmd::Seal { name } => {
            let meta = s.seal(&name)?;
            writeln!(stdout, "{}\tsealed\t{}", meta.path, meta.length)?;
        }
        StoreCmd::Checkpoint { name } => {
            let n = s.checkpoint(&name)?;
            writeln!(stdout, "{name}\tcheckpointed {n} blocks")?;
        }
        StoreCmd::Evict { bytes } => {
            let ids = s.evict(bytes);
            writeln!(stdout, "evicted {} blocks", ids.len())?;
        }
        StoreCmd::Stat { name } => {
            let mut text = String::new();
            match name {
                Some(n) => {
                    let m = s.metadata(&n)?;
                    text += &format!(
                        "path: {}\nlength: {}\nsealed: {}\nwrite_mode: {}\nblocks: {}\n",
                        m.path,
                        m.length,
                        m.sealed,
                        m.write_mode,
                        m.blocks.len()
                    );
                    for b in &m.blocks {
                        text += &format!(
                            "block\t{}\t{}\t{}\t{}\t{:016x}\n",
                            b.ordinal, b.block_id, b.logical_length, b.residency, b.checksum
                        );
                    }
                }
                None => {
                    text += "path,length,sealed,blocks\n";
                    for p in s.list() {
                        let m = s.metadata(&p)?;
                        text +=
                            &format!("{},{},{},{}\n", m.path, m.length, m.sealed, m.blocks.len());
                    }
                }
            }
            emit(out, stdout, text.as_bytes())?;
        }
    }
    Ok(())
}

fn bench(
    cmd: BenchCmd,
    config: &CliConfig,
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<()> {
    let s = config.open_store()?;
    let mut csv = Vec::new();
    match cmd {
        BenchCmd::Mountain => {
            let points = run_mountain(&s, &config.mountain)?;
            emit_mountain_csv(&points, &mut csv)?;
        }
        BenchCmd::Seq { target, direction } => {
            let mut spec = config.seq.clone();
            if let Some(t) = target {
                spec.target = t;
            }
            if let Some(d) = direction {
                spec.direction = d;
            }
            let report = run_seqbench(&s, &spec)?;
            emit_seq_csv(&report, &mut csv)?;
        }
    }
    emit(out, stdout, &csv)
}
