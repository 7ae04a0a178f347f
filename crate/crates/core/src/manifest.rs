//! The per-store manifest: a tab-separated, line-oriented text file shared
//! by the memory tier's block table and the backing store's stripe table.
//!
//! ```text
//! F      path     length   sealed                                  (file)
//! path   ordinal  block_id logical_length checksum_hex residency   (block)
//! S      block_id seq      server_id      offset length checksum_hex (stripe)
//! ```
//!
//! Records are told apart by field count. The file is always rewritten
//! whole, through a temporary file and a rename.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;

use crate::backing::{BlockId, StripeRecord};
use crate::error::{Error, Result};
use crate::store::Residency;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileRecord {
    pub path: String,
    pub length: u64,
    pub sealed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockRecord {
    pub path: String,
    pub ordinal: u32,
    pub block_id: BlockId,
    pub logical_length: u64,
    pub checksum: u64,
    pub residency: Residency,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ManifestDoc {
    pub files: Vec<FileRecord>,
    pub blocks: Vec<BlockRecord>,
    pub stripes: BTreeMap<BlockId, Vec<StripeRecord>>,
}

impl ManifestDoc {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for f in &self.files {
            let _ = writeln!(out, "F\t{}\t{}\t{}", f.path, f.length, u8::from(f.sealed));
        }
        for b in &self.blocks {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:016x}\t{}",
                b.path,
                b.ordinal,
                b.block_id,
                b.logical_length,
                b.checksum,
                b.residency.as_str()
            );
        }
        for s in self.stripes.values().flatten() {
            let _ = writeln!(
                out,
                "S\t{}\t{}\t{}\t{}\t{}\t{:016x}",
                s.block_id, s.stripe_seq, s.server_id, s.offset, s.length, s.checksum
            );
        }
        out
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut doc = ManifestDoc::default();
        for (idx, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = |detail: String| Error::Manifest {
                path: origin.to_path_buf(),
                line: idx + 1,
                detail,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.as_slice() {
                ["F", path, length, sealed] => doc.files.push(FileRecord {
                    path: (*path).to_string(),
                    length: num(length).map_err(&bad)?,
                    sealed: match *sealed {
                        "1" => true,
                        "0" => false,
                        other => return Err(bad(format!("bad sealed flag `{other}`"))),
                    },
                }),
                ["S", block_id, seq, server, offset, length, checksum] => {
                    let rec = StripeRecord {
                        block_id: num(block_id).map_err(&bad)?,
                        stripe_seq: num(seq).map_err(&bad)?,
                        server_id: num(server).map_err(&bad)?,
                        offset: num(offset).map_err(&bad)?,
                        length: num(length).map_err(&bad)?,
                        checksum: hex(checksum).map_err(&bad)?,
                    };
                    doc.stripes.entry(rec.block_id).or_default().push(rec);
                }
                [path, ordinal, block_id, length, checksum, residency] => {
                    doc.blocks.push(BlockRecord {
                        path: (*path).to_string(),
                        ordinal: num(ordinal).map_err(&bad)?,
                        block_id: num(block_id).map_err(&bad)?,
                        logical_length: num(length).map_err(&bad)?,
                        checksum: hex(checksum).map_err(&bad)?,
                        residency: residency
                            .parse()
                            .map_err(|_| bad(format!("bad residency `{residency}`")))?,
                    })
                }
                _ => {
                    return Err(bad(format!(
                        "unexpected record with {} fields",
                        fields.len()
                    )))
                }
            }
        }
        for records in doc.stripes.values_mut() {
            records.sort_by_key(|r| r.stripe_seq);
        }
        Ok(doc)
    }
}

fn num<T: std::str::FromStr>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|_| format!("bad number `{s}`"))
}

fn hex(s: &str) -> std::result::Result<u64, String> {
    u64::from_str_radix(s, 16).map_err(|_| format!("bad checksum `{s}`"))
}

/// Writes `contents` to `path` by way of a sibling temporary file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug)]
struct State {
    path: Option<PathBuf>,
    doc: ManifestDoc,
}

/// Shared handle on a manifest. Clones refer to the same document.
///
/// A manifest without a path keeps its records in memory only.
#[derive(Debug, Clone)]
pub struct Manifest {
    state: Arc<Mutex<State>>,
}

impl Manifest {
    pub fn in_memory() -> Self {
        Manifest {
            state: Arc::new(Mutex::new(State {
                path: None,
                doc: ManifestDoc::default(),
            })),
        }
    }

    /// Opens the manifest at `path`, loading it if it exists.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let doc = match fs::read_to_string(&path) {
            Ok(text) => ManifestDoc::parse(&text, &path)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => ManifestDoc::default(),
            Err(e) => return Err(e.into()),
        };
        Ok(Manifest {
            state: Arc::new(Mutex::new(State {
                path: Some(path),
                doc,
            })),
        })
    }

    pub fn path(&self) -> Option<PathBuf> {
        self.state.lock().path.clone()
    }

    pub fn snapshot(&self) -> ManifestDoc {
        self.state.lock().doc.clone()
    }

    /// Replaces (or with `None`, removes) the stripe records of one block
    /// and writes the manifest out.
    pub fn commit_stripes(
        &self,
        block_id: BlockId,
        records: Option<Vec<StripeRecord>>,
    ) -> Result<()> {
        let mut st = self.state.lock();
        match records {
            Some(r) => {
                st.doc.stripes.insert(block_id, r);
            }
            None => {
                st.doc.stripes.remove(&block_id);
            }
        }
        Self::flush_locked(&st)
    }

    /// Replaces the file and block tables and writes the manifest out.
    pub fn commit_files(&self, files: Vec<FileRecord>, blocks: Vec<BlockRecord>) -> Result<()> {
        let mut st = self.state.lock();
        st.doc.files = files;
        st.doc.blocks = blocks;
        Self::flush_locked(&st)
    }

    fn flush_locked(st: &State) -> Result<()> {
        match &st.path {
            Some(p) => write_atomic(p, st.doc.render().as_bytes()),
            None => Ok(()),
        }
    }
}
