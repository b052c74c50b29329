//! Collective file contexts over virtual ranks.
//!
//! A context owns a forward-only cursor. Every operation consumes the
//! context and, on success, returns it advanced past one section (or one
//! sub-step of a section read). On failure the context is dropped, which
//! leaves the file as it is.
//!
//! Each call runs the same protocol on every rank: local argument checks,
//! an allgather that compares collective arguments and shares local status,
//! rank-local byte commits, and a final allgather agreeing on I/O status.
//! An error on any rank is returned on all ranks.

mod read;
mod write;

use std::path::Path;
use std::sync::Arc;

use crate::comm::Comm;
use crate::compress::Level;
use crate::error::{Error, IoKind, Result, UsageKind};
use crate::sections::{decode_file_header, encode_file_header, read_range, FileHeader, FILE_HEADER_LEN};
use crate::storage::{FsStorage, Storage, StorageSource};
use crate::wire::{LineStyle, USER_MAX};

pub use read::SectionHeader;

/// Vendor string written into every file header.
pub const VENDOR: &[u8] = b"scda-kit 0.1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Write,
    Read,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteOptions {
    pub style: LineStyle,
    pub level: Level,
}

impl Default for WriteOptions {
    fn default() -> Self {
        WriteOptions {
            style: LineStyle::Unix,
            level: Level::BEST,
        }
    }
}

/// Rank-local array elements to write.
#[derive(Debug, Clone, Copy)]
pub enum Elements<'a> {
    Contiguous(&'a [u8]),
    Indirect(&'a [&'a [u8]]),
}

/// Rank-local destination for array elements.
#[derive(Debug)]
pub enum ElementsMut<'a> {
    Contiguous(&'a mut [u8]),
    Indirect(Vec<&'a mut [u8]>),
}

impl<'a> Elements<'a> {
    /// Check that this holds `n` elements of `size` bytes each.
    fn check_fixed(&self, n: u64, size: u64) -> Result<()> {
        let ok = match self {
            Elements::Contiguous(buf) => buf.len() as u128 == n as u128 * size as u128,
            Elements::Indirect(list) => list.len() as u64 == n,
        };
        if !ok {
            return Err(Error::length(format!(
                "rank-local data does not hold {n} elements of {size} bytes"
            )));
        }
        Ok(())
    }

    /// Split into elements of the given sizes, checking the total.
    fn split(self, sizes: &[u64]) -> Result<Vec<&'a [u8]>> {
        match self {
            Elements::Contiguous(buf) => {
                let total: u128 = sizes.iter().map(|&s| s as u128).sum();
                if total != buf.len() as u128 {
                    return Err(Error::length(format!(
                        "elements need {total} bytes, buffer has {}",
                        buf.len()
                    )));
                }
                let mut at = 0usize;
                Ok(sizes
                    .iter()
                    .map(|&s| {
                        let el = &buf[at..at + s as usize];
                        at += s as usize;
                        el
                    })
                    .collect())
            }
            Elements::Indirect(list) => {
                if list.len() != sizes.len() {
                    return Err(Error::length(format!(
                        "{} element buffers given for {} elements",
                        list.len(),
                        sizes.len()
                    )));
                }
                for (i, (el, &s)) in list.iter().zip(sizes).enumerate() {
                    if el.len() as u64 != s {
                        return Err(Error::length(format!(
                            "element {i} has {} bytes, expected {s}",
                            el.len()
                        )));
                    }
                }
                Ok(list.to_vec())
            }
        }
    }
}

impl<'a> ElementsMut<'a> {
    fn split(self, sizes: &[u64]) -> Result<Vec<&'a mut [u8]>> {
        match self {
            ElementsMut::Contiguous(buf) => {
                let total: u128 = sizes.iter().map(|&s| s as u128).sum();
                if total != buf.len() as u128 {
                    return Err(Error::length(format!(
                        "elements need {total} bytes, buffer has {}",
                        buf.len()
                    )));
                }
                let mut rest = buf;
                let mut out = Vec::with_capacity(sizes.len());
                for &s in sizes {
                    let (head, tail) = rest.split_at_mut(s as usize);
                    out.push(head);
                    rest = tail;
                }
                Ok(out)
            }
            ElementsMut::Indirect(list) => {
                if list.len() != sizes.len() {
                    return Err(Error::length(format!(
                        "{} element buffers given for {} elements",
                        list.len(),
                        sizes.len()
                    )));
                }
                for (i, (el, &s)) in list.iter().zip(sizes).enumerate() {
                    if el.len() as u64 != s {
                        return Err(Error::length(format!(
                            "element buffer {i} has {} bytes, expected {s}",
                            el.len()
                        )));
                    }
                }
                Ok(list)
            }
        }
    }
}

/// Arguments that must agree on all ranks of a collective call.
#[derive(Debug, Clone, PartialEq, Default)]
pub(crate) struct Collective {
    pub op: &'static str,
    pub user: Vec<u8>,
    pub root: usize,
    pub counts: Vec<u64>,
    pub size: u64,
    pub sums: Vec<u64>,
    pub flag: bool,
}

/// One open file as seen from one rank.
pub struct FileContext<'c> {
    comm: &'c Comm,
    storage: Arc<dyn Storage>,
    mode: Mode,
    opts: WriteOptions,
    cursor: u64,
    pending: read::Pending,
}

impl std::fmt::Debug for FileContext<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FileContext")
            .field("rank", &self.comm.rank())
            .field("mode", &self.mode)
            .field("cursor", &self.cursor)
            .finish()
    }
}

/// First error in rank order, or all values.
fn first_error<T>(all: Vec<Result<T>>) -> Result<Vec<T>> {
    all.into_iter().collect()
}

fn check_user(user: &[u8]) -> Result<()> {
    if user.len() > USER_MAX {
        return Err(Error::length(format!(
            "user string has {} bytes, at most {USER_MAX} allowed",
            user.len()
        )));
    }
    Ok(())
}

fn to_u64(v: u128, what: &str) -> Result<u64> {
    u64::try_from(v).map_err(|_| Error::range(format!("{what} exceeds 64 bits")))
}

impl<'c> FileContext<'c> {
    /// Create a file on `storage` and write its header.
    pub fn create(comm: &'c Comm, storage: Arc<dyn Storage>, user: &[u8], opts: WriteOptions) -> Result<Self> {
        let ctx = FileContext {
            comm,
            storage,
            mode: Mode::Write,
            opts,
            cursor: 0,
            pending: read::Pending::None,
        };
        let header = FileHeader::new(VENDOR, user);
        let local = check_user(user).and_then(|_| encode_file_header(&header, opts.style));
        let args = Collective {
            op: "create",
            user: user.to_vec(),
            ..Default::default()
        };
        let bytes = ctx.agree(args, local)?.swap_remove(ctx.comm.rank());
        let mut writes = Vec::new();
        if ctx.comm.rank() == 0 {
            writes.push((0, bytes.to_vec()));
        }
        let storage = ctx.storage.clone();
        let truncate = ctx.comm.rank() == 0;
        let r = ctx.comm.ordered(move || -> Result<()> {
            if truncate {
                storage.set_len(0).map_err(|e| Error::io(IoKind::Write, &e))?;
            }
            Ok(())
        })?;
        ctx.status(r)?;
        ctx.commit(writes)?;
        Ok(FileContext {
            cursor: FILE_HEADER_LEN as u64,
            ..ctx
        })
    }

    /// Open an existing file and validate its header.
    pub fn open(comm: &'c Comm, storage: Arc<dyn Storage>) -> Result<(Self, FileHeader)> {
        let local = read_range(&StorageSource(storage.as_ref()), 0, FILE_HEADER_LEN as u64)
            .map_err(|e| match e {
                Error::Format { .. } => Error::format(
                    storage.len().unwrap_or(0),
                    crate::error::FormatKind::Truncated,
                ),
                other => other,
            })
            .and_then(|b| decode_file_header(&b));
        let ctx = FileContext {
            comm,
            storage,
            mode: Mode::Read,
            opts: WriteOptions::default(),
            cursor: FILE_HEADER_LEN as u64,
            pending: read::Pending::None,
        };
        let mut headers = ctx.status(local)?;
        let header = headers.swap_remove(comm.rank());
        Ok((ctx, header))
    }

    /// Flush and release the context on every rank.
    pub fn close(self) -> Result<()> {
        let r = match self.mode {
            Mode::Write => self.storage.flush().map_err(|e| Error::io(IoKind::Flush, &e)),
            Mode::Read => Ok(()),
        };
        self.status(r).map(|_| ())
    }

    pub fn rank(&self) -> usize {
        self.comm.rank()
    }

    pub fn ranks(&self) -> usize {
        self.comm.size()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    fn require_mode(&self, mode: Mode) -> Result<()> {
        if self.mode != mode {
            return Err(Error::usage(
                UsageKind::WrongMode,
                format!("operation needs a context opened for {mode:?}"),
            ));
        }
        Ok(())
    }

    fn check_root(&self, root: usize) -> Result<()> {
        if root >= self.comm.size() {
            return Err(Error::usage(
                UsageKind::RootOutOfRange,
                format!("root {root} with {} ranks", self.comm.size()),
            ));
        }
        Ok(())
    }

    fn check_counts(&self, counts: &[u64]) -> Result<u128> {
        if counts.len() != self.comm.size() {
            return Err(Error::usage(
                UsageKind::Consistency,
                format!("{} counts for {} ranks", counts.len(), self.comm.size()),
            ));
        }
        let total: u128 = counts.iter().map(|&c| c as u128).sum();
        crate::wire::Count::new(total)?;
        Ok(total)
    }

    /// Compare collective arguments and share local results.
    fn agree<T: Clone + Send + Sync + 'static>(&self, args: Collective, local: Result<T>) -> Result<Vec<T>> {
        let all = self.comm.allgather((args, local))?;
        if let Some((first, _)) = all.first() {
            if let Some(q) = all.iter().position(|(a, _)| a != first) {
                return Err(Error::usage(
                    UsageKind::CollectiveMismatch,
                    format!("{} arguments on rank {q} differ from rank 0", first.op),
                ));
            }
        }
        first_error(all.into_iter().map(|(_, r)| r).collect())
    }

    /// Share local results without argument comparison.
    fn status<T: Clone + Send + Sync + 'static>(&self, local: Result<T>) -> Result<Vec<T>> {
        first_error(self.comm.allgather(local)?)
    }

    /// Write rank-local byte ranges, then agree on the outcome.
    fn commit(&self, writes: Vec<(u64, Vec<u8>)>) -> Result<()> {
        let storage = self.storage.clone();
        let r = self.comm.ordered(move || -> Result<()> {
            for (at, bytes) in writes {
                storage.write_at(at, &bytes).map_err(|e| Error::io(IoKind::Write, &e))?;
            }
            Ok(())
        })?;
        self.status(r).map(|_| ())
    }
}

/// Open `path` with mode `b'w'` (create, writing `user` into the header)
/// or `b'r'` (returning the header's user bytes).
pub fn fopen<'c>(comm: &'c Comm, path: &Path, mode: u8, user: &[u8]) -> Result<(FileContext<'c>, Vec<u8>)> {
    match mode {
        b'w' => {
            let created = if comm.rank() == 0 {
                FsStorage::create(path).map(Some)
            } else {
                Ok(None)
            };
            let created = created.map_err(|e| Error::io(IoKind::Other, &e));
            first_error(comm.allgather(created.as_ref().map(|_| ()).map_err(Clone::clone))?)?;
            let storage = match created? {
                Some(s) => Ok(s),
                None => FsStorage::open_rw(path).map_err(|e| Error::io(IoKind::Other, &e)),
            };
            first_error(comm.allgather(storage.as_ref().map(|_| ()).map_err(Clone::clone))?)?;
            let ctx = FileContext::create(comm, Arc::new(storage?), user, WriteOptions::default())?;
            Ok((ctx, user.to_vec()))
        }
        b'r' => {
            let storage = FsStorage::open(path).map_err(|e| Error::io(IoKind::Other, &e));
            first_error(comm.allgather(storage.as_ref().map(|_| ()).map_err(Clone::clone))?)?;
            let (ctx, header) = FileContext::open(comm, Arc::new(storage?))?;
            Ok((ctx, header.user))
        }
        other => Err(Error::usage(
            UsageKind::InvalidMode,
            format!("open mode {:?} is neither 'w' nor 'r'", other as char),
        )),
    }
}
