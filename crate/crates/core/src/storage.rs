//! Positional byte storage shared by the ranks of one open file.

use std::fs::File;
use std::io;
use std::os::unix::fs::FileExt;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use crate::sections::ByteSource;

pub trait Storage: Send + Sync {
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()>;
    fn write_at(&self, offset: u64, data: &[u8]) -> io::Result<()>;
    fn len(&self) -> io::Result<u64>;
    fn set_len(&self, len: u64) -> io::Result<()>;
    fn flush(&self) -> io::Result<()>;

    fn is_empty(&self) -> io::Result<bool> {
        Ok(self.len()? == 0)
    }
}

/// Growable in-memory file image.
#[derive(Debug, Default, Clone)]
pub struct MemStorage {
    bytes: Arc<Mutex<Vec<u8>>>,
}

impl MemStorage {
    pub fn new() -> MemStorage {
        MemStorage::default()
    }

    pub fn from_bytes(bytes: Vec<u8>) -> MemStorage {
        MemStorage {
            bytes: Arc::new(Mutex::new(bytes)),
        }
    }

    pub fn to_vec(&self) -> Vec<u8> {
        self.bytes.lock().unwrap().clone()
    }
}

impl Storage for MemStorage {
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()> {
        self.bytes.lock().unwrap().as_slice().read_exact_at(offset, buf)
    }

    fn write_at(&self, offset: u64, data: &[u8]) -> io::Result<()> {
        let start = usize::try_from(offset).map_err(|_| io::Error::from(io::ErrorKind::InvalidInput))?;
        let end = start + data.len();
        let mut bytes = self.bytes.lock().unwrap();
        if bytes.len() < end {
            bytes.resize(end, 0);
        }
        bytes[start..end].copy_from_slice(data);
        Ok(())
    }

    fn len(&self) -> io::Result<u64> {
        Ok(self.bytes.lock().unwrap().len() as u64)
    }

    fn set_len(&self, len: u64) -> io::Result<()> {
        self.bytes.lock().unwrap().resize(len as usize, 0);
        Ok(())
    }

    fn flush(&self) -> io::Result<()> {
        Ok(())
    }
}

/// A file on disk accessed with positional reads and writes.
#[derive(Debug)]
pub struct FsStorage {
    file: File,
}

impl FsStorage {
    pub fn create(path: &Path) -> io::Result<FsStorage> {
        Ok(FsStorage {
            file: File::options().read(true).write(true).create(true).truncate(true).open(path)?,
        })
    }

    /// Open an existing file for writing without truncating it.
    pub fn open_rw(path: &Path) -> io::Result<FsStorage> {
        Ok(FsStorage {
            file: File::options().read(true).write(true).open(path)?,
        })
    }

    pub fn open(path: &Path) -> io::Result<FsStorage> {
        Ok(FsStorage { file: File::open(path)? })
    }
}

impl Storage for FsStorage {
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()> {
        self.file.read_exact_at(buf, offset)
    }

    fn write_at(&self, offset: u64, data: &[u8]) -> io::Result<()> {
        self.file.write_all_at(data, offset)
    }

    fn len(&self) -> io::Result<u64> {
        Ok(self.file.metadata()?.len())
    }

    fn set_len(&self, len: u64) -> io::Result<()> {
        self.file.set_len(len)
    }

    fn flush(&self) -> io::Result<()> {
        self.file.sync_data()
    }
}

/// Adapter for the section parsers. Length errors read as empty.
pub struct StorageSource<'a>(pub &'a dyn Storage);

impl ByteSource for StorageSource<'_> {
    fn len(&self) -> u64 {
        self.0.len().unwrap_or(0)
    }

    fn read_exact_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()> {
        self.0.read_at(offset, buf)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Every operation fails.
    IoFailure,
    /// Writes stop halfway and reads hit a premature end.
    Truncation,
}

/// Wraps a storage and fails operations once armed.
pub struct FaultyStorage<S> {
    inner: S,
    fault: Fault,
    armed: AtomicBool,
}

impl<S: Storage> FaultyStorage<S> {
    pub fn new(inner: S, fault: Fault) -> Self {
        FaultyStorage {
            inner,
            fault,
            armed: AtomicBool::new(false),
        }
    }

    pub fn arm(&self) {
        self.armed.store(true, Ordering::SeqCst);
    }

    pub fn disarm(&self) {
        self.armed.store(false, Ordering::SeqCst);
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }

    fn armed(&self) -> bool {
        self.armed.load(Ordering::SeqCst)
    }
}

fn injected() -> io::Error {
    io::Error::other("injected failure")
}

impl<S: Storage> Storage for FaultyStorage<S> {
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()> {
        match (self.armed(), self.fault) {
            (false, _) => self.inner.read_at(offset, buf),
            (true, Fault::IoFailure) => Err(injected()),
            (true, Fault::Truncation) => Err(io::ErrorKind::UnexpectedEof.into()),
        }
    }

    fn write_at(&self, offset: u64, data: &[u8]) -> io::Result<()> {
        match (self.armed(), self.fault) {
            (false, _) => self.inner.write_at(offset, data),
            (true, Fault::IoFailure) => Err(injected()),
            (true, Fault::Truncation) => {
                self.inner.write_at(offset, &data[..data.len() / 2])?;
                Err(io::ErrorKind::WriteZero.into())
            }
        }
    }

    fn len(&self) -> io::Result<u64> {
        self.inner.len()
    }

    fn set_len(&self, len: u64) -> io::Result<()> {
        if self.armed() {
            return Err(injected());
        }
        self.inner.set_len(len)
    }

    fn flush(&self) -> io::Result<()> {
        if self.armed() {
            return Err(injected());
        }
        self.inner.flush()
    }
}

impl<S: Storage + ?Sized> Storage for Arc<S> {
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()> {
        (**self).read_at(offset, buf)
    }

    fn write_at(&self, offset: u64, data: &[u8]) -> io::Result<()> {
        (**self).write_at(offset, data)
    }

    fn len(&self) -> io::Result<u64> {
        (**self).len()
    }

    fn set_len(&self, len: u64) -> io::Result<()> {
        (**self).set_len(len)
    }

    fn flush(&self) -> io::Result<()> {
        (**self).flush()
    }
}
