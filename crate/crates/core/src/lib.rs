//! Reader and writer for scda containers: a line-oriented, 32-byte aligned
//! file format of inline, block, and array sections, with optional
//! per-element compression and partition-independent parallel I/O.

pub mod comm;
pub mod compress;
pub mod error;
pub mod fileapi;
pub mod parsim;
pub mod partition;
pub mod sections;
pub mod storage;
pub mod validate;
pub mod wire;

pub use comm::{Comm, Schedule};
pub use error::{Error, ErrorCode, ErrorGroup, Result};
pub use fileapi::{fopen, Elements, ElementsMut, FileContext, SectionHeader, WriteOptions};
pub use partition::Partition;
pub use wire::{Count, LineStyle, SectionType};
