//! Section walks over a file through the read API, used by `info` and
//! `extract`.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::Serialize;

use scda::error::{Error, UsageKind};
use scda::sections::FileHeader;
use scda::storage::FsStorage;
use scda::{Comm, ElementsMut, FileContext, SectionHeader, SectionType};

use crate::escape::escape;

#[derive(Debug, Clone, Serialize)]
pub struct SizeSummary {
    pub total: u128,
    pub min: u64,
    pub max: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SectionInfo {
    pub index: usize,
    #[serde(rename = "type")]
    pub kind: char,
    pub decoded: bool,
    /// Base64 of the user bytes.
    pub user: String,
    #[serde(skip)]
    pub user_raw: Vec<u8>,
    pub count: u64,
    pub size: u64,
    pub sizes: Option<SizeSummary>,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Listing {
    pub version: String,
    pub vendor: String,
    pub user: String,
    #[serde(skip)]
    pub header: Option<FileHeader>,
    pub sections: Vec<SectionInfo>,
}

/// Payload of one section, with element sizes for `V` sections.
#[derive(Debug, Clone, Default)]
pub struct Extracted {
    pub kind: Option<SectionType>,
    pub data: Vec<u8>,
    pub sizes: Vec<u64>,
}

fn implausible(what: &str, n: u64) -> Error {
    Error::Usage {
        kind: UsageKind::Range,
        detail: format!("{what} of {n} bytes is implausible for this file"),
    }
}

/// Visit every section of `path`, reading the payload of section `want`.
pub fn walk(path: &Path, decode: bool, want: Option<usize>) -> scda::Result<(Listing, Option<Extracted>)> {
    let storage = FsStorage::open(path).map_err(|e| Error::Io {
        kind: scda::error::IoKind::Other,
        detail: format!("{}: {e}", path.display()),
    })?;
    let file_len = fs::metadata(path).map(|m| m.len()).unwrap_or(0);
    // Bound for buffers sized from file contents; deflate expands at most ~1032:1.
    let limit = file_len.saturating_mul(1100).saturating_add(4096);
    let comm = Comm::solo();
    let (mut ctx, header) = FileContext::open(&comm, Arc::new(storage))?;
    let mut sections = Vec::new();
    let mut extracted = None;
    for index in 0.. {
        let offset = ctx.cursor();
        let (next, h) = ctx.read_section_header(decode)?;
        let Some(h) = h else {
            next.close()?;
            break;
        };
        let take = want == Some(index);
        let mut got = Extracted { kind: Some(h.kind), ..Default::default() };
        let mut summary = None;
        ctx = match h.kind {
            SectionType::Inline => {
                let mut buf = [0u8; 32];
                let next = next.read_inline_data(take.then_some(&mut buf), 0)?;
                got.data = buf.to_vec();
                next
            }
            SectionType::Block => {
                if take && h.size > limit {
                    return Err(implausible("block", h.size));
                }
                let mut buf = vec![0u8; if take { h.size as usize } else { 0 }];
                next.read_block_data(take.then_some(&mut buf[..]), h.size, 0).inspect(|_| got.data = buf)?
            }
            SectionType::ArrayFixed => {
                let bytes = h.count.saturating_mul(h.size);
                if take && bytes > limit {
                    return Err(implausible("array", bytes));
                }
                let mut buf = vec![0u8; if take { bytes as usize } else { 0 }];
                let out = take.then_some(ElementsMut::Contiguous(&mut buf));
                next.read_array_data(out, &[h.count], h.size).inspect(|_| got.data = buf)?
            }
            SectionType::ArrayVar | SectionType::FileHeader => {
                let (next, sizes) = read_sizes(next, &h, file_len)?;
                let total: u128 = sizes.iter().map(|&s| s as u128).sum();
                let total64 = u64::try_from(total).map_err(|_| implausible("array", u64::MAX))?;
                if take && total64 > limit {
                    return Err(implausible("array", total64));
                }
                summary = Some(SizeSummary {
                    total,
                    min: sizes.iter().copied().min().unwrap_or(0),
                    max: sizes.iter().copied().max().unwrap_or(0),
                });
                let mut buf = vec![0u8; if take { total64 as usize } else { 0 }];
                let out = take.then_some(ElementsMut::Contiguous(&mut buf));
                let next = next.read_varray_data(out, &[h.count], &sizes, &[total64])?;
                got.data = buf;
                got.sizes = sizes;
                next
            }
        };
        sections.push(info(index, &h, summary, offset, ctx.cursor() - offset));
        if take {
            extracted = Some(got);
        }
    }
    let listing = Listing {
        version: format!("{:02x}", header.version),
        vendor: STANDARD.encode(&header.vendor),
        user: STANDARD.encode(&header.user),
        header: Some(header),
        sections,
    };
    Ok((listing, extracted))
}

fn read_sizes<'c>(ctx: FileContext<'c>, h: &SectionHeader, file_len: u64) -> scda::Result<(FileContext<'c>, Vec<u64>)> {
    // Every size is a 32-byte entry in the file; a larger count cannot be valid.
    if h.count > file_len / 32 {
        ctx.read_varray_sizes(None, &[h.count])?;
        return Err(implausible("size table", h.count.saturating_mul(32)));
    }
    let mut sizes = vec![0u64; h.count as usize];
    let ctx = ctx.read_varray_sizes(Some(&mut sizes), &[h.count])?;
    Ok((ctx, sizes))
}

fn info(index: usize, h: &SectionHeader, sizes: Option<SizeSummary>, offset: u64, length: u64) -> SectionInfo {
    SectionInfo {
        index,
        kind: h.kind.letter() as char,
        decoded: h.decoded,
        user: STANDARD.encode(&h.user),
        user_raw: h.user.clone(),
        count: h.count,
        size: h.size,
        sizes,
        offset,
        length,
    }
}

/// Human-readable listing.
pub fn render(listing: &Listing) -> String {
    let mut out = String::new();
    if let Some(h) = &listing.header {
        out.push_str(&format!(
            "version {}  vendor \"{}\"  user \"{}\"\n",
            listing.version,
            escape(&h.vendor),
            escape(&h.user)
        ));
    }
    for s in &listing.sections {
        let tag = if s.decoded { " (decoded)" } else { "" };
        let shape = match (s.kind, &s.sizes) {
            ('I', _) => "data 32".to_string(),
            ('B', _) => format!("E {}", s.size),
            ('A', _) => format!("N {} E {}", s.count, s.size),
            (_, Some(z)) => format!("N {} sizes total {} min {} max {}", s.count, z.total, z.min, z.max),
            (_, None) => format!("N {}", s.count),
        };
        out.push_str(&format!(
            "{:>4}  {}{}  \"{}\"  {}  offset {}  length {}\n",
            s.index,
            s.kind,
            tag,
            escape(&s.user_raw),
            shape,
            s.offset,
            s.length
        ));
    }
    let n = listing.sections.len();
    out.push_str(&format!("{n} section{}\n", if n == 1 { "" } else { "s" }));
    out
}
