//! Serial encoders and decoders for the file header and the four data
//! section types, and a forward scanner that indexes a whole file.

use crate::error::{Error, FormatKind, IoKind, Result};
use crate::wire::{
    data_pad_length, decode_count, decode_section_header, encode_count,
    encode_section_header, pad_data, pad_fixed_into, unpad_fixed, Count, LineStyle, SectionType,
    COUNT_ENTRY_LEN, SECTION_HEADER_LEN,
};
use std::cell::RefCell;
use std::io::{self, Read, Seek, SeekFrom};

/// Length of the file header section.
pub const FILE_HEADER_LEN: usize = 128;
/// Length of an inline section and of its payload.
pub const INLINE_SECTION_LEN: usize = 96;
pub const INLINE_DATA_LEN: usize = 32;
pub const VENDOR_MAX: usize = 20;
pub const VERSION_MIN: u8 = 0xa0;
/// Format identifier rendered into the magic as hex.
pub const FORMAT_ID: u8 = 0xda;
/// Byte following the 7-character magic inside its 8-byte entry.
pub const MAGIC_FILL: u8 = b' ';

/// Letter of element count entries.
pub const COUNT_LETTER: u8 = b'N';
/// Letter of byte size entries (block size, element sizes).
pub const SIZE_LETTER: u8 = b'E';

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileHeader {
    pub version: u8,
    pub vendor: Vec<u8>,
    pub user: Vec<u8>,
}

impl FileHeader {
    pub fn new(vendor: impl Into<Vec<u8>>, user: impl Into<Vec<u8>>) -> Self {
        FileHeader {
            version: VERSION_MIN,
            vendor: vendor.into(),
            user: user.into(),
        }
    }
}

/// The 8-byte magic entry for a format version.
pub fn magic(version: u8) -> [u8; 8] {
    let text = format!("sc{FORMAT_ID:02x}t{version:02x}");
    let mut out = [MAGIC_FILL; 8];
    out[..7].copy_from_slice(text.as_bytes());
    out
}

pub fn encode_file_header(h: &FileHeader, style: LineStyle) -> Result<[u8; FILE_HEADER_LEN]> {
    if h.version < VERSION_MIN {
        return Err(Error::range(format!(
            "version {:#x} below {VERSION_MIN:#x}",
            h.version
        )));
    }
    if h.vendor.len() > VENDOR_MAX {
        return Err(Error::length(format!(
            "vendor string of {} bytes exceeds {VENDOR_MAX}",
            h.vendor.len()
        )));
    }
    let mut out = Vec::with_capacity(FILE_HEADER_LEN);
    out.extend_from_slice(&magic(h.version));
    pad_fixed_into(&mut out, &h.vendor, 24, style)?;
    out.extend_from_slice(&encode_section_header(SectionType::FileHeader, &h.user, style)?);
    out.extend_from_slice(&pad_data(b"", style));
    Ok(out.try_into().expect("file header is 128 bytes"))
}

fn hex_byte(s: &[u8]) -> Option<u8> {
    let text = std::str::from_utf8(s).ok()?;
    if !text.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
        return None;
    }
    u8::from_str_radix(text, 16).ok()
}

pub fn decode_file_header(bytes: &[u8]) -> Result<FileHeader> {
    if bytes.len() < FILE_HEADER_LEN {
        return Err(Error::format(bytes.len() as u64, FormatKind::Truncated));
    }
    let expect_id = format!("sc{FORMAT_ID:02x}t");
    if let Some(i) = bytes[..5]
        .iter()
        .zip(expect_id.as_bytes())
        .position(|(a, b)| a != b)
    {
        return Err(Error::format(i as u64, FormatKind::BadMagic));
    }
    let version = hex_byte(&bytes[5..7]).ok_or_else(|| Error::format(5, FormatKind::BadMagic))?;
    if version < VERSION_MIN {
        return Err(Error::format(5, FormatKind::BadVersion));
    }
    if bytes[7] != MAGIC_FILL {
        return Err(Error::format(7, FormatKind::BadMagic));
    }
    let vendor = unpad_fixed(&bytes[8..32]).map_err(|e| e.at(8))?.to_vec();
    let (kind, user) = decode_section_header(&bytes[32..96]).map_err(|e| e.at(32))?;
    if kind != SectionType::FileHeader {
        return Err(Error::format(32, FormatKind::BadSectionType));
    }
    Ok(FileHeader {
        version,
        vendor,
        user,
    })
}

/// A data section with its complete contents, as handed to the encoders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Section {
    Inline {
        user: Vec<u8>,
        data: [u8; INLINE_DATA_LEN],
    },
    Block {
        user: Vec<u8>,
        data: Vec<u8>,
    },
    ArrayFixed {
        user: Vec<u8>,
        count: u64,
        elem_size: u64,
        data: Vec<u8>,
    },
    ArrayVar {
        user: Vec<u8>,
        sizes: Vec<u64>,
        data: Vec<u8>,
    },
}

impl Section {
    pub fn kind(&self) -> SectionType {
        match self {
            Section::Inline { .. } => SectionType::Inline,
            Section::Block { .. } => SectionType::Block,
            Section::ArrayFixed { .. } => SectionType::ArrayFixed,
            Section::ArrayVar { .. } => SectionType::ArrayVar,
        }
    }

    pub fn user(&self) -> &[u8] {
        match self {
            Section::Inline { user, .. }
            | Section::Block { user, .. }
            | Section::ArrayFixed { user, .. }
            | Section::ArrayVar { user, .. } => user,
        }
    }

    pub fn data(&self) -> &[u8] {
        match self {
            Section::Inline { data, .. } => data,
            Section::Block { data, .. }
            | Section::ArrayFixed { data, .. }
            | Section::ArrayVar { data, .. } => data,
        }
    }

    pub fn encode(&self, style: LineStyle) -> Result<Vec<u8>> {
        match self {
            Section::Inline { user, data } => Ok(encode_inline(user, data, style)?.to_vec()),
            Section::Block { user, data } => encode_block(user, data, style),
            Section::ArrayFixed {
                user,
                count,
                elem_size,
                data,
            } => encode_array_fixed(user, Count::from(*count), Count::from(*elem_size), data, style),
            Section::ArrayVar { user, sizes, data } => {
                let sizes: Vec<Count> = sizes.iter().map(|&s| Count::from(s)).collect();
                encode_array_var(user, &sizes, data, style)
            }
        }
    }
}

pub fn encode_inline(user: &[u8], payload: &[u8], style: LineStyle) -> Result<[u8; 96]> {
    if payload.len() != INLINE_DATA_LEN {
        return Err(Error::length(format!(
            "inline data must be 32 bytes, got {}",
            payload.len()
        )));
    }
    let mut out = Vec::with_capacity(INLINE_SECTION_LEN);
    out.extend_from_slice(&encode_section_header(SectionType::Inline, user, style)?);
    out.extend_from_slice(payload);
    Ok(out.try_into().expect("inline section is 96 bytes"))
}

pub fn encode_block(user: &[u8], payload: &[u8], style: LineStyle) -> Result<Vec<u8>> {
    let size = Count::new(payload.len() as u128)?;
    let mut out = Vec::with_capacity(96 + payload.len() + 38);
    out.extend_from_slice(&encode_section_header(SectionType::Block, user, style)?);
    out.extend_from_slice(&encode_count(SIZE_LETTER, size, style));
    out.extend_from_slice(payload);
    out.extend_from_slice(&pad_data(payload, style));
    Ok(out)
}

pub fn encode_array_fixed(
    user: &[u8],
    count: Count,
    elem_size: Count,
    payload: &[u8],
    style: LineStyle,
) -> Result<Vec<u8>> {
    let total = count
        .get()
        .checked_mul(elem_size.get())
        .ok_or_else(|| Error::range("array byte size overflows"))?;
    if total != payload.len() as u128 {
        return Err(Error::length(format!(
            "array of {count} x {elem_size} bytes given {} payload bytes",
            payload.len()
        )));
    }
    let mut out = Vec::with_capacity(128 + payload.len() + 38);
    out.extend_from_slice(&encode_section_header(SectionType::ArrayFixed, user, style)?);
    out.extend_from_slice(&encode_count(COUNT_LETTER, count, style));
    out.extend_from_slice(&encode_count(SIZE_LETTER, elem_size, style));
    out.extend_from_slice(payload);
    out.extend_from_slice(&pad_data(payload, style));
    Ok(out)
}

pub fn encode_array_var(
    user: &[u8],
    sizes: &[Count],
    payload: &[u8],
    style: LineStyle,
) -> Result<Vec<u8>> {
    let count = Count::new(sizes.len() as u128)?;
    let total = sizes
        .iter()
        .try_fold(0u128, |acc, s| acc.checked_add(s.get()))
        .ok_or_else(|| Error::range("element sizes overflow"))?;
    if total != payload.len() as u128 {
        return Err(Error::length(format!(
            "element sizes sum to {total}, payload has {} bytes",
            payload.len()
        )));
    }
    let mut out = Vec::with_capacity(96 + 32 * sizes.len() + payload.len() + 38);
    out.extend_from_slice(&encode_section_header(SectionType::ArrayVar, user, style)?);
    out.extend_from_slice(&encode_count(COUNT_LETTER, count, style));
    for &s in sizes {
        out.extend_from_slice(&encode_count(SIZE_LETTER, s, style));
    }
    out.extend_from_slice(payload);
    out.extend_from_slice(&pad_data(payload, style));
    Ok(out)
}

/// Encode a header followed by sections into a complete file image.
pub fn encode_file(header: &FileHeader, sections: &[Section], style: LineStyle) -> Result<Vec<u8>> {
    let mut out = encode_file_header(header, style)?.to_vec();
    for s in sections {
        out.extend(s.encode(style)?);
    }
    Ok(out)
}

/// Random-access byte source; files, memory and seekable streams.
pub trait ByteSource {
    fn len(&self) -> u64;
    fn read_exact_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ByteSource for [u8] {
    fn len(&self) -> u64 {
        <[u8]>::len(self) as u64
    }

    fn read_exact_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()> {
        let start = usize::try_from(offset).map_err(|_| io::ErrorKind::UnexpectedEof)?;
        let src = start
            .checked_add(buf.len())
            .and_then(|end| self.get(start..end))
            .ok_or(io::ErrorKind::UnexpectedEof)?;
        buf.copy_from_slice(src);
        Ok(())
    }
}

impl ByteSource for Vec<u8> {
    fn len(&self) -> u64 {
        self.as_slice().len() as u64
    }

    fn read_exact_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()> {
        self.as_slice().read_exact_at(offset, buf)
    }
}

/// Adapts any `Read + Seek` stream.
pub struct SeekSource<R> {
    inner: RefCell<R>,
    len: u64,
}

impl<R: Read + Seek> SeekSource<R> {
    pub fn new(mut inner: R) -> io::Result<Self> {
        let len = inner.seek(SeekFrom::End(0))?;
        Ok(SeekSource {
            inner: RefCell::new(inner),
            len,
        })
    }
}

impl<R: Read + Seek> ByteSource for SeekSource<R> {
    fn len(&self) -> u64 {
        self.len
    }

    fn read_exact_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()> {
        let mut r = self.inner.borrow_mut();
        r.seek(SeekFrom::Start(offset))?;
        r.read_exact(buf)
    }
}

/// Read `len` bytes at `offset`, reporting a truncated file as corrupt.
pub(crate) fn read_range<S: ByteSource + ?Sized>(src: &S, offset: u64, len: u64) -> Result<Vec<u8>> {
    let end = offset.checked_add(len);
    if end.is_none_or(|e| e > src.len()) {
        return Err(Error::format(offset, FormatKind::Truncated));
    }
    let mut buf = vec![0u8; usize::try_from(len).map_err(|_| Error::format(offset, FormatKind::Truncated))?];
    src.read_exact_at(offset, &mut buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::format(offset, FormatKind::Truncated),
        _ => Error::io(IoKind::Read, &e),
    })?;
    Ok(buf)
}

pub(crate) fn read_count_at<S: ByteSource + ?Sized>(src: &S, offset: u64, letter: u8) -> Result<Count> {
    let entry = read_range(src, offset, COUNT_ENTRY_LEN as u64)?;
    decode_count(&entry, letter).map_err(|e| e.at(offset))
}

/// Everything known about a section after reading its header entries,
/// before the size table of a `V` section is summed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectionMeta {
    pub kind: SectionType,
    pub user: Vec<u8>,
    pub offset: u64,
    /// Element count (0 for inline and block sections).
    pub count: Count,
    /// Block size or fixed element size; 32 for inline, 0 for `V`.
    pub elem_size: Count,
    /// Start of the `E_i` entries of a `V` section.
    pub table_offset: u64,
    pub data_offset: u64,
}

impl SectionMeta {
    /// Payload length when it follows from the header alone.
    pub fn fixed_data_len(&self) -> Option<u128> {
        match self.kind {
            SectionType::Inline => Some(INLINE_DATA_LEN as u128),
            SectionType::Block => Some(self.elem_size.get()),
            SectionType::ArrayFixed => self.count.get().checked_mul(self.elem_size.get()),
            _ => None,
        }
    }
}

fn to_offset(base: u64, add: u128, at: u64) -> Result<u64> {
    u64::try_from(add)
        .ok()
        .and_then(|a| base.checked_add(a))
        .ok_or_else(|| Error::format(at, FormatKind::Truncated))
}

/// Parse the header entries of the data section starting at `offset`.
pub fn parse_section_meta<S: ByteSource + ?Sized>(src: &S, offset: u64) -> Result<SectionMeta> {
    let head = read_range(src, offset, SECTION_HEADER_LEN as u64)?;
    if head.starts_with(b"scdat") {
        return Err(Error::format(offset, FormatKind::RepeatedHeader));
    }
    let (kind, user) = decode_section_header(&head).map_err(|e| e.at(offset))?;
    let after = offset + SECTION_HEADER_LEN as u64;
    let entry = COUNT_ENTRY_LEN as u64;
    let (count, elem_size, table_offset, data_offset) = match kind {
        SectionType::FileHeader => {
            return Err(Error::format(offset, FormatKind::RepeatedHeader));
        }
        SectionType::Inline => (Count::ZERO, Count::from(INLINE_DATA_LEN), after, after),
        SectionType::Block => {
            let e = read_count_at(src, after, SIZE_LETTER)?;
            (Count::ZERO, e, after + entry, after + entry)
        }
        SectionType::ArrayFixed => {
            let n = read_count_at(src, after, COUNT_LETTER)?;
            let e = read_count_at(src, after + entry, SIZE_LETTER)?;
            (n, e, after + 2 * entry, after + 2 * entry)
        }
        SectionType::ArrayVar => {
            let n = read_count_at(src, after, COUNT_LETTER)?;
            let table = after + entry;
            let data = to_offset(table, n.get() * entry as u128, after)?;
            (n, Count::ZERO, table, data)
        }
    };
    Ok(SectionMeta {
        kind,
        user,
        offset,
        count,
        elem_size,
        table_offset,
        data_offset,
    })
}

/// A parsed section: metadata plus the byte range of its payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectionRecord {
    pub kind: SectionType,
    pub user: Vec<u8>,
    pub count: Count,
    pub elem_size: Count,
    /// Element sizes of a `V` section, empty otherwise.
    pub sizes: Vec<Count>,
    pub file_offset: u64,
    /// Encoded length including padding.
    pub file_length: u64,
    pub data_offset: u64,
    pub data_len: u64,
}

impl SectionRecord {
    pub fn end(&self) -> u64 {
        self.file_offset + self.file_length
    }

    pub fn read_payload<S: ByteSource + ?Sized>(&self, src: &S) -> Result<Vec<u8>> {
        read_range(src, self.data_offset, self.data_len)
    }

    /// Offset and length of the data padding (none for inline sections).
    pub fn padding_range(&self) -> Option<(u64, u64)> {
        if self.kind == SectionType::Inline {
            return None;
        }
        let start = self.data_offset + self.data_len;
        Some((start, self.end() - start))
    }
}

/// Parse the section at `offset`, including a `V` size table, and
/// verify that its padded payload lies within the source.
pub fn parse_next_section<S: ByteSource + ?Sized>(src: &S, offset: u64) -> Result<SectionRecord> {
    let meta = parse_section_meta(src, offset)?;
    let mut sizes = Vec::new();
    let data_len = match meta.fixed_data_len() {
        Some(n) => n,
        None if meta.kind == SectionType::ArrayVar => {
            let n = meta.count.to_u64_at(offset + 64)?;
            let table_len = meta.data_offset - meta.table_offset;
            if meta.data_offset > src.len() {
                return Err(Error::format(meta.table_offset, FormatKind::Truncated));
            }
            let table = read_range(src, meta.table_offset, table_len)?;
            sizes.reserve(n as usize);
            let mut total = 0u128;
            for (i, entry) in table.chunks_exact(COUNT_ENTRY_LEN).enumerate() {
                let at = meta.table_offset + (i * COUNT_ENTRY_LEN) as u64;
                let s = decode_count(entry, SIZE_LETTER).map_err(|e| e.at(at))?;
                total += s.get();
                sizes.push(s);
            }
            total
        }
        None => return Err(Error::format(offset + 64, FormatKind::CountTooLarge)),
    };
    let pad = if meta.kind == SectionType::Inline {
        0
    } else {
        data_pad_length(data_len)
    };
    let data_end = to_offset(meta.data_offset, data_len, meta.data_offset)?;
    let end = to_offset(data_end, pad as u128, data_end)?;
    if data_end > src.len() {
        return Err(Error::format(meta.data_offset, FormatKind::Truncated));
    }
    if end > src.len() {
        return Err(Error::format(data_end, FormatKind::Truncated));
    }
    Ok(SectionRecord {
        kind: meta.kind,
        user: meta.user,
        count: meta.count,
        elem_size: meta.elem_size,
        sizes,
        file_offset: offset,
        file_length: end - offset,
        data_offset: meta.data_offset,
        data_len: data_end - meta.data_offset,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileIndex {
    pub header: FileHeader,
    pub sections: Vec<SectionRecord>,
}

/// Scan a complete file. Trailing bytes after the last section are an error.
pub fn index_file<S: ByteSource + ?Sized>(src: &S) -> Result<FileIndex> {
    let head = read_range(src, 0, FILE_HEADER_LEN as u64).map_err(|e| match e {
        Error::Format { .. } => Error::format(src.len(), FormatKind::Truncated),
        other => other,
    })?;
    let header = decode_file_header(&head)?;
    let mut sections = Vec::new();
    let mut at = FILE_HEADER_LEN as u64;
    while at < src.len() {
        if src.len() - at < SECTION_HEADER_LEN as u64 {
            return Err(Error::format(at, FormatKind::TrailingBytes));
        }
        let rec = parse_next_section(src, at)?;
        at = rec.end();
        sections.push(rec);
    }
    Ok(FileIndex { header, sections })
}
