//! Per-element compression convention.
//!
//! An element is turned into an 8-byte big-endian uncompressed size, the
//! byte `'z'`, and a zlib stream; that is base64 encoded in lines of 76
//! characters, each followed by a two-byte break. Compressed sections are
//! stored as two raw sections: a metadata section whose user string is a
//! magic identifying the convention, followed by the compressed data.

use crate::error::{DecodeKind, Error, FormatKind, Result};
use crate::sections::{Section, INLINE_DATA_LEN};
use crate::wire::{decode_count, encode_count, Count, LineStyle, SectionType, COUNT_ENTRY_LEN};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use flate2::write::ZlibEncoder;
use flate2::{Compression, Decompress, FlushDecompress, Status};
use std::io::Write;

/// Letter of uncompressed-size entries in wrapper metadata.
pub const UNCOMPRESSED_LETTER: u8 = b'U';
pub const MAGIC_BLOCK: &[u8] = b"B compressed scda 00";
pub const MAGIC_ARRAY_FIXED: &[u8] = b"A compressed scda 00";
pub const MAGIC_ARRAY_VAR: &[u8] = b"V compressed scda 00";
/// Base64 characters per armored line.
pub const LINE_LEN: usize = 76;
const BREAK_LEN: usize = 2;
const PREFIX_LEN: usize = 9;
const STORED_BLOCK_MAX: usize = 65535;

/// Deflate level, 0 (stored) through 9 (best).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Level(u32);

impl Level {
    pub const NONE: Level = Level(0);
    pub const DEFAULT: Level = Level(6);
    pub const BEST: Level = Level(9);

    pub fn new(level: u32) -> Result<Level> {
        if level > 9 {
            return Err(Error::range(format!("compression level {level} not in 0..=9")));
        }
        Ok(Level(level))
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

impl Default for Level {
    fn default() -> Self {
        Level::BEST
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressedElement {
    pub armored: Vec<u8>,
    pub uncompressed_size: u64,
}

/// zlib stream using stored blocks only; needs no deflate implementation.
pub fn zlib_stored(data: &[u8]) -> Vec<u8> {
    let blocks = data.len().div_ceil(STORED_BLOCK_MAX).max(1);
    let mut out = Vec::with_capacity(data.len() + 5 * blocks + 6);
    out.extend_from_slice(&[0x78, 0x01]);
    let mut chunks = data.chunks(STORED_BLOCK_MAX).peekable();
    if chunks.peek().is_none() {
        out.extend_from_slice(&[0x01, 0x00, 0x00, 0xff, 0xff]);
    }
    while let Some(chunk) = chunks.next() {
        out.push(u8::from(chunks.peek().is_none()));
        let len = chunk.len() as u16;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&(!len).to_le_bytes());
        out.extend_from_slice(chunk);
    }
    out.extend_from_slice(&adler2::adler32_slice(data).to_be_bytes());
    out
}

fn zlib_deflate(data: &[u8], level: Level) -> Vec<u8> {
    if level == Level::NONE {
        return zlib_stored(data);
    }
    let mut enc = ZlibEncoder::new(Vec::with_capacity(data.len() / 2 + 16), Compression::new(level.0));
    enc.write_all(data).expect("writing to a Vec cannot fail");
    enc.finish().expect("writing to a Vec cannot fail")
}

/// First stage: size prefix, `'z'`, zlib stream.
pub fn stage1(data: &[u8], level: Level) -> Vec<u8> {
    let mut out = Vec::with_capacity(PREFIX_LEN + data.len() / 2 + 16);
    out.extend_from_slice(&(data.len() as u64).to_be_bytes());
    out.push(b'z');
    out.extend(zlib_deflate(data, level));
    out
}

/// Base64 encode into 76-character lines, each followed by the break.
pub fn armor(bytes: &[u8], style: LineStyle) -> Vec<u8> {
    let code = STANDARD.encode(bytes);
    let lines = code.len().div_ceil(LINE_LEN);
    let mut out = Vec::with_capacity(code.len() + BREAK_LEN * lines);
    for line in code.as_bytes().chunks(LINE_LEN) {
        out.extend_from_slice(line);
        out.extend_from_slice(style.armor_break());
    }
    out
}

/// Strip line breaks by position and base64 decode.
pub fn dearmor(armored: &[u8]) -> Result<Vec<u8>> {
    let full = LINE_LEN + BREAK_LEN;
    let rem = armored.len() % full;
    if armored.is_empty() || (rem != 0 && rem <= BREAK_LEN) {
        return Err(Error::decode((armored.len() - rem) as u64, DecodeKind::BadArmor));
    }
    let mut code = Vec::with_capacity(armored.len());
    for line in armored.chunks(full) {
        code.extend_from_slice(&line[..line.len() - BREAK_LEN]);
    }
    STANDARD
        .decode(&code)
        .map_err(|_| Error::decode(0, DecodeKind::BadArmor))
}

pub fn compress_element(data: &[u8], style: LineStyle, level: Level) -> CompressedElement {
    CompressedElement {
        armored: armor(&stage1(data, level), style),
        uncompressed_size: data.len() as u64,
    }
}

fn inflate_err(kind: DecodeKind) -> Error {
    Error::decode(0, kind)
}

/// Undo the first stage, checking marker, checksum, and size.
pub fn inflate_stage1(stage: &[u8]) -> Result<Vec<u8>> {
    if stage.len() < PREFIX_LEN || stage[8] != b'z' {
        return Err(inflate_err(DecodeKind::MissingMarker));
    }
    let expected = u64::from_be_bytes(stage[..8].try_into().expect("8 bytes"));
    let zlib = &stage[PREFIX_LEN..];
    if zlib.len() < 6 {
        return Err(inflate_err(DecodeKind::InflateFailed));
    }
    let (cmf, flg) = (zlib[0], zlib[1]);
    if cmf & 0x0f != 8 || cmf >> 4 > 7 || flg & 0x20 != 0 || (u16::from(cmf) << 8 | u16::from(flg)) % 31 != 0
    {
        return Err(inflate_err(DecodeKind::InflateFailed));
    }
    let input = &zlib[2..];
    let mut inflater = Decompress::new(false);
    let step = 1usize << 20;
    let mut out: Vec<u8> = Vec::with_capacity((expected as usize).saturating_add(1).min(step));
    loop {
        if out.len() == out.capacity() {
            out.reserve(out.capacity().clamp(64, step));
        }
        let (in_before, out_before) = (inflater.total_in(), out.len());
        let status = inflater
            .decompress_vec(&input[in_before as usize..], &mut out, FlushDecompress::Finish)
            .map_err(|_| inflate_err(DecodeKind::InflateFailed))?;
        if out.len() as u64 > expected {
            return Err(inflate_err(DecodeKind::SizeMismatch));
        }
        match status {
            Status::StreamEnd => break,
            _ if inflater.total_in() == in_before && out.len() == out_before => {
                return Err(inflate_err(DecodeKind::InflateFailed));
            }
            _ => {}
        }
    }
    let trailer = &input[inflater.total_in() as usize..];
    if trailer.len() != 4 {
        return Err(inflate_err(DecodeKind::InflateFailed));
    }
    let stored = u32::from_be_bytes(trailer.try_into().expect("4 bytes"));
    if stored != adler2::adler32_slice(&out) {
        return Err(inflate_err(DecodeKind::ChecksumMismatch));
    }
    if out.len() as u64 != expected {
        return Err(inflate_err(DecodeKind::SizeMismatch));
    }
    Ok(out)
}

/// Decode one armored element; errors carry offsets relative to it.
pub fn decompress_element(armored: &[u8]) -> Result<Vec<u8>> {
    inflate_stage1(&dearmor(armored)?)
}

/// Decode one element whose uncompressed size is also known from
/// the wrapper metadata.
pub fn decompress_element_sized(armored: &[u8], expected: u64) -> Result<Vec<u8>> {
    let out = decompress_element(armored)?;
    if out.len() as u64 != expected {
        return Err(inflate_err(DecodeKind::SizeMismatch));
    }
    Ok(out)
}

/// Uncompressed-size entry as stored in wrapper metadata.
pub fn encode_u_entry(value: u64, style: LineStyle) -> [u8; INLINE_DATA_LEN] {
    encode_count(UNCOMPRESSED_LETTER, Count::from(value), style)
}

/// Compress each element separately; returns the V data section.
fn compressed_elements<'a>(
    user: &[u8],
    elements: impl Iterator<Item = &'a [u8]>,
    style: LineStyle,
    level: Level,
) -> Section {
    let mut sizes = Vec::new();
    let mut data = Vec::new();
    for el in elements {
        let c = compress_element(el, style, level);
        sizes.push(c.armored.len() as u64);
        data.extend(c.armored);
    }
    Section::ArrayVar {
        user: user.to_vec(),
        sizes,
        data,
    }
}

pub fn wrap_compressed_block(
    user: &[u8],
    data: &[u8],
    style: LineStyle,
    level: Level,
) -> Result<[Section; 2]> {
    let c = compress_element(data, style, level);
    Ok([
        Section::Inline {
            user: MAGIC_BLOCK.to_vec(),
            data: encode_u_entry(data.len() as u64, style),
        },
        Section::Block {
            user: user.to_vec(),
            data: c.armored,
        },
    ])
}

pub fn wrap_compressed_array_fixed(
    user: &[u8],
    count: u64,
    elem_size: u64,
    payload: &[u8],
    style: LineStyle,
    level: Level,
) -> Result<[Section; 2]> {
    if (count as u128) * (elem_size as u128) != payload.len() as u128 {
        return Err(Error::length(format!(
            "array of {count} x {elem_size} bytes given {} payload bytes",
            payload.len()
        )));
    }
    let elements = (0..count as usize).map(|i| {
        let e = elem_size as usize;
        &payload[i * e..(i + 1) * e]
    });
    Ok([
        Section::Inline {
            user: MAGIC_ARRAY_FIXED.to_vec(),
            data: encode_u_entry(elem_size, style),
        },
        compressed_elements(user, elements, style, level),
    ])
}

pub fn wrap_compressed_array_var(
    user: &[u8],
    sizes: &[u64],
    payload: &[u8],
    style: LineStyle,
    level: Level,
) -> Result<[Section; 2]> {
    let total: u128 = sizes.iter().map(|&s| s as u128).sum();
    if total != payload.len() as u128 {
        return Err(Error::length(format!(
            "element sizes sum to {total}, payload has {} bytes",
            payload.len()
        )));
    }
    let mut meta = Vec::with_capacity(COUNT_ENTRY_LEN * sizes.len());
    for &s in sizes {
        meta.extend_from_slice(&encode_u_entry(s, style));
    }
    let mut at = 0usize;
    let elements = sizes.iter().map(|&s| {
        let el = &payload[at..at + s as usize];
        at += s as usize;
        el
    });
    let data = compressed_elements(user, elements, style, level);
    Ok([
        Section::ArrayFixed {
            user: MAGIC_ARRAY_VAR.to_vec(),
            count: sizes.len() as u64,
            elem_size: COUNT_ENTRY_LEN as u64,
            data: meta,
        },
        data,
    ])
}

/// Which logical section type a raw section announces, if its type and
/// user string match one of the three magic pairs.
pub fn detect_compression(kind: SectionType, user: &[u8]) -> Option<SectionType> {
    match (kind, user) {
        (SectionType::Inline, MAGIC_BLOCK) => Some(SectionType::Block),
        (SectionType::Inline, MAGIC_ARRAY_FIXED) => Some(SectionType::ArrayFixed),
        (SectionType::ArrayFixed, MAGIC_ARRAY_VAR) => Some(SectionType::ArrayVar),
        _ => None,
    }
}

fn nonconforming() -> Error {
    Error::format(0, FormatKind::NonconformingWrapper)
}

/// Parse a 32-byte uncompressed-size entry.
pub fn decode_u_entry(entry: &[u8]) -> Result<u64> {
    decode_count(entry, UNCOMPRESSED_LETTER)?.to_u64_at(2)
}

/// Reassemble the logical section from a wrapper pair.
pub fn unwrap_compressed(meta: &Section, data: &Section) -> Result<Section> {
    let wrapped = detect_compression(meta.kind(), meta.user()).ok_or_else(nonconforming)?;
    match (wrapped, meta, data) {
        (SectionType::Block, Section::Inline { data: m, .. }, Section::Block { user, data }) => {
            let u = decode_u_entry(m)?;
            Ok(Section::Block {
                user: user.clone(),
                data: decompress_element_sized(data, u)?,
            })
        }
        (
            SectionType::ArrayFixed,
            Section::Inline { data: m, .. },
            Section::ArrayVar { user, sizes, data },
        ) => {
            let u = decode_u_entry(m)?;
            let mut out = Vec::new();
            for el in split_elements(sizes, data)? {
                out.extend(decompress_element_sized(el, u)?);
            }
            Ok(Section::ArrayFixed {
                user: user.clone(),
                count: sizes.len() as u64,
                elem_size: u,
                data: out,
            })
        }
        (
            SectionType::ArrayVar,
            Section::ArrayFixed {
                count,
                elem_size,
                data: m,
                ..
            },
            Section::ArrayVar { user, sizes, data },
        ) => {
            if *elem_size != COUNT_ENTRY_LEN as u64 || *count != sizes.len() as u64 {
                return Err(nonconforming());
            }
            let mut out_sizes = Vec::with_capacity(sizes.len());
            let mut out = Vec::new();
            for (entry, el) in m.chunks_exact(COUNT_ENTRY_LEN).zip(split_elements(sizes, data)?) {
                let u = decode_u_entry(entry)?;
                out.extend(decompress_element_sized(el, u)?);
                out_sizes.push(u);
            }
            Ok(Section::ArrayVar {
                user: user.clone(),
                sizes: out_sizes,
                data: out,
            })
        }
        _ => Err(nonconforming()),
    }
}

fn split_elements<'a>(sizes: &[u64], data: &'a [u8]) -> Result<Vec<&'a [u8]>> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut at = 0usize;
    for &s in sizes {
        let end = at
            .checked_add(s as usize)
            .filter(|&e| e <= data.len())
            .ok_or_else(nonconforming)?;
        out.push(&data[at..end]);
        at = end;
    }
    Ok(out)
}
