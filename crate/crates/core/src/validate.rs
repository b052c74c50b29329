//! Whole-file validation.
//!
//! The lenient pass is the structural scan also used for indexing. The
//! strict pass additionally requires one line style throughout, exact
//! padding bytes, and compression wrappers that decode completely.

use crate::compress::{decode_u_entry, decompress_element_sized, detect_compression};
use crate::error::{Error, FormatKind, Result};
use crate::sections::{
    index_file, read_range, ByteSource, FileIndex, SectionRecord, FILE_HEADER_LEN,
};
use crate::wire::{
    data_pad_matches, fixed_pad_style, LineStyle, SectionType, COUNT_ENTRY_LEN, SECTION_HEADER_LEN,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub index: Option<FileIndex>,
    /// Line style of the file header, when it could be determined.
    pub style: Option<LineStyle>,
    pub warnings: Vec<String>,
    /// First violation found; carries its absolute offset.
    pub violation: Option<Error>,
}

impl Report {
    pub fn is_valid(&self) -> bool {
        self.violation.is_none()
    }
}

pub fn validate<S: ByteSource + ?Sized>(src: &S, strict: bool) -> Report {
    let mut report = Report {
        index: None,
        style: None,
        warnings: Vec::new(),
        violation: None,
    };
    let index = match index_file(src) {
        Ok(i) => i,
        Err(e) => {
            report.violation = Some(e);
            return report;
        }
    };
    if index.header.version > crate::sections::VERSION_MIN {
        report.warnings.push(format!(
            "format version {:02x} is newer than {:02x}",
            index.header.version,
            crate::sections::VERSION_MIN
        ));
    }
    if strict {
        report.violation = check_strict(src, &index, &mut report.style).err();
    } else if let Ok(head) = read_range(src, 8, 24) {
        report.style = fixed_pad_style(&head);
    }
    report.index = Some(index);
    report
}

fn style_mismatch(at: u64) -> Error {
    Error::format(at, FormatKind::StyleMismatch)
}

/// Check that the fixed padding ending at `end` uses `style`.
fn check_q<S: ByteSource + ?Sized>(src: &S, end: u64, style: LineStyle) -> Result<()> {
    let q = read_range(src, end - 2, 2)?;
    if q != style.fixed_terminator() {
        return Err(style_mismatch(end - 2));
    }
    Ok(())
}

fn check_pad<S: ByteSource + ?Sized>(src: &S, rec: &SectionRecord, style: LineStyle) -> Result<()> {
    let Some((start, len)) = rec.padding_range() else {
        return Ok(());
    };
    let padding = read_range(src, start, len)?;
    let last = if rec.data_len > 0 {
        Some(read_range(src, start - 1, 1)?[0])
    } else {
        None
    };
    if !data_pad_matches(rec.data_len as u128, last, &padding, style) {
        let other = match style {
            LineStyle::Unix => LineStyle::Mime,
            LineStyle::Mime => LineStyle::Unix,
        };
        let kind = if data_pad_matches(rec.data_len as u128, last, &padding, other) {
            FormatKind::StyleMismatch
        } else {
            FormatKind::BadPadding
        };
        return Err(Error::format(start, kind));
    }
    Ok(())
}

/// Every armor line break inside `data` must match `style`.
fn check_armor_breaks(data: &[u8], base: u64, style: LineStyle) -> Result<()> {
    let line = crate::compress::LINE_LEN + 2;
    for (i, chunk) in data.chunks(line).enumerate() {
        if chunk.len() >= 2 && &chunk[chunk.len() - 2..] != style.armor_break() {
            return Err(style_mismatch(base + (i * line + chunk.len() - 2) as u64));
        }
    }
    Ok(())
}

fn check_wrapper<S: ByteSource + ?Sized>(
    src: &S,
    meta: &SectionRecord,
    data: Option<&SectionRecord>,
    style: LineStyle,
) -> Result<()> {
    let nonconforming = |at| Error::format(at, FormatKind::NonconformingWrapper);
    let data = data.ok_or_else(|| nonconforming(meta.end()))?;
    let wrapped = detect_compression(meta.kind, &meta.user).ok_or_else(|| nonconforming(meta.file_offset))?;
    let expected_data = match wrapped {
        SectionType::Block => SectionType::Block,
        _ => SectionType::ArrayVar,
    };
    if data.kind != expected_data {
        return Err(nonconforming(data.file_offset));
    }
    let u_entries = match meta.kind {
        SectionType::ArrayFixed => {
            if meta.elem_size.get() != COUNT_ENTRY_LEN as u128 {
                return Err(nonconforming(meta.file_offset + 96));
            }
            if meta.count.get() != data.sizes.len() as u128 {
                return Err(nonconforming(data.file_offset + 64));
            }
            data.sizes.len()
        }
        _ => 1,
    };
    let mut uncompressed = Vec::with_capacity(u_entries);
    for i in 0..u_entries as u64 {
        let at = meta.data_offset + i * COUNT_ENTRY_LEN as u64;
        let entry = read_range(src, at, COUNT_ENTRY_LEN as u64)?;
        uncompressed.push(decode_u_entry(&entry).map_err(|e| e.at(at))?);
        check_q(src, at + COUNT_ENTRY_LEN as u64, style)?;
    }
    let stored: Vec<u64> = match data.kind {
        SectionType::Block => vec![data.data_len],
        _ => data
            .sizes
            .iter()
            .enumerate()
            .map(|(i, s)| s.to_u64_at(data.file_offset + 96 + 32 * i as u64))
            .collect::<Result<_>>()?,
    };
    let mut at = data.data_offset;
    for (i, &s) in stored.iter().enumerate() {
        let u = uncompressed[if wrapped == SectionType::ArrayVar { i } else { 0 }];
        let el = read_range(src, at, s)?;
        decompress_element_sized(&el, u).map_err(|e| e.at(at))?;
        check_armor_breaks(&el, at, style)?;
        at += s;
    }
    Ok(())
}

fn check_strict<S: ByteSource + ?Sized>(src: &S, index: &FileIndex, style_out: &mut Option<LineStyle>) -> Result<()> {
    let vendor = read_range(src, 8, 24)?;
    let style = fixed_pad_style(&vendor).ok_or_else(|| Error::format(30, FormatKind::BadPadding))?;
    *style_out = Some(style);
    check_q(src, 32 + SECTION_HEADER_LEN as u64, style)?;
    let f_pad = read_range(src, 96, 32)?;
    if !data_pad_matches(0, None, &f_pad, style) {
        return Err(Error::format(96, FormatKind::BadPadding));
    }
    debug_assert_eq!(FILE_HEADER_LEN, 128);

    for (i, rec) in index.sections.iter().enumerate() {
        let head_end = rec.file_offset + SECTION_HEADER_LEN as u64;
        check_q(src, head_end, style)?;
        let entries = match rec.kind {
            SectionType::Block => 1,
            SectionType::ArrayFixed => 2,
            SectionType::ArrayVar => 1 + rec.sizes.len() as u64,
            _ => 0,
        };
        for k in 1..=entries {
            check_q(src, head_end + k * COUNT_ENTRY_LEN as u64, style)?;
        }
        check_pad(src, rec, style)?;
        if detect_compression(rec.kind, &rec.user).is_some() {
            check_wrapper(src, rec, index.sections.get(i + 1), style)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::{wrap_compressed_block, Level};
    use crate::sections::{encode_file, FileHeader, Section};

    fn sample(style: LineStyle) -> Vec<u8> {
        let mut sections = vec![Section::Block {
            user: b"b".to_vec(),
            data: b"hello\n".to_vec(),
        }];
        sections.extend(wrap_compressed_block(b"z", &b"abc".repeat(40), style, Level::BEST).unwrap());
        sections.push(Section::ArrayVar {
            user: b"v".to_vec(),
            sizes: vec![1, 0, 2],
            data: b"xyz".to_vec(),
        });
        encode_file(&FileHeader::new(&b"t"[..], &b""[..]), &sections, style).unwrap()
    }

    #[test]
    fn clean_files_pass_strict() {
        for style in [LineStyle::Unix, LineStyle::Mime] {
            let r = validate(&sample(style)[..], true);
            assert!(r.is_valid(), "{:?}", r.violation);
            assert_eq!(r.style, Some(style));
            assert_eq!(r.index.unwrap().sections.len(), 4);
        }
    }

    #[test]
    fn trailing_byte_reported_at_end() {
        let mut f = sample(LineStyle::Unix);
        let len = f.len() as u64;
        f.push(b'x');
        let r = validate(&f[..], false);
        assert_eq!(r.violation, Some(Error::format(len, FormatKind::TrailingBytes)));
    }

    #[test]
    fn mixed_style_rejected_only_when_strict() {
        let unix = sample(LineStyle::Unix);
        let mut mixed = unix.clone();
        // q of the first section header.
        mixed[128 + 62..128 + 64].copy_from_slice(b"\r\n");
        assert!(validate(&mixed[..], false).is_valid());
        let r = validate(&mixed[..], true);
        assert_eq!(r.violation, Some(Error::format(128 + 62, FormatKind::StyleMismatch)));
    }

    #[test]
    fn padding_bytes_checked_when_strict() {
        let mut f = sample(LineStyle::Unix);
        // Block payload "hello\n" ends at 128 + 96 + 6; its padding follows.
        f[128 + 96 + 6 + 3] = b'#';
        assert!(validate(&f[..], false).is_valid());
        let r = validate(&f[..], true);
        assert_eq!(r.violation, Some(Error::format(128 + 96 + 6, FormatKind::BadPadding)));
    }

    #[test]
    fn broken_wrapper_found() {
        let mut f = sample(LineStyle::Unix);
        let idx = index_file(&f[..]).unwrap();
        let data = &idx.sections[2];
        f[data.data_offset as usize + 3] ^= 0x01;
        assert!(validate(&f[..], false).is_valid());
        let err = validate(&f[..], true).violation.unwrap();
        assert_eq!(err.code().group(), Some(crate::ErrorGroup::CorruptContents));
        assert_eq!(err.offset(), Some(data.data_offset));
    }

    #[test]
    fn newer_version_warns() {
        let mut f = sample(LineStyle::Unix);
        f[5..7].copy_from_slice(b"a1");
        let r = validate(&f[..], true);
        assert!(r.is_valid());
        assert_eq!(r.warnings.len(), 1);
    }
}
