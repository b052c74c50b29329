//! Padding rules and the fixed-width entries every section is built from.
//!
//! Two paddings exist. Strings and counts are right-padded with `' '`,
//! dashes and a two-byte terminator `q` to a fixed width `d`, so the
//! original length can be recovered by scanning from the right. Data bytes
//! are padded with 7 to 38 bytes (mostly `'='`) up to the next multiple of
//! 32; their count follows from the data length, so the padding contents
//! are ignored on reading.

use crate::error::{Error, FormatKind, Result};
use std::fmt;

/// Alignment of every entry and of padded data.
pub const ALIGN: usize = 32;
/// Width of a count entry.
pub const COUNT_ENTRY_LEN: usize = 32;
/// Width of the section type + user string entry.
pub const SECTION_HEADER_LEN: usize = 64;
/// Maximum user string length.
pub const USER_MAX: usize = 58;
/// Maximum decimal digits of a count.
pub const COUNT_DIGITS_MAX: usize = 26;

const MIN_DATA_PAD: usize = 7;

/// Line break dialect used when writing padding and armored data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LineStyle {
    #[default]
    Unix,
    Mime,
}

impl LineStyle {
    /// Last two bytes of a fixed padding.
    pub fn fixed_terminator(self) -> &'static [u8; 2] {
        match self {
            LineStyle::Unix => b"-\n",
            LineStyle::Mime => b"\r\n",
        }
    }

    /// Break bytes after each line of base64 armor.
    pub fn armor_break(self) -> &'static [u8; 2] {
        match self {
            LineStyle::Unix => b"=\n",
            LineStyle::Mime => b"\r\n",
        }
    }

    fn data_pad_parts(self, ends_in_newline: bool) -> (&'static [u8], usize, &'static [u8]) {
        let lead: &'static [u8] = match (ends_in_newline, self) {
            (true, _) => b"==",
            (false, LineStyle::Unix) => b"\n=",
            (false, LineStyle::Mime) => b"\r\n",
        };
        match self {
            LineStyle::Unix => (lead, 4, b"\n\n"),
            LineStyle::Mime => (lead, 6, b"\r\n\r\n"),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LineStyle::Unix => "unix",
            LineStyle::Mime => "mime",
        }
    }
}

impl std::str::FromStr for LineStyle {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "unix" => Ok(LineStyle::Unix),
            "mime" => Ok(LineStyle::Mime),
            other => Err(format!("unknown line style `{other}` (expected unix or mime)")),
        }
    }
}

/// A count of elements or bytes, at most 26 decimal digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Count(u128);

impl Count {
    pub const MAX: Count = Count(99_999_999_999_999_999_999_999_999);
    pub const ZERO: Count = Count(0);

    pub fn new(value: u128) -> Result<Count> {
        if value > Self::MAX.0 {
            return Err(Error::range(format!(
                "count {value} exceeds {COUNT_DIGITS_MAX} decimal digits"
            )));
        }
        Ok(Count(value))
    }

    pub fn get(self) -> u128 {
        self.0
    }

    /// The value as `u64`, failing with `CountTooLarge` at `offset`.
    pub fn to_u64_at(self, offset: u64) -> Result<u64> {
        u64::try_from(self.0).map_err(|_| Error::format(offset, FormatKind::CountTooLarge))
    }
}

impl From<u64> for Count {
    fn from(v: u64) -> Self {
        Count(v as u128)
    }
}

impl From<usize> for Count {
    fn from(v: usize) -> Self {
        Count(v as u128)
    }
}

impl fmt::Display for Count {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Section type letters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SectionType {
    FileHeader,
    Inline,
    Block,
    ArrayFixed,
    ArrayVar,
}

impl SectionType {
    pub fn letter(self) -> u8 {
        match self {
            SectionType::FileHeader => b'F',
            SectionType::Inline => b'I',
            SectionType::Block => b'B',
            SectionType::ArrayFixed => b'A',
            SectionType::ArrayVar => b'V',
        }
    }

    pub fn from_letter(b: u8) -> Option<SectionType> {
        Some(match b {
            b'F' => SectionType::FileHeader,
            b'I' => SectionType::Inline,
            b'B' => SectionType::Block,
            b'A' => SectionType::ArrayFixed,
            b'V' => SectionType::ArrayVar,
            _ => return None,
        })
    }
}

impl fmt::Display for SectionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter() as char)
    }
}

/// Right-pad `data` to exactly `d` bytes: `' '`, `p - 3` dashes, `q`.
pub fn pad_fixed(data: &[u8], d: usize, style: LineStyle) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(d);
    pad_fixed_into(&mut out, data, d, style)?;
    Ok(out)
}

pub(crate) fn pad_fixed_into(
    out: &mut Vec<u8>,
    data: &[u8],
    d: usize,
    style: LineStyle,
) -> Result<()> {
    if d < 4 || data.len() > d - 4 {
        return Err(Error::length(format!(
            "{} bytes do not fit a {d}-byte padded entry",
            data.len()
        )));
    }
    let p = d - data.len();
    out.extend_from_slice(data);
    out.push(b' ');
    out.resize(out.len() + p - 3, b'-');
    out.extend_from_slice(style.fixed_terminator());
    Ok(())
}

/// Recover the data from a fixed-padded entry. The last two bytes are
/// ignored; offsets in errors are relative to the entry.
pub fn unpad_fixed(padded: &[u8]) -> Result<&[u8]> {
    let d = padded.len();
    if d < 4 {
        return Err(Error::format(0, FormatKind::BadPadding));
    }
    let body = &padded[..d - 2];
    let dashes = body.iter().rev().take_while(|&&b| b == b'-').count();
    if dashes == 0 {
        return Err(Error::format((d - 3) as u64, FormatKind::BadPadding));
    }
    let space_at = body.len() - dashes;
    if space_at == 0 {
        return Err(Error::format(0, FormatKind::BadPadding));
    }
    let n = space_at - 1;
    if body[n] != b' ' {
        return Err(Error::format(n as u64, FormatKind::BadPadding));
    }
    Ok(&padded[..n])
}

/// Style whose terminator matches the last two bytes, if any.
pub fn fixed_pad_style(padded: &[u8]) -> Option<LineStyle> {
    let q = padded.get(padded.len().checked_sub(2)?..)?;
    [LineStyle::Unix, LineStyle::Mime]
        .into_iter()
        .find(|s| q == s.fixed_terminator())
}

/// Number of data padding bytes after `n` data bytes: the unique value in
/// `[7, 38]` that makes `n + p` a multiple of 32.
pub fn data_pad_length(n: u128) -> usize {
    let rem = (n % ALIGN as u128) as usize;
    let mut p = ALIGN - rem;
    if p < MIN_DATA_PAD {
        p += ALIGN;
    }
    p
}

/// Data padding for `data`.
pub fn pad_data(data: &[u8], style: LineStyle) -> Vec<u8> {
    pad_data_for(data.len() as u128, data.last().copied(), style)
}

/// Data padding given only the data length and its last byte; this is
/// all a writer needs when the data itself is distributed.
pub fn pad_data_for(n: u128, last: Option<u8>, style: LineStyle) -> Vec<u8> {
    let p = data_pad_length(n);
    let ends_nl = n > 0 && last == Some(b'\n');
    let (lead, fixed, tail) = style.data_pad_parts(ends_nl);
    let mut out = Vec::with_capacity(p);
    out.extend_from_slice(lead);
    out.resize(lead.len() + p - fixed, b'=');
    out.extend_from_slice(tail);
    out
}

/// Exact data padding check used by strict validation.
pub fn data_pad_matches(n: u128, last: Option<u8>, padding: &[u8], style: LineStyle) -> bool {
    padding == pad_data_for(n, last, style).as_slice()
}

/// `letter`, a space, and the decimal value padded to 30 bytes.
pub fn encode_count(letter: u8, value: Count, style: LineStyle) -> [u8; COUNT_ENTRY_LEN] {
    let mut out = Vec::with_capacity(COUNT_ENTRY_LEN);
    out.push(letter);
    out.push(b' ');
    // at most 26 digits, always fits 30 - 4
    pad_fixed_into(&mut out, value.0.to_string().as_bytes(), 30, style)
        .expect("count digits fit the entry");
    out.try_into().expect("count entry is 32 bytes")
}

/// Range-checked variant of [`encode_count`] for raw integers.
pub fn encode_count_u128(letter: u8, value: u128, style: LineStyle) -> Result<[u8; 32]> {
    Ok(encode_count(letter, Count::new(value)?, style))
}

/// Parse a count entry; offsets in errors are relative to the entry.
pub fn decode_count(entry: &[u8], expected_letter: u8) -> Result<Count> {
    if entry.len() != COUNT_ENTRY_LEN {
        return Err(Error::format(0, FormatKind::Truncated));
    }
    if entry[0] != expected_letter {
        return Err(Error::format(0, FormatKind::BadCount));
    }
    if entry[1] != b' ' {
        return Err(Error::format(1, FormatKind::MissingSeparator));
    }
    let digits = unpad_fixed(&entry[2..]).map_err(|e| e.at(2))?;
    if digits.is_empty() {
        return Err(Error::format(2, FormatKind::BadCount));
    }
    if let Some(i) = digits.iter().position(|b| !b.is_ascii_digit()) {
        return Err(Error::format(2 + i as u64, FormatKind::BadCount));
    }
    if digits.len() > 1 && digits[0] == b'0' {
        return Err(Error::format(2, FormatKind::BadCount));
    }
    if digits.len() > COUNT_DIGITS_MAX {
        return Err(Error::format(2, FormatKind::CountTooLarge));
    }
    let value = digits
        .iter()
        .fold(0u128, |acc, &d| acc * 10 + (d - b'0') as u128);
    Ok(Count(value))
}

/// Type letter, a space, and the user string padded to 62 bytes.
pub fn encode_section_header(
    kind: SectionType,
    user: &[u8],
    style: LineStyle,
) -> Result<[u8; SECTION_HEADER_LEN]> {
    if user.len() > USER_MAX {
        return Err(Error::length(format!(
            "user string of {} bytes exceeds {USER_MAX}",
            user.len()
        )));
    }
    let mut out = Vec::with_capacity(SECTION_HEADER_LEN);
    out.push(kind.letter());
    out.push(b' ');
    pad_fixed_into(&mut out, user, 62, style)?;
    Ok(out.try_into().expect("section header is 64 bytes"))
}

/// Parse a 64-byte section header entry into its type and user bytes.
pub fn decode_section_header(bytes: &[u8]) -> Result<(SectionType, Vec<u8>)> {
    if bytes.len() != SECTION_HEADER_LEN {
        return Err(Error::format(0, FormatKind::Truncated));
    }
    let kind = SectionType::from_letter(bytes[0])
        .ok_or_else(|| Error::format(0, FormatKind::BadSectionType))?;
    if bytes[1] != b' ' {
        return Err(Error::format(1, FormatKind::MissingSeparator));
    }
    let user = unpad_fixed(&bytes[2..]).map_err(|e| e.at(2))?;
    Ok((kind, user.to_vec()))
}
