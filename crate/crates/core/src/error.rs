//! Error type and the integer error codes exposed through the context API.
//!
//! Every failure belongs to one of three groups: corrupt file contents,
//! file system errors, and invalid usage (bad parameters or call order).
//! Each concrete reason has a stable integer code; `0` means no error.

use std::fmt;
use std::io;

pub type Result<T> = std::result::Result<T, Error>;

/// Structural violations of the on-disk layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(i32)]
pub enum FormatKind {
    BadMagic = 101,
    BadVersion = 102,
    BadSectionType = 103,
    MissingSeparator = 104,
    BadPadding = 105,
    BadCount = 106,
    CountTooLarge = 107,
    Truncated = 108,
    TrailingBytes = 109,
    RepeatedHeader = 110,
    NonconformingWrapper = 111,
    StyleMismatch = 112,
}

/// Failures while decoding a compressed element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(i32)]
pub enum DecodeKind {
    BadArmor = 121,
    MissingMarker = 122,
    InflateFailed = 123,
    ChecksumMismatch = 124,
    SizeMismatch = 125,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(i32)]
pub enum IoKind {
    NotFound = 201,
    PermissionDenied = 202,
    Read = 203,
    Write = 204,
    Flush = 205,
    Other = 206,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(i32)]
pub enum UsageKind {
    InvalidMode = 301,
    Length = 302,
    Range = 303,
    CollectiveMismatch = 304,
    CallSequence = 305,
    Consistency = 306,
    RootOutOfRange = 307,
    WrongMode = 308,
    Aborted = 309,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    /// Corrupt layout; `offset` is the absolute byte position when known
    /// from file context, otherwise relative to the decoded entry.
    #[error("corrupt file contents at byte {offset}: {kind}")]
    Format { offset: u64, kind: FormatKind },
    #[error("corrupt compressed data at byte {offset}: {kind}")]
    Decode { offset: u64, kind: DecodeKind },
    #[error("file system error ({kind}): {detail}")]
    Io { kind: IoKind, detail: String },
    #[error("usage error ({kind}): {detail}")]
    Usage { kind: UsageKind, detail: String },
}

impl Error {
    pub(crate) fn format(offset: u64, kind: FormatKind) -> Self {
        Error::Format { offset, kind }
    }

    pub(crate) fn decode(offset: u64, kind: DecodeKind) -> Self {
        Error::Decode { offset, kind }
    }

    pub(crate) fn usage(kind: UsageKind, detail: impl Into<String>) -> Self {
        Error::Usage {
            kind,
            detail: detail.into(),
        }
    }

    pub(crate) fn length(detail: impl Into<String>) -> Self {
        Self::usage(UsageKind::Length, detail)
    }

    pub(crate) fn range(detail: impl Into<String>) -> Self {
        Self::usage(UsageKind::Range, detail)
    }

    pub(crate) fn io(kind: IoKind, err: &io::Error) -> Self {
        let kind = match err.kind() {
            io::ErrorKind::NotFound => IoKind::NotFound,
            io::ErrorKind::PermissionDenied => IoKind::PermissionDenied,
            _ => kind,
        };
        Error::Io {
            kind,
            detail: err.to_string(),
        }
    }

    /// Shift a position-carrying error by `base` bytes.
    pub(crate) fn at(self, base: u64) -> Self {
        match self {
            Error::Format { offset, kind } => Error::Format {
                offset: offset + base,
                kind,
            },
            Error::Decode { offset, kind } => Error::Decode {
                offset: offset + base,
                kind,
            },
            other => other,
        }
    }

    pub fn code(&self) -> ErrorCode {
        ErrorCode(match self {
            Error::Format { kind, .. } => *kind as i32,
            Error::Decode { kind, .. } => *kind as i32,
            Error::Io { kind, .. } => *kind as i32,
            Error::Usage { kind, .. } => *kind as i32,
        })
    }

    /// Absolute byte offset for corrupt-contents errors.
    pub fn offset(&self) -> Option<u64> {
        match self {
            Error::Format { offset, .. } | Error::Decode { offset, .. } => Some(*offset),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorGroup {
    None,
    CorruptContents,
    FileSystem,
    Usage,
}

/// Integer error code; `ErrorCode::OK` (0) means no error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ErrorCode(pub i32);

const MESSAGES: &[(i32, &str)] = &[
    (0, "no error"),
    (101, "bad file magic"),
    (102, "unsupported format version"),
    (103, "unknown section type"),
    (104, "missing separator after entry letter"),
    (105, "invalid padding"),
    (106, "invalid count entry"),
    (107, "count exceeds representable range"),
    (108, "file ends inside a section"),
    (109, "trailing bytes after last section"),
    (110, "file header section occurs again"),
    (111, "compression wrapper does not conform to the convention"),
    (112, "line style is not consistent"),
    (121, "invalid base64 armor"),
    (122, "missing z marker"),
    (123, "inflate failed"),
    (124, "checksum mismatch"),
    (125, "size mismatch"),
    (201, "file not found"),
    (202, "permission denied"),
    (203, "read failed"),
    (204, "write failed"),
    (205, "flush or close failed"),
    (206, "file system error"),
    (301, "invalid open mode"),
    (302, "invalid length"),
    (303, "value out of range"),
    (304, "collective parameter differs between ranks"),
    (305, "invalid call sequence"),
    (306, "inconsistent partition or size arguments"),
    (307, "root rank out of range"),
    (308, "operation not allowed in this file mode"),
    (309, "communicator aborted"),
];

impl ErrorCode {
    pub const OK: ErrorCode = ErrorCode(0);

    pub fn from_result<T>(r: &Result<T>) -> ErrorCode {
        match r {
            Ok(_) => ErrorCode::OK,
            Err(e) => e.code(),
        }
    }

    /// Message for a valid code, `None` for integers that are no code.
    pub fn message(self) -> Option<&'static str> {
        MESSAGES
            .iter()
            .find(|(c, _)| *c == self.0)
            .map(|(_, m)| *m)
    }

    pub fn group(self) -> Option<ErrorGroup> {
        self.message()?;
        Some(match self.0 {
            0 => ErrorGroup::None,
            100..=199 => ErrorGroup::CorruptContents,
            200..=299 => ErrorGroup::FileSystem,
            _ => ErrorGroup::Usage,
        })
    }

    /// All codes this implementation can produce, including `OK`.
    pub fn all() -> impl Iterator<Item = ErrorCode> {
        MESSAGES.iter().map(|(c, _)| ErrorCode(*c))
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.message() {
            Some(m) => write!(f, "{} ({})", m, self.0),
            None => write!(f, "invalid error code {}", self.0),
        }
    }
}

macro_rules! kind_display {
    ($($ty:ty),*) => {$(
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(ErrorCode(*self as i32).message().unwrap_or("?"))
            }
        }
    )*};
}

kind_display!(FormatKind, DecodeKind, IoKind, UsageKind);

/// Translate an error code into a message.
///
/// Copies as much of the message as fits into `buf`, sets `len` to the
/// number of bytes written, and returns 0 for every valid code (including
/// 0 itself) or a negative value for an integer that is not a code.
pub fn ferror_string(err: i32, buf: &mut [u8], len: &mut usize) -> i32 {
    match ErrorCode(err).message() {
        Some(msg) => {
            let n = msg.len().min(buf.len());
            buf[..n].copy_from_slice(&msg.as_bytes()[..n]);
            *len = n;
            0
        }
        None => {
            *len = 0;
            -1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_error_message() {
        let mut buf = [0u8; 64];
        let mut len = 0;
        assert_eq!(ferror_string(0, &mut buf, &mut len), 0);
        assert_eq!(&buf[..len], b"no error");
    }

    #[test]
    fn truncates_to_buffer() {
        let mut buf = [0u8; 4];
        let mut len = 0;
        assert_eq!(ferror_string(124, &mut buf, &mut len), 0);
        assert_eq!(&buf[..len], b"chec");
    }

    #[test]
    fn invalid_codes_are_negative() {
        let mut buf = [0u8; 16];
        let mut len = 7;
        for bad in [-1, 1, 99, 100, 126, 400, i32::MAX] {
            assert!(ferror_string(bad, &mut buf, &mut len) < 0, "{bad}");
            assert_eq!(len, 0);
        }
    }

    #[test]
    fn kinds_map_to_codes_with_messages() {
        let errs = [
            Error::format(0, FormatKind::StyleMismatch),
            Error::decode(0, DecodeKind::SizeMismatch),
            Error::usage(UsageKind::Aborted, "x"),
            Error::Io {
                kind: IoKind::Other,
                detail: "x".into(),
            },
        ];
        for e in errs {
            assert!(e.code().message().is_some(), "{e}");
        }
        assert_eq!(ErrorCode(105).group(), Some(ErrorGroup::CorruptContents));
        assert_eq!(ErrorCode(204).group(), Some(ErrorGroup::FileSystem));
        assert_eq!(ErrorCode(305).group(), Some(ErrorGroup::Usage));
        assert_eq!(ErrorCode(0).group(), Some(ErrorGroup::None));
    }
}
