use crate::compress::{decode_u_entry, decompress_element_sized, detect_compression};
use crate::error::{Error, FormatKind, Result, UsageKind};
use crate::partition::offsets;
use crate::sections::{
    parse_section_meta, read_range, SectionMeta, INLINE_DATA_LEN, SIZE_LETTER,
};
use crate::storage::StorageSource;
use crate::wire::{data_pad_length, SectionType, COUNT_ENTRY_LEN, SECTION_HEADER_LEN};

use super::{to_u64, Collective, ElementsMut, FileContext, Mode};

/// What a header call reports about the next section.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectionHeader {
    pub kind: SectionType,
    /// Element count; 0 for inline and block sections.
    pub count: u64,
    /// Block size or fixed element size; 0 for inline and `V` sections.
    pub size: u64,
    pub user: Vec<u8>,
    /// Whether the following data calls inflate.
    pub decoded: bool,
}

/// Where element sizes come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sizes {
    Fixed(u64),
    /// Offset of a table of 32-byte entries.
    Table(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(super) struct ArrayState {
    kind: SectionType,
    count: u64,
    size: u64,
    stored: Sizes,
    /// Uncompressed sizes when decoding, `None` for raw reads.
    logical: Option<Sizes>,
    data: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(super) struct VarrayState {
    array: ArrayState,
    counts: Vec<u64>,
    stored_local: Vec<u64>,
    logical_local: Vec<u64>,
    stored_sums: Vec<u128>,
    logical_sums: Vec<u128>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub(super) enum Pending {
    #[default]
    None,
    Inline {
        data: u64,
    },
    Block {
        data: u64,
        stored: u64,
        logical: Option<u64>,
    },
    Array(ArrayState),
    Varray(Box<VarrayState>),
}

fn nonconforming(at: u64) -> Error {
    Error::format(at, FormatKind::NonconformingWrapper)
}

fn count_u64(meta: &SectionMeta, entry: u64) -> Result<u64> {
    meta.count.to_u64_at(meta.offset + entry)
}

fn size_u64(meta: &SectionMeta, entry: u64) -> Result<u64> {
    meta.elem_size.to_u64_at(meta.offset + entry)
}

fn padded_end(data: u64, len: u128) -> Result<u64> {
    to_u64(data as u128 + len + data_pad_length(len) as u128, "section end")
}

fn sequence(what: &str) -> Error {
    Error::usage(UsageKind::CallSequence, what.to_string())
}

impl FileContext<'_> {
    fn src(&self) -> StorageSource<'_> {
        StorageSource(self.storage.as_ref())
    }

    /// Check that a section ending at `end` lies within the file.
    fn within(&self, end: u64) -> Result<u64> {
        let len = self.storage.len().map_err(|e| Error::io(crate::error::IoKind::Read, &e))?;
        if end > len {
            return Err(Error::format(len, FormatKind::Truncated));
        }
        Ok(end)
    }

    pub(super) fn require_idle(&self) -> Result<()> {
        if self.pending != Pending::None {
            return Err(sequence("previous section has not been read"));
        }
        Ok(())
    }

    /// Parse the next section header, or `None` at the end of the file.
    ///
    /// With `decode`, a compression wrapper pair is reported as the
    /// section it encodes and later data calls inflate.
    pub fn read_section_header(mut self, decode: bool) -> Result<(Self, Option<SectionHeader>)> {
        let local = (|| {
            self.require_mode(Mode::Read)?;
            self.require_idle()?;
            self.parse_header(decode)
        })();
        let args = Collective {
            op: "read_section_header",
            flag: decode,
            ..Default::default()
        };
        let parsed = self.agree(args, local)?.swap_remove(self.comm.rank());
        Ok(match parsed {
            Some((header, pending)) => {
                self.pending = pending;
                (self, Some(header))
            }
            None => (self, None),
        })
    }

    fn parse_header(&self, decode: bool) -> Result<Option<(SectionHeader, Pending)>> {
        let src = self.src();
        let len = self.storage.len().map_err(|e| Error::io(crate::error::IoKind::Read, &e))?;
        let at = self.cursor;
        if at == len {
            return Ok(None);
        }
        if len.saturating_sub(at) < SECTION_HEADER_LEN as u64 {
            return Err(Error::format(at, FormatKind::TrailingBytes));
        }
        let meta = parse_section_meta(&src, at)?;
        let wrapped = if decode {
            detect_compression(meta.kind, &meta.user)
        } else {
            None
        };
        let entry = SECTION_HEADER_LEN as u64;
        let header = |kind, count, size, user: &[u8], decoded| SectionHeader {
            kind,
            count,
            size,
            user: user.to_vec(),
            decoded,
        };
        let out = match (wrapped, meta.kind) {
            (None, SectionType::Inline) => (
                header(SectionType::Inline, 0, 0, &meta.user, false),
                Pending::Inline { data: meta.data_offset },
            ),
            (None, SectionType::Block) => {
                let e = size_u64(&meta, entry)?;
                (
                    header(SectionType::Block, 0, e, &meta.user, false),
                    Pending::Block {
                        data: meta.data_offset,
                        stored: e,
                        logical: None,
                    },
                )
            }
            (None, SectionType::ArrayFixed) => {
                let n = count_u64(&meta, entry)?;
                let e = size_u64(&meta, entry + 32)?;
                (
                    header(SectionType::ArrayFixed, n, e, &meta.user, false),
                    Pending::Array(ArrayState {
                        kind: SectionType::ArrayFixed,
                        count: n,
                        size: e,
                        stored: Sizes::Fixed(e),
                        logical: None,
                        data: meta.data_offset,
                    }),
                )
            }
            (None, SectionType::ArrayVar) => {
                let n = count_u64(&meta, entry)?;
                (
                    header(SectionType::ArrayVar, n, 0, &meta.user, false),
                    Pending::Array(ArrayState {
                        kind: SectionType::ArrayVar,
                        count: n,
                        size: 0,
                        stored: Sizes::Table(meta.table_offset),
                        logical: None,
                        data: meta.data_offset,
                    }),
                )
            }
            (None, SectionType::FileHeader) => return Err(Error::format(at, FormatKind::RepeatedHeader)),
            (Some(SectionType::Block), _) => {
                let u_at = meta.data_offset;
                let u = decode_u_entry(&read_range(&src, u_at, INLINE_DATA_LEN as u64)?).map_err(|e| e.at(u_at))?;
                let next = parse_section_meta(&src, at + crate::sections::INLINE_SECTION_LEN as u64)?;
                if next.kind != SectionType::Block {
                    return Err(nonconforming(next.offset));
                }
                let e = size_u64(&next, entry)?;
                (
                    header(SectionType::Block, 0, u, &next.user, true),
                    Pending::Block {
                        data: next.data_offset,
                        stored: e,
                        logical: Some(u),
                    },
                )
            }
            (Some(SectionType::ArrayFixed), _) => {
                let u_at = meta.data_offset;
                let u = decode_u_entry(&read_range(&src, u_at, INLINE_DATA_LEN as u64)?).map_err(|e| e.at(u_at))?;
                let next = parse_section_meta(&src, at + crate::sections::INLINE_SECTION_LEN as u64)?;
                if next.kind != SectionType::ArrayVar {
                    return Err(nonconforming(next.offset));
                }
                let n = count_u64(&next, entry)?;
                (
                    header(SectionType::ArrayFixed, n, u, &next.user, true),
                    Pending::Array(ArrayState {
                        kind: SectionType::ArrayFixed,
                        count: n,
                        size: u,
                        stored: Sizes::Table(next.table_offset),
                        logical: Some(Sizes::Fixed(u)),
                        data: next.data_offset,
                    }),
                )
            }
            (Some(_), _) => {
                let n_meta = count_u64(&meta, entry)?;
                if meta.elem_size.get() != COUNT_ENTRY_LEN as u128 {
                    return Err(nonconforming(at + entry + 32));
                }
                let next_at = padded_end(meta.data_offset, n_meta as u128 * COUNT_ENTRY_LEN as u128)?;
                let next = parse_section_meta(&src, next_at)?;
                if next.kind != SectionType::ArrayVar {
                    return Err(nonconforming(next.offset));
                }
                let n = count_u64(&next, entry)?;
                if n != n_meta {
                    return Err(nonconforming(next.offset + entry));
                }
                (
                    header(SectionType::ArrayVar, n, 0, &next.user, true),
                    Pending::Array(ArrayState {
                        kind: SectionType::ArrayVar,
                        count: n,
                        size: 0,
                        stored: Sizes::Table(next.table_offset),
                        logical: Some(Sizes::Table(meta.data_offset)),
                        data: next.data_offset,
                    }),
                )
            }
        };
        Ok(Some(out))
    }

    /// Read the pending inline section's 32 bytes into `out` on `root`.
    pub fn read_inline_data(mut self, out: Option<&mut [u8; INLINE_DATA_LEN]>, root: usize) -> Result<Self> {
        let local = (|| {
            self.require_mode(Mode::Read)?;
            self.check_root(root)?;
            match self.pending {
                Pending::Inline { data } => Ok(data),
                _ => Err(sequence("no inline section is pending")),
            }
        })();
        let args = Collective {
            op: "read_inline_data",
            root,
            ..Default::default()
        };
        let data = self.agree(args, local)?[0];
        let r = match out {
            Some(buf) if self.comm.rank() == root => {
                read_range(&self.src(), data, INLINE_DATA_LEN as u64).map(|b| buf.copy_from_slice(&b))
            }
            _ => Ok(()),
        };
        self.status(r)?;
        self.pending = Pending::None;
        self.cursor = self.within(data + INLINE_DATA_LEN as u64)?;
        Ok(self)
    }

    /// Read the pending block into `out` on `root`. `size` must equal the
    /// size reported by the header call.
    pub fn read_block_data(mut self, out: Option<&mut [u8]>, size: u64, root: usize) -> Result<Self> {
        let is_root = self.comm.rank() == root;
        let local = (|| {
            self.require_mode(Mode::Read)?;
            self.check_root(root)?;
            let Pending::Block { data, stored, logical } = self.pending else {
                return Err(sequence("no block section is pending"));
            };
            let reported = logical.unwrap_or(stored);
            if size != reported {
                return Err(Error::length(format!("block has {reported} bytes, {size} requested")));
            }
            if let (true, Some(buf)) = (is_root, out.as_ref()) {
                if buf.len() as u64 != size {
                    return Err(Error::length(format!(
                        "block has {size} bytes, buffer holds {}",
                        buf.len()
                    )));
                }
            }
            Ok((data, stored, logical))
        })();
        let args = Collective {
            op: "read_block_data",
            root,
            size,
            ..Default::default()
        };
        let (data, stored, logical) = self.agree(args, local)?[0];
        let r = match out {
            Some(buf) if is_root => read_range(&self.src(), data, stored).and_then(|raw| {
                match logical {
                    Some(u) => buf.copy_from_slice(&decompress_element_sized(&raw, u).map_err(|e| e.at(data))?),
                    None => buf.copy_from_slice(&raw),
                }
                Ok(())
            }),
            _ => Ok(()),
        };
        self.status(r)?;
        self.pending = Pending::None;
        self.cursor = self.within(padded_end(data, stored as u128)?)?;
        Ok(self)
    }

    fn pending_array(&self) -> Result<&ArrayState> {
        match &self.pending {
            Pending::Array(a) => Ok(a),
            _ => Err(sequence("no array section is pending")),
        }
    }

    /// Local element sizes from a size source, for elements
    /// `[first, first + n)`.
    fn local_sizes(&self, sizes: Sizes, first: u128, n: u64, uncompressed: bool) -> Result<Vec<u64>> {
        match sizes {
            Sizes::Fixed(e) => Ok(vec![e; n as usize]),
            Sizes::Table(t) => {
                let start = to_u64(t as u128 + first * COUNT_ENTRY_LEN as u128, "table offset")?;
                let table = read_range(&self.src(), start, to_u64(n as u128 * COUNT_ENTRY_LEN as u128, "table length")?)?;
                table
                    .chunks_exact(COUNT_ENTRY_LEN)
                    .enumerate()
                    .map(|(i, entry)| {
                        let at = start + (i * COUNT_ENTRY_LEN) as u64;
                        if uncompressed {
                            decode_u_entry(entry).map_err(|e| e.at(at))
                        } else {
                            crate::wire::decode_count(entry, SIZE_LETTER)
                                .and_then(|c| c.to_u64_at(2))
                                .map_err(|e| e.at(at))
                        }
                    })
                    .collect()
            }
        }
    }

    fn check_read_counts(&self, counts: &[u64], n: u64) -> Result<()> {
        let total = self.check_counts(counts)?;
        if total != n as u128 {
            return Err(Error::usage(
                UsageKind::Consistency,
                format!("partition covers {total} elements, section has {n}"),
            ));
        }
        Ok(())
    }

    /// Read this rank's stored window and place elements into `targets`.
    fn fetch(
        &self,
        array: &ArrayState,
        stored_local: &[u64],
        logical_local: &[u64],
        stored_before: u128,
        targets: Vec<&mut [u8]>,
    ) -> Result<()> {
        let start = to_u64(array.data as u128 + stored_before, "data offset")?;
        let total: u128 = stored_local.iter().map(|&s| s as u128).sum();
        let raw = read_range(&self.src(), start, to_u64(total, "window length")?)?;
        let mut pos = 0usize;
        for ((target, &s), &u) in targets.into_iter().zip(stored_local).zip(logical_local) {
            let chunk = &raw[pos..pos + s as usize];
            if array.logical.is_some() {
                let el = decompress_element_sized(chunk, u).map_err(|e| e.at(start + pos as u64))?;
                target.copy_from_slice(&el);
            } else {
                target.copy_from_slice(chunk);
            }
            pos += s as usize;
        }
        Ok(())
    }

    /// Read this rank's elements of the pending fixed-size array.
    pub fn read_array_data(mut self, out: Option<ElementsMut<'_>>, counts: &[u64], elem_size: u64) -> Result<Self> {
        let rank = self.comm.rank();
        let local = (|| {
            self.require_mode(Mode::Read)?;
            let array = self.pending_array()?;
            if array.kind != SectionType::ArrayFixed {
                return Err(sequence("pending array has variable element sizes"));
            }
            self.check_read_counts(counts, array.count)?;
            if elem_size != array.size {
                return Err(Error::usage(
                    UsageKind::Consistency,
                    format!("element size is {}, {elem_size} requested", array.size),
                ));
            }
            let logical = vec![elem_size; counts[rank] as usize];
            let targets = match out {
                Some(o) => Some(o.split(&logical)?),
                None => None,
            };
            let first = offsets(counts)[rank];
            let stored = self.local_sizes(array.stored, first, counts[rank], false)?;
            Ok((targets, logical, stored))
        })();
        let args = Collective {
            op: "read_array_data",
            counts: counts.to_vec(),
            size: elem_size,
            ..Default::default()
        };
        let (local, shared) = match local {
            Ok((t, l, s)) => {
                let sum: u128 = s.iter().map(|&x| x as u128).sum();
                (Some((t, l, s)), Ok(sum))
            }
            Err(e) => (None, Err(e)),
        };
        let sums = self.agree(args, shared)?;
        let (targets, logical, stored) = local.expect("local state exists when all ranks agreed");
        let array = self.pending_array()?.clone();
        let r = match targets {
            Some(t) => self.fetch(&array, &stored, &logical, sums[..rank].iter().sum(), t),
            None => Ok(()),
        };
        self.status(r)?;
        self.pending = Pending::None;
        self.cursor = self.within(padded_end(array.data, sums.iter().sum())?)?;
        Ok(self)
    }

    /// Read this rank's element sizes of the pending array: uncompressed
    /// sizes when decoding, stored sizes otherwise.
    pub fn read_varray_sizes(mut self, out: Option<&mut [u64]>, counts: &[u64]) -> Result<Self> {
        let rank = self.comm.rank();
        let local = (|| {
            self.require_mode(Mode::Read)?;
            let array = self.pending_array()?;
            self.check_read_counts(counts, array.count)?;
            if let Some(o) = out.as_ref() {
                if o.len() as u64 != counts[rank] {
                    return Err(Error::length(format!(
                        "size buffer holds {} entries for {} local elements",
                        o.len(),
                        counts[rank]
                    )));
                }
            }
            let first = offsets(counts)[rank];
            let stored = self.local_sizes(array.stored, first, counts[rank], false)?;
            let logical = match array.logical {
                Some(l) => self.local_sizes(l, first, counts[rank], true)?,
                None => stored.clone(),
            };
            Ok((stored, logical))
        })();
        let args = Collective {
            op: "read_varray_sizes",
            counts: counts.to_vec(),
            ..Default::default()
        };
        let sum = |v: &[u64]| v.iter().map(|&x| x as u128).sum::<u128>();
        let (local, shared) = match local {
            Ok((s, l)) => {
                let sums = (sum(&s), sum(&l));
                (Some((s, l)), Ok(sums))
            }
            Err(e) => (None, Err(e)),
        };
        let sums = self.agree(args, shared)?;
        let (stored_local, logical_local) = local.expect("local state exists when all ranks agreed");
        if let Some(o) = out {
            o.copy_from_slice(&logical_local);
        }
        let array = self.pending_array()?.clone();
        self.pending = Pending::Varray(Box::new(VarrayState {
            array,
            counts: counts.to_vec(),
            stored_local,
            logical_local,
            stored_sums: sums.iter().map(|s| s.0).collect(),
            logical_sums: sums.iter().map(|s| s.1).collect(),
        }));
        Ok(self)
    }

    /// Read this rank's elements after the sizes call. `sizes` are the
    /// local sizes returned by it and `sums[q]` the byte total of rank q.
    pub fn read_varray_data(
        mut self,
        out: Option<ElementsMut<'_>>,
        counts: &[u64],
        sizes: &[u64],
        sums: &[u64],
    ) -> Result<Self> {
        let rank = self.comm.rank();
        let local = (|| {
            self.require_mode(Mode::Read)?;
            let Pending::Varray(state) = &self.pending else {
                return Err(sequence("element sizes have not been read"));
            };
            if counts != state.counts.as_slice() {
                return Err(Error::usage(
                    UsageKind::Consistency,
                    "partition differs from the one used to read the sizes",
                ));
            }
            let expected: Vec<u128> = sums.iter().map(|&s| s as u128).collect();
            if expected != state.logical_sums {
                return Err(Error::usage(
                    UsageKind::Consistency,
                    format!("byte sums {:?} differ from the element sizes read {:?}", sums, state.logical_sums),
                ));
            }
            match out {
                Some(o) => {
                    if sizes != state.logical_local.as_slice() {
                        return Err(Error::usage(
                            UsageKind::Consistency,
                            "element sizes differ from the ones read",
                        ));
                    }
                    Ok(Some(o.split(sizes)?))
                }
                None => Ok(None),
            }
        })();
        let args = Collective {
            op: "read_varray_data",
            counts: counts.to_vec(),
            sums: sums.to_vec(),
            ..Default::default()
        };
        let (targets, shared) = match local {
            Ok(t) => (Some(t), Ok(())),
            Err(e) => (None, Err(e)),
        };
        self.agree(args, shared)?;
        let Pending::Varray(state) = std::mem::take(&mut self.pending) else {
            unreachable!("checked before agreeing")
        };
        let r = match targets.flatten() {
            Some(t) => self.fetch(
                &state.array,
                &state.stored_local,
                &state.logical_local,
                state.stored_sums[..rank].iter().sum(),
                t,
            ),
            None => Ok(()),
        };
        self.status(r)?;
        self.cursor = self.within(padded_end(state.array.data, state.stored_sums.iter().sum())?)?;
        Ok(self)
    }
}
