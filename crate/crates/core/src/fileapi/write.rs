use crate::compress::{
    compress_element, encode_u_entry, wrap_compressed_block, MAGIC_ARRAY_FIXED, MAGIC_ARRAY_VAR,
};
use crate::error::{Error, Result, UsageKind};
use crate::partition::offsets;
use crate::sections::{encode_block, encode_inline, Section, COUNT_LETTER, INLINE_SECTION_LEN, SIZE_LETTER};
use crate::wire::{
    data_pad_length, encode_count, encode_section_header, pad_data_for, Count, SectionType,
    COUNT_ENTRY_LEN,
};

use super::{check_user, to_u64, Collective, Elements, FileContext, Mode};

/// One rank's share of a padded payload.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct Share {
    bytes: u128,
    last: Option<u8>,
}

impl Share {
    fn of(bytes: &[u8]) -> Share {
        Share {
            bytes: bytes.len() as u128,
            last: bytes.last().copied(),
        }
    }
}

/// A data section whose header entries belong to rank 0 and whose table
/// entries and payload windows belong to the owning ranks.
struct Layout<'a> {
    at: u64,
    head: Vec<u8>,
    /// Elements in the section if it carries a per-element table.
    table_len: Option<u128>,
    local_entries: Vec<u8>,
    local_data: Vec<u8>,
    shares: &'a [Share],
    element_offset: u128,
}

impl FileContext<'_> {
    /// Stage the byte ranges of `layout` owned by this rank; returns the
    /// section end.
    fn stage(&self, layout: Layout<'_>, writes: &mut Vec<(u64, Vec<u8>)>) -> Result<u64> {
        let rank = self.comm.rank();
        let table_at = layout.at as u128 + layout.head.len() as u128;
        let data_at = table_at + layout.table_len.unwrap_or(0) * COUNT_ENTRY_LEN as u128;
        let before: u128 = layout.shares[..rank].iter().map(|s| s.bytes).sum();
        let total: u128 = layout.shares.iter().map(|s| s.bytes).sum();
        Count::new(total)?;
        let last = layout
            .shares
            .iter()
            .rev()
            .find(|s| s.bytes > 0)
            .and_then(|s| s.last);
        let pad = pad_data_for(total, last, self.opts.style);
        let end = to_u64(data_at + total + pad.len() as u128, "section end")?;

        if rank == 0 {
            writes.push((layout.at, layout.head));
        }
        if !layout.local_entries.is_empty() {
            let at = table_at + layout.element_offset * COUNT_ENTRY_LEN as u128;
            writes.push((to_u64(at, "table offset")?, layout.local_entries));
        }
        if !layout.local_data.is_empty() {
            writes.push((to_u64(data_at + before, "data offset")?, layout.local_data));
        }
        if rank == 0 {
            writes.push((to_u64(data_at + total, "padding offset")?, pad));
        }
        Ok(end)
    }

    fn header(&self, kind: SectionType, user: &[u8]) -> Result<Vec<u8>> {
        Ok(encode_section_header(kind, user, self.opts.style)?.to_vec())
    }

    fn entry(&self, letter: u8, v: impl Into<Count>) -> [u8; COUNT_ENTRY_LEN] {
        encode_count(letter, v.into(), self.opts.style)
    }

    /// Write one inline section holding `data` from `root`.
    pub fn write_inline(mut self, data: Option<&[u8]>, user: &[u8], root: usize) -> Result<Self> {
        let local = (|| {
            self.require_mode(Mode::Write)?;
            self.require_idle()?;
            self.check_root(root)?;
            check_user(user)?;
            if self.comm.rank() != root {
                return Ok(None);
            }
            match data {
                Some(d) => Ok(Some(encode_inline(user, d, self.opts.style)?.to_vec())),
                None => Err(Error::length("inline data missing on root")),
            }
        })();
        let args = Collective {
            op: "write_inline",
            user: user.to_vec(),
            root,
            ..Default::default()
        };
        let bytes = self.agree(args, local)?.swap_remove(self.comm.rank());
        let writes = bytes.map(|b| vec![(self.cursor, b)]).unwrap_or_default();
        self.commit(writes)?;
        self.cursor += INLINE_SECTION_LEN as u64;
        Ok(self)
    }

    /// Write a block of `size` bytes from `root`, compressed if `encode`.
    pub fn write_block(
        mut self,
        data: Option<&[u8]>,
        size: u64,
        user: &[u8],
        root: usize,
        encode: bool,
    ) -> Result<Self> {
        let style = self.opts.style;
        let local = (|| {
            self.require_mode(Mode::Write)?;
            self.require_idle()?;
            self.check_root(root)?;
            check_user(user)?;
            if self.comm.rank() != root {
                return Ok(None);
            }
            let d = data.ok_or_else(|| Error::length("block data missing on root"))?;
            if d.len() as u64 != size {
                return Err(Error::length(format!(
                    "block declared as {size} bytes, {} given",
                    d.len()
                )));
            }
            let bytes = if encode {
                let mut out = Vec::new();
                for s in wrap_compressed_block(user, d, style, self.opts.level)? {
                    out.extend(s.encode(style)?);
                }
                out
            } else {
                encode_block(user, d, style)?
            };
            Ok(Some(bytes))
        })();
        let args = Collective {
            op: "write_block",
            user: user.to_vec(),
            root,
            size,
            flag: encode,
            ..Default::default()
        };
        let bytes = self.agree(args, local)?.swap_remove(self.comm.rank());
        let len = bytes.as_ref().map_or(0, |b| b.len() as u64);
        let writes = bytes.map(|b| vec![(self.cursor, b)]).unwrap_or_default();
        let storage = self.storage.clone();
        let r = self.comm.ordered(move || -> Result<u64> {
            for (at, b) in writes {
                storage
                    .write_at(at, &b)
                    .map_err(|e| Error::io(crate::error::IoKind::Write, &e))?;
            }
            Ok(len)
        })?;
        let lens = self.status(r)?;
        self.cursor += lens[root];
        Ok(self)
    }

    /// Write an array of fixed-size elements distributed by `counts`.
    pub fn write_array(
        mut self,
        data: Elements<'_>,
        counts: &[u64],
        elem_size: u64,
        user: &[u8],
        encode: bool,
    ) -> Result<Self> {
        let rank = self.comm.rank();
        let style = self.opts.style;
        let local = (|| {
            self.require_mode(Mode::Write)?;
            self.require_idle()?;
            check_user(user)?;
            let total = self.check_counts(counts)?;
            Count::new(
                total
                    .checked_mul(elem_size as u128)
                    .ok_or_else(|| Error::range("array byte size overflows"))?,
            )?;
            data.check_fixed(counts[rank], elem_size)?;
            let elements = data.split(&vec![elem_size; counts[rank] as usize])?;
            if encode {
                let mut entries = Vec::with_capacity(elements.len() * COUNT_ENTRY_LEN);
                let mut bytes = Vec::new();
                for el in elements {
                    let c = compress_element(el, style, self.opts.level);
                    entries.extend_from_slice(&self.entry(SIZE_LETTER, c.armored.len() as u64));
                    bytes.extend(c.armored);
                }
                Ok((entries, bytes))
            } else {
                Ok((Vec::new(), elements.concat()))
            }
        })();
        let args = Collective {
            op: "write_array",
            user: user.to_vec(),
            counts: counts.to_vec(),
            size: elem_size,
            flag: encode,
            ..Default::default()
        };
        let (entries, bytes) = match local {
            Ok(v) => (Some(v.0), Ok(v.1)),
            Err(e) => (None, Err(e)),
        };
        let shares = self.agree(args, bytes.as_ref().map(|b| Share::of(b)).map_err(Clone::clone))?;
        let (entries, bytes) = (entries.unwrap_or_default(), bytes?);
        let n: u128 = counts.iter().map(|&c| c as u128).sum();
        let element_offset = offsets(counts)[rank];
        let mut writes = Vec::new();
        let end = if encode {
            if rank == 0 {
                let meta = Section::Inline {
                    user: MAGIC_ARRAY_FIXED.to_vec(),
                    data: encode_u_entry(elem_size, style),
                };
                writes.push((self.cursor, meta.encode(style)?));
            }
            let mut head = self.header(SectionType::ArrayVar, user)?;
            head.extend_from_slice(&self.entry(COUNT_LETTER, Count::new(n)?));
            let layout = Layout {
                at: self.cursor + INLINE_SECTION_LEN as u64,
                head,
                table_len: Some(n),
                local_entries: entries,
                local_data: bytes,
                shares: &shares,
                element_offset,
            };
            self.stage(layout, &mut writes)?
        } else {
            let mut head = self.header(SectionType::ArrayFixed, user)?;
            head.extend_from_slice(&self.entry(COUNT_LETTER, Count::new(n)?));
            head.extend_from_slice(&self.entry(SIZE_LETTER, elem_size));
            let layout = Layout {
                at: self.cursor,
                head,
                table_len: None,
                local_entries: Vec::new(),
                local_data: bytes,
                shares: &shares,
                element_offset,
            };
            self.stage(layout, &mut writes)?
        };
        self.commit(writes)?;
        self.cursor = end;
        Ok(self)
    }

    /// Write an array of variable-size elements. `sizes` holds this rank's
    /// element sizes; `sums[q]` must equal the sum of rank q's sizes.
    pub fn write_varray(
        mut self,
        data: Elements<'_>,
        counts: &[u64],
        sizes: &[u64],
        sums: &[u64],
        user: &[u8],
        encode: bool,
    ) -> Result<Self> {
        let rank = self.comm.rank();
        let style = self.opts.style;
        let local = (|| {
            self.require_mode(Mode::Write)?;
            self.require_idle()?;
            check_user(user)?;
            self.check_counts(counts)?;
            if sums.len() != self.comm.size() {
                return Err(Error::usage(
                    UsageKind::Consistency,
                    format!("{} byte sums for {} ranks", sums.len(), self.comm.size()),
                ));
            }
            Count::new(sums.iter().map(|&s| s as u128).sum())?;
            if sizes.len() as u64 != counts[rank] {
                return Err(Error::length(format!(
                    "{} element sizes for {} local elements",
                    sizes.len(),
                    counts[rank]
                )));
            }
            let local_sum: u128 = sizes.iter().map(|&s| s as u128).sum();
            if local_sum != sums[rank] as u128 {
                return Err(Error::usage(
                    UsageKind::Consistency,
                    format!("local sizes sum to {local_sum}, byte sum for rank {rank} is {}", sums[rank]),
                ));
            }
            let elements = data.split(sizes)?;
            if encode {
                let mut entries = Vec::with_capacity(elements.len() * COUNT_ENTRY_LEN);
                let mut bytes = Vec::new();
                for el in elements {
                    let c = compress_element(el, style, self.opts.level);
                    entries.extend_from_slice(&self.entry(SIZE_LETTER, c.armored.len() as u64));
                    bytes.extend(c.armored);
                }
                Ok((entries, bytes))
            } else {
                let mut entries = Vec::with_capacity(sizes.len() * COUNT_ENTRY_LEN);
                for &s in sizes {
                    entries.extend_from_slice(&self.entry(SIZE_LETTER, s));
                }
                Ok((entries, elements.concat()))
            }
        })();
        let args = Collective {
            op: "write_varray",
            user: user.to_vec(),
            counts: counts.to_vec(),
            sums: sums.to_vec(),
            flag: encode,
            ..Default::default()
        };
        let (entries, bytes) = match local {
            Ok(v) => (Some(v.0), Ok(v.1)),
            Err(e) => (None, Err(e)),
        };
        let shares = self.agree(args, bytes.as_ref().map(|b| Share::of(b)).map_err(Clone::clone))?;
        let (entries, bytes) = (entries.unwrap_or_default(), bytes?);
        let n: u128 = counts.iter().map(|&c| c as u128).sum();
        let element_offset = offsets(counts)[rank];
        let mut writes = Vec::new();
        let mut at = self.cursor;
        if encode {
            // Metadata array of uncompressed sizes; every entry ends in the
            // same terminator byte, so its padding needs no exchange.
            let mut head = self.header(SectionType::ArrayFixed, MAGIC_ARRAY_VAR)?;
            head.extend_from_slice(&self.entry(COUNT_LETTER, Count::new(n)?));
            head.extend_from_slice(&self.entry(SIZE_LETTER, COUNT_ENTRY_LEN as u64));
            let mut u_entries = Vec::with_capacity(sizes.len() * COUNT_ENTRY_LEN);
            for &s in sizes {
                u_entries.extend_from_slice(&encode_u_entry(s, style));
            }
            let last = style.fixed_terminator()[1];
            let meta_shares: Vec<Share> = counts
                .iter()
                .map(|&c| Share {
                    bytes: c as u128 * COUNT_ENTRY_LEN as u128,
                    last: (c > 0).then_some(last),
                })
                .collect();
            let meta = Layout {
                at,
                head,
                table_len: None,
                local_entries: Vec::new(),
                local_data: u_entries,
                shares: &meta_shares,
                element_offset,
            };
            at = self.stage(meta, &mut writes)?;
            debug_assert_eq!(
                at as u128,
                self.cursor as u128 + 128 + n * 32 + data_pad_length(n * 32) as u128
            );
        }
        let mut head = self.header(SectionType::ArrayVar, user)?;
        head.extend_from_slice(&self.entry(COUNT_LETTER, Count::new(n)?));
        let layout = Layout {
            at,
            head,
            table_len: Some(n),
            local_entries: entries,
            local_data: bytes,
            shares: &shares,
            element_offset,
        };
        let end = self.stage(layout, &mut writes)?;
        self.commit(writes)?;
        self.cursor = end;
        Ok(self)
    }
}
