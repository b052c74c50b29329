//! Partition arithmetic: cumulative element offsets, per-rank byte sizes,
//! and the byte window each rank owns within a section's payload.

use crate::error::{Error, Result, UsageKind};
use crate::sections::SectionRecord;
use crate::wire::{Count, SectionType};

/// Contiguous, rank-ordered assignment of array elements to ranks.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    counts: Vec<u64>,
}

impl Partition {
    pub fn new(counts: Vec<u64>) -> Result<Partition> {
        if counts.is_empty() {
            return Err(Error::usage(UsageKind::Consistency, "partition needs at least one rank"));
        }
        let p = Partition { counts };
        Count::new(p.total())?;
        Ok(p)
    }

    pub fn serial(n: u64) -> Partition {
        Partition { counts: vec![n] }
    }

    /// Split `n` elements as evenly as possible over `ranks`.
    pub fn uniform(n: u64, ranks: usize) -> Partition {
        let ranks = ranks.max(1) as u64;
        let counts = (0..ranks)
            .map(|p| (n * (p + 1)) / ranks - (n * p) / ranks)
            .collect();
        Partition { counts }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn ranks(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, rank: usize) -> u64 {
        self.counts[rank]
    }

    pub fn total(&self) -> u128 {
        self.counts.iter().map(|&c| c as u128).sum()
    }

    /// `C_0 = 0, ..., C_P = N`.
    pub fn offsets(&self) -> Vec<u128> {
        offsets(&self.counts)
    }

    /// Global element range `[C_p, C_{p+1})` of `rank`.
    pub fn element_range(&self, rank: usize) -> (u128, u128) {
        let start: u128 = self.counts[..rank].iter().map(|&c| c as u128).sum();
        (start, start + self.counts[rank] as u128)
    }
}

/// Prefix sums with a leading zero; length `counts.len() + 1`.
pub fn offsets(counts: &[u64]) -> Vec<u128> {
    let mut out = Vec::with_capacity(counts.len() + 1);
    let mut acc = 0u128;
    out.push(acc);
    for &c in counts {
        acc += c as u128;
        out.push(acc);
    }
    out
}

/// `S_p = N_p E` for a fixed element size.
pub fn byte_sizes_fixed(partition: &Partition, elem_size: u64) -> Result<Vec<u128>> {
    let sizes: Vec<u128> = partition
        .counts
        .iter()
        .map(|&n| n as u128 * elem_size as u128)
        .collect();
    let total = sizes
        .iter()
        .try_fold(0u128, |acc, &s| acc.checked_add(s))
        .ok_or_else(|| Error::range("total byte size overflows"))?;
    Count::new(total)?;
    Ok(sizes)
}

/// `S_p` as the sum of the global element sizes in each rank's range.
pub fn byte_sizes_var(partition: &Partition, sizes: &[u64]) -> Result<Vec<u128>> {
    if partition.total() != sizes.len() as u128 {
        return Err(Error::length(format!(
            "partition covers {} elements, {} sizes given",
            partition.total(),
            sizes.len()
        )));
    }
    let mut out = Vec::with_capacity(partition.ranks());
    let mut at = 0usize;
    for &n in &partition.counts {
        let n = n as usize;
        out.push(sizes[at..at + n].iter().map(|&s| s as u128).sum());
        at += n;
    }
    Ok(out)
}

/// Byte window of one rank within a section payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankByteWindow {
    pub rank: usize,
    pub elements: (u128, u128),
    pub byte_offset: u64,
    pub byte_length: u64,
}

/// Lay consecutive windows of the given byte sizes from `payload_offset`.
pub fn windows_from_sizes(
    payload_offset: u64,
    partition: &Partition,
    byte_sizes: &[u128],
) -> Result<Vec<RankByteWindow>> {
    if byte_sizes.len() != partition.ranks() {
        return Err(Error::usage(
            UsageKind::Consistency,
            "one byte size per rank required",
        ));
    }
    let offs = partition.offsets();
    let mut at = payload_offset as u128;
    let mut out = Vec::with_capacity(partition.ranks());
    for (rank, &len) in byte_sizes.iter().enumerate() {
        let byte_offset = u64::try_from(at).map_err(|_| Error::range("window offset overflows"))?;
        let byte_length = u64::try_from(len).map_err(|_| Error::range("window length overflows"))?;
        out.push(RankByteWindow {
            rank,
            elements: (offs[rank], offs[rank + 1]),
            byte_offset,
            byte_length,
        });
        at += len;
    }
    Ok(out)
}

/// Windows of every rank over an array section.
///
/// Fixed arrays need nothing beyond the record. Variable arrays use the
/// record's size table; callers that only hold their local sizes use the
/// two-phase route of exchanging per-rank sums and calling
/// [`windows_from_sizes`].
pub fn plan_windows(section: &SectionRecord, partition: &Partition) -> Result<Vec<RankByteWindow>> {
    if partition.total() != section.count.get() {
        return Err(Error::usage(
            UsageKind::Consistency,
            format!(
                "partition sums to {} but the section has {} elements",
                partition.total(),
                section.count
            ),
        ));
    }
    let sizes = match section.kind {
        SectionType::ArrayFixed => {
            let e = u64::try_from(section.elem_size.get())
                .map_err(|_| Error::range("element size exceeds 64 bits"))?;
            byte_sizes_fixed(partition, e)?
        }
        SectionType::ArrayVar => {
            let sizes = section
                .sizes
                .iter()
                .map(|s| u64::try_from(s.get()).map_err(|_| Error::range("element size exceeds 64 bits")))
                .collect::<Result<Vec<u64>>>()?;
            byte_sizes_var(partition, &sizes)?
        }
        _ => vec![section.data_len as u128],
    };
    windows_from_sizes(section.data_offset, partition, &sizes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::Count;

    #[test]
    fn offsets_examples() {
        assert_eq!(offsets(&[3, 0, 2]), vec![0, 3, 3, 5]);
        assert_eq!(offsets(&[0, 0]), vec![0, 0, 0]);
    }

    #[test]
    fn fixed_sizes() {
        let p = Partition::new(vec![3, 0, 2]).unwrap();
        assert_eq!(byte_sizes_fixed(&p, 4).unwrap(), vec![12, 0, 8]);
        assert_eq!(byte_sizes_fixed(&p, 0).unwrap(), vec![0, 0, 0]);
        let big = Partition::new(vec![u64::MAX, u64::MAX]).unwrap();
        assert_eq!(byte_sizes_fixed(&big, u64::MAX).unwrap_err().code().0, 303);
    }

    #[test]
    fn var_sizes() {
        let p = Partition::new(vec![2, 1]).unwrap();
        assert_eq!(byte_sizes_var(&p, &[1, 2, 3]).unwrap(), vec![3, 3]);
        assert!(byte_sizes_var(&p, &[1, 2]).is_err());
        let p = Partition::new(vec![0, 3, 0]).unwrap();
        assert_eq!(byte_sizes_var(&p, &[1, 2, 3]).unwrap(), vec![0, 6, 0]);
    }

    fn fixed_record(n: u64, e: u64, at: u64) -> SectionRecord {
        SectionRecord {
            kind: SectionType::ArrayFixed,
            user: vec![],
            count: Count::from(n),
            elem_size: Count::from(e),
            sizes: vec![],
            file_offset: at - 128,
            file_length: 0,
            data_offset: at,
            data_len: n * e,
        }
    }

    #[test]
    fn windows_of_fixed_array() {
        let rec = fixed_record(5, 4, 256);
        let w = plan_windows(&rec, &Partition::new(vec![3, 0, 2]).unwrap()).unwrap();
        let got: Vec<(u64, u64)> = w.iter().map(|w| (w.byte_offset, w.byte_length)).collect();
        assert_eq!(got, vec![(256, 12), (268, 0), (268, 8)]);

        let serial = plan_windows(&rec, &Partition::serial(5)).unwrap();
        assert_eq!((serial[0].byte_offset, serial[0].byte_length), (256, 20));

        let err = plan_windows(&rec, &Partition::new(vec![4]).unwrap()).unwrap_err();
        assert_eq!(err.code().0, UsageKind::Consistency as i32);
    }

    #[test]
    fn uniform_split() {
        assert_eq!(Partition::uniform(5, 3).counts(), &[1, 2, 2]);
        assert_eq!(Partition::uniform(0, 2).counts(), &[0, 0]);
        assert_eq!(Partition::uniform(7, 1).total(), 7);
    }
}
