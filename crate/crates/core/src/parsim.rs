//! Virtual-rank harness: replays write scripts on P threaded ranks,
//! reads files back under arbitrary partitions, injects faults, and
//! generates seeded random scripts.

use std::sync::Arc;
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::comm::{Comm, Schedule};
use crate::compress::{wrap_compressed_array_fixed, wrap_compressed_array_var, wrap_compressed_block};
use crate::error::{Error, Result};
use crate::fileapi::{Elements, ElementsMut, FileContext, SectionHeader, WriteOptions, VENDOR};
use crate::partition::offsets;
use crate::sections::{encode_file, FileHeader, Section, INLINE_DATA_LEN};
use crate::storage::{Fault, FaultyStorage, MemStorage, Storage};
use crate::wire::{SectionType, USER_MAX};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Inline {
        user: Vec<u8>,
        data: [u8; INLINE_DATA_LEN],
        root: usize,
    },
    Block {
        user: Vec<u8>,
        data: Vec<u8>,
        root: usize,
        encode: bool,
    },
    Array {
        user: Vec<u8>,
        count: u64,
        elem_size: u64,
        data: Vec<u8>,
        encode: bool,
        indirect: bool,
    },
    Varray {
        user: Vec<u8>,
        sizes: Vec<u64>,
        data: Vec<u8>,
        encode: bool,
        indirect: bool,
    },
}

impl Step {
    pub fn user(&self) -> &[u8] {
        match self {
            Step::Inline { user, .. }
            | Step::Block { user, .. }
            | Step::Array { user, .. }
            | Step::Varray { user, .. } => user,
        }
    }

    /// Element count of array steps.
    pub fn count(&self) -> Option<u64> {
        match self {
            Step::Array { count, .. } => Some(*count),
            Step::Varray { sizes, .. } => Some(sizes.len() as u64),
            _ => None,
        }
    }

    pub fn encode(&self) -> bool {
        match self {
            Step::Inline { .. } => false,
            Step::Block { encode, .. } | Step::Array { encode, .. } | Step::Varray { encode, .. } => *encode,
        }
    }

    pub fn kind(&self) -> SectionType {
        match self {
            Step::Inline { .. } => SectionType::Inline,
            Step::Block { .. } => SectionType::Block,
            Step::Array { .. } => SectionType::ArrayFixed,
            Step::Varray { .. } => SectionType::ArrayVar,
        }
    }

    pub fn data(&self) -> &[u8] {
        match self {
            Step::Inline { data, .. } => data,
            Step::Block { data, .. } | Step::Array { data, .. } | Step::Varray { data, .. } => data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Script {
    pub user: Vec<u8>,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultKind {
    IoFailure,
    Truncation,
    /// The rank passes collective arguments that differ from its peers.
    Divergence,
}

/// A single fault at API call `call` on `rank`. Call 0 creates the file,
/// call `i + 1` runs step `i`, and the call after the last step closes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultPlan {
    pub call: usize,
    pub rank: usize,
    pub kind: FaultKind,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub ranks: usize,
    /// Per-step element counts per rank; ignored for inline and block steps.
    pub partitions: Vec<Vec<u64>>,
    pub schedule: Schedule,
    pub fault: Option<FaultPlan>,
    pub opts: WriteOptions,
}

impl RunConfig {
    pub fn serial(script: &Script, opts: WriteOptions) -> RunConfig {
        RunConfig {
            ranks: 1,
            partitions: script
                .steps
                .iter()
                .map(|s| s.count().map(|n| vec![n]).unwrap_or_default())
                .collect(),
            schedule: Schedule::Concurrent,
            fault: None,
            opts,
        }
    }
}

#[derive(Debug)]
pub struct RunReport {
    pub image: Vec<u8>,
    /// Outcome on each rank.
    pub results: Vec<Result<()>>,
}

fn diverge_user(user: &[u8]) -> Vec<u8> {
    let mut u = user.to_vec();
    if u.len() < USER_MAX {
        u.push(b'!');
    } else {
        u.pop();
    }
    u
}

fn rank_step<'c>(
    ctx: FileContext<'c>,
    comm: &Comm,
    step: &Step,
    counts: &[u64],
    diverge: bool,
) -> Result<FileContext<'c>> {
    let (rank, p) = (comm.rank(), comm.size());
    let user = if diverge && !matches!(step, Step::Array { .. } | Step::Varray { .. }) {
        diverge_user(step.user())
    } else {
        step.user().to_vec()
    };
    let mut counts = counts.to_vec();
    if diverge && !counts.is_empty() {
        counts[0] += 1;
    }
    let (lo, hi) = {
        let c = offsets(&counts);
        let r = rank.min(counts.len().saturating_sub(1));
        (c[r] as usize, c[(r + 1).min(c.len() - 1)] as usize)
    };
    match step {
        Step::Inline { data, root, .. } => {
            let root = root % p;
            ctx.write_inline((rank == root).then_some(&data[..]), &user, root)
        }
        Step::Block { data, root, encode, .. } => {
            let root = root % p;
            ctx.write_block((rank == root).then_some(&data[..]), data.len() as u64, &user, root, *encode)
        }
        Step::Array {
            elem_size,
            data,
            encode,
            indirect,
            ..
        } => {
            let e = *elem_size as usize;
            let hi = hi.max(lo);
            let local = data.get(lo * e..hi * e).unwrap_or(&[]);
            if *indirect {
                let els: Vec<&[u8]> = (0..hi - lo).map(|i| local.get(i * e..(i + 1) * e).unwrap_or(&[])).collect();
                ctx.write_array(Elements::Indirect(&els), &counts, *elem_size, &user, *encode)
            } else {
                ctx.write_array(Elements::Contiguous(local), &counts, *elem_size, &user, *encode)
            }
        }
        Step::Varray {
            sizes,
            data,
            encode,
            indirect,
            ..
        } => {
            let hi = hi.max(lo).min(sizes.len());
            let lo = lo.min(hi);
            let start: u64 = sizes[..lo].iter().sum();
            let local_sizes = &sizes[lo..hi];
            let local_sum: u64 = local_sizes.iter().sum();
            let local = &data[start as usize..(start + local_sum) as usize];
            let sums = comm.allgather(local_sum)?;
            if *indirect {
                let mut at = 0usize;
                let els: Vec<&[u8]> = local_sizes
                    .iter()
                    .map(|&s| {
                        let el = &local[at..at + s as usize];
                        at += s as usize;
                        el
                    })
                    .collect();
                ctx.write_varray(Elements::Indirect(&els), &counts, local_sizes, &sums, &user, *encode)
            } else {
                ctx.write_varray(Elements::Contiguous(local), &counts, local_sizes, &sums, &user, *encode)
            }
        }
    }
}

fn rank_run(comm: &Comm, script: &Script, cfg: &RunConfig, storage: &FaultyStorage<MemStorage>, shared: Arc<dyn Storage>) -> Result<()> {
    let rank = comm.rank();
    let fault_here = |call: usize| cfg.fault.filter(|f| f.call == call && f.rank == rank);
    let arm = |call: usize| {
        if let Some(f) = fault_here(call) {
            if f.kind != FaultKind::Divergence {
                storage.arm();
            }
        }
    };
    let diverges = |call: usize| fault_here(call).is_some_and(|f| f.kind == FaultKind::Divergence);

    arm(0);
    let user = if diverges(0) { diverge_user(&script.user) } else { script.user.clone() };
    let mut ctx = FileContext::create(comm, shared, &user, cfg.opts)?;
    for (i, step) in script.steps.iter().enumerate() {
        arm(i + 1);
        let counts = cfg.partitions.get(i).cloned().unwrap_or_default();
        ctx = rank_step(ctx, comm, step, &counts, diverges(i + 1))?;
    }
    arm(script.steps.len() + 1);
    ctx.close()
}

/// Run `script` on `cfg.ranks` threads sharing one in-memory file.
pub fn execute(script: &Script, cfg: &RunConfig) -> RunReport {
    let image = MemStorage::new();
    let comms = Comm::world(cfg.ranks, cfg.schedule);
    let results = thread::scope(|s| {
        let handles: Vec<_> = comms
            .into_iter()
            .map(|comm| {
                let faulty = Arc::new(FaultyStorage::new(image.clone(), Fault::IoFailure));
                let faulty = match cfg.fault {
                    Some(f) if f.kind == FaultKind::Truncation => {
                        Arc::new(FaultyStorage::new(image.clone(), Fault::Truncation))
                    }
                    _ => faulty,
                };
                s.spawn(move || {
                    let shared: Arc<dyn Storage> = faulty.clone();
                    rank_run(&comm, script, cfg, &faulty, shared)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("rank thread panicked"))
            .collect()
    });
    RunReport {
        image: image.to_vec(),
        results,
    }
}

fn first_result(report: RunReport) -> Result<Vec<u8>> {
    for r in report.results {
        r?;
    }
    Ok(report.image)
}

pub fn run_serial(script: &Script, opts: WriteOptions) -> Result<Vec<u8>> {
    first_result(execute(script, &RunConfig::serial(script, opts)))
}

pub fn run_parallel(
    script: &Script,
    opts: WriteOptions,
    ranks: usize,
    partitions: Vec<Vec<u64>>,
    schedule: Schedule,
) -> Result<Vec<u8>> {
    first_result(execute(
        script,
        &RunConfig {
            ranks,
            partitions,
            schedule,
            fault: None,
            opts,
        },
    ))
}

/// Encode `script` with the section encoders alone, without contexts.
pub fn encode_script(script: &Script, opts: WriteOptions) -> Result<Vec<u8>> {
    let style = opts.style;
    let mut sections = Vec::new();
    for step in &script.steps {
        match step {
            Step::Inline { user, data, .. } => sections.push(Section::Inline {
                user: user.clone(),
                data: *data,
            }),
            Step::Block { user, data, encode, .. } => {
                if *encode {
                    sections.extend(wrap_compressed_block(user, data, style, opts.level)?);
                } else {
                    sections.push(Section::Block {
                        user: user.clone(),
                        data: data.clone(),
                    });
                }
            }
            Step::Array {
                user,
                count,
                elem_size,
                data,
                encode,
                ..
            } => {
                if *encode {
                    sections.extend(wrap_compressed_array_fixed(user, *count, *elem_size, data, style, opts.level)?);
                } else {
                    sections.push(Section::ArrayFixed {
                        user: user.clone(),
                        count: *count,
                        elem_size: *elem_size,
                        data: data.clone(),
                    });
                }
            }
            Step::Varray {
                user,
                sizes,
                data,
                encode,
                ..
            } => {
                if *encode {
                    sections.extend(wrap_compressed_array_var(user, sizes, data, style, opts.level)?);
                } else {
                    sections.push(Section::ArrayVar {
                        user: user.clone(),
                        sizes: sizes.clone(),
                        data: data.clone(),
                    });
                }
            }
        }
    }
    encode_file(&FileHeader::new(VENDOR, script.user.clone()), &sections, style)
}

/// One section as reassembled from rank-local reads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadSection {
    pub header: SectionHeader,
    pub data: Vec<u8>,
    /// Element sizes of `V` sections, empty otherwise.
    pub sizes: Vec<u64>,
}

/// How ranks read a file back.
pub struct ReadPlan<'a> {
    pub ranks: usize,
    pub decode: bool,
    /// Element counts per rank for section `index` with `n` elements.
    pub partition: &'a (dyn Fn(usize, u64) -> Vec<u64> + Sync),
    /// Ranks whose data calls pass no buffers.
    pub skip: &'a (dyn Fn(usize, usize) -> bool + Sync),
    /// Pass element buffers one by one instead of contiguously.
    pub indirect: bool,
}

struct LocalRead {
    header: SectionHeader,
    data: Vec<u8>,
    sizes: Vec<u64>,
}

fn split_mut<'a>(buf: &'a mut [u8], sizes: &[u64]) -> Vec<&'a mut [u8]> {
    let mut rest = buf;
    let mut out = Vec::with_capacity(sizes.len());
    for &s in sizes {
        let (head, tail) = std::mem::take(&mut rest).split_at_mut(s as usize);
        out.push(head);
        rest = tail;
    }
    out
}

fn rank_read(comm: &Comm, storage: Arc<dyn Storage>, plan: &ReadPlan<'_>) -> Result<Vec<LocalRead>> {
    let (rank, p) = (comm.rank(), comm.size());
    let (mut ctx, _) = FileContext::open(comm, storage)?;
    let mut out = Vec::new();
    for index in 0.. {
        let (next, header) = ctx.read_section_header(plan.decode)?;
        ctx = next;
        let Some(header) = header else { break };
        let skip = (plan.skip)(index, rank);
        let root = index % p;
        let mut data = Vec::new();
        let mut sizes = Vec::new();
        match header.kind {
            SectionType::Inline => {
                let mut buf = [0u8; INLINE_DATA_LEN];
                ctx = ctx.read_inline_data((!skip).then_some(&mut buf), root)?;
                if rank == root && !skip {
                    data = buf.to_vec();
                }
            }
            SectionType::Block => {
                let mut buf = vec![0u8; header.size as usize];
                ctx = ctx.read_block_data((!skip).then_some(&mut buf[..]), header.size, root)?;
                if rank == root && !skip {
                    data = buf;
                }
            }
            SectionType::ArrayFixed => {
                let counts = (plan.partition)(index, header.count);
                let n = counts.get(rank).copied().unwrap_or(0);
                let mut buf = vec![0u8; (n * header.size) as usize];
                let target = match (skip, plan.indirect) {
                    (true, _) => None,
                    (false, false) => Some(ElementsMut::Contiguous(&mut buf[..])),
                    (false, true) => Some(ElementsMut::Indirect(split_mut(&mut buf, &vec![header.size; n as usize]))),
                };
                ctx = ctx.read_array_data(target, &counts, header.size)?;
                if !skip {
                    data = buf;
                }
            }
            SectionType::ArrayVar | SectionType::FileHeader => {
                let counts = (plan.partition)(index, header.count);
                let n = counts.get(rank).copied().unwrap_or(0);
                let mut local_sizes = vec![0u64; n as usize];
                ctx = ctx.read_varray_sizes(Some(&mut local_sizes), &counts)?;
                let sums = comm.allgather(local_sizes.iter().sum::<u64>())?;
                let mut buf = vec![0u8; sums[rank] as usize];
                let target = match (skip, plan.indirect) {
                    (true, _) => None,
                    (false, false) => Some(ElementsMut::Contiguous(&mut buf[..])),
                    (false, true) => Some(ElementsMut::Indirect(split_mut(&mut buf, &local_sizes))),
                };
                ctx = ctx.read_varray_data(target, &counts, &local_sizes, &sums)?;
                if !skip {
                    data = buf;
                    sizes = local_sizes;
                }
            }
        }
        out.push(LocalRead { header, data, sizes });
    }
    ctx.close()?;
    Ok(out)
}

/// Read every section of `image` on `plan.ranks` threads and reassemble
/// the global payloads in rank order.
pub fn run_read_check(image: &[u8], plan: &ReadPlan<'_>) -> Result<Vec<ReadSection>> {
    let storage = MemStorage::from_bytes(image.to_vec());
    let comms = Comm::world(plan.ranks, Schedule::Concurrent);
    let per_rank: Vec<Result<Vec<LocalRead>>> = thread::scope(|s| {
        let handles: Vec<_> = comms
            .into_iter()
            .map(|comm| {
                let st: Arc<dyn Storage> = Arc::new(storage.clone());
                s.spawn(move || rank_read(&comm, st, plan))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("rank thread panicked")).collect()
    });
    let per_rank: Vec<Vec<LocalRead>> = per_rank.into_iter().collect::<Result<_>>()?;
    let sections = per_rank[0].len();
    let mut out = Vec::with_capacity(sections);
    for i in 0..sections {
        let header = per_rank[0][i].header.clone();
        let mut data = Vec::new();
        let mut sizes = Vec::new();
        for r in &per_rank {
            data.extend_from_slice(&r[i].data);
            sizes.extend_from_slice(&r[i].sizes);
        }
        out.push(ReadSection { header, data, sizes });
    }
    Ok(out)
}

/// The sections a reader should observe for `script`.
pub fn expected_sections(script: &Script, opts: WriteOptions, decode: bool) -> Result<Vec<ReadSection>> {
    let style = opts.style;
    let header = |kind, count, size, user: &[u8], decoded| SectionHeader {
        kind,
        count,
        size,
        user: user.to_vec(),
        decoded,
    };
    let raw = |s: &Section| -> ReadSection {
        match s {
            Section::Inline { user, data } => ReadSection {
                header: header(SectionType::Inline, 0, 0, user, false),
                data: data.to_vec(),
                sizes: vec![],
            },
            Section::Block { user, data } => ReadSection {
                header: header(SectionType::Block, 0, data.len() as u64, user, false),
                data: data.clone(),
                sizes: vec![],
            },
            Section::ArrayFixed {
                user,
                count,
                elem_size,
                data,
            } => ReadSection {
                header: header(SectionType::ArrayFixed, *count, *elem_size, user, false),
                data: data.clone(),
                sizes: vec![],
            },
            Section::ArrayVar { user, sizes, data } => ReadSection {
                header: header(SectionType::ArrayVar, sizes.len() as u64, 0, user, false),
                data: data.clone(),
                sizes: sizes.clone(),
            },
        }
    };
    let mut out = Vec::new();
    for step in &script.steps {
        let logical = |decoded| match step {
            Step::Inline { user, data, .. } => ReadSection {
                header: header(SectionType::Inline, 0, 0, user, false),
                data: data.to_vec(),
                sizes: vec![],
            },
            Step::Block { user, data, .. } => ReadSection {
                header: header(SectionType::Block, 0, data.len() as u64, user, decoded),
                data: data.clone(),
                sizes: vec![],
            },
            Step::Array {
                user,
                count,
                elem_size,
                data,
                ..
            } => ReadSection {
                header: header(SectionType::ArrayFixed, *count, *elem_size, user, decoded),
                data: data.clone(),
                sizes: vec![],
            },
            Step::Varray { user, sizes, data, .. } => ReadSection {
                header: header(SectionType::ArrayVar, sizes.len() as u64, 0, user, decoded),
                data: data.clone(),
                sizes: sizes.clone(),
            },
        };
        if !step.encode() {
            out.push(logical(false));
        } else if decode {
            out.push(logical(true));
        } else {
            let pair = match step {
                Step::Block { user, data, .. } => wrap_compressed_block(user, data, style, opts.level)?,
                Step::Array {
                    user,
                    count,
                    elem_size,
                    data,
                    ..
                } => wrap_compressed_array_fixed(user, *count, *elem_size, data, style, opts.level)?,
                Step::Varray { user, sizes, data, .. } => {
                    wrap_compressed_array_var(user, sizes, data, style, opts.level)?
                }
                Step::Inline { .. } => unreachable!("inline steps are never encoded"),
            };
            out.extend(pair.iter().map(raw));
        }
    }
    Ok(out)
}

/// Random counts summing to `n` over `ranks`, with empty ranks likely.
pub fn random_partition(rng: &mut impl Rng, n: u64, ranks: usize) -> Vec<u64> {
    let mut cuts: Vec<u64> = (0..ranks - 1)
        .map(|_| match rng.gen_range(0..4) {
            0 => 0,
            1 => n,
            _ => rng.gen_range(0..=n),
        })
        .collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(ranks);
    let mut prev = 0;
    for c in cuts {
        out.push(c - prev);
        prev = c;
    }
    out.push(n - prev);
    out
}

/// Printable ASCII user string of random length.
pub fn random_user(rng: &mut impl Rng) -> Vec<u8> {
    let len = match rng.gen_range(0..4) {
        0 => 0,
        1 => USER_MAX,
        _ => rng.gen_range(0..=USER_MAX),
    };
    (0..len).map(|_| rng.gen_range(0x20u8..0x7f)).collect()
}

/// Random payload bytes; sometimes text-like so it compresses.
pub fn random_bytes(rng: &mut impl Rng, len: usize, ascii: bool) -> Vec<u8> {
    match (ascii, rng.gen_range(0..3)) {
        (_, 0) => {
            let alphabet = b"ab\n-= ";
            (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect()
        }
        (true, _) => (0..len).map(|_| rng.gen_range(0x20u8..0x7f)).collect(),
        (false, _) => (0..len).map(|_| rng.gen()).collect(),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScriptLimits {
    pub max_steps: usize,
    pub max_elements: u64,
    pub max_elem_size: u64,
    pub max_block: usize,
    /// Restrict payloads to printable ASCII.
    pub ascii: bool,
    /// Probability of requesting compression for a section.
    pub encode_rate: f64,
}

impl Default for ScriptLimits {
    fn default() -> Self {
        ScriptLimits {
            max_steps: 6,
            max_elements: 40,
            max_elem_size: 24,
            max_block: 300,
            ascii: false,
            encode_rate: 0.3,
        }
    }
}

pub fn random_script(rng: &mut impl Rng, limits: &ScriptLimits) -> Script {
    let steps = (0..rng.gen_range(0..=limits.max_steps))
        .map(|_| {
            let user = random_user(rng);
            let encode = rng.gen_bool(limits.encode_rate);
            let indirect = rng.gen_bool(0.5);
            match rng.gen_range(0..4) {
                0 => {
                    let mut data = [0u8; INLINE_DATA_LEN];
                    data.copy_from_slice(&random_bytes(rng, INLINE_DATA_LEN, limits.ascii));
                    Step::Inline {
                        user,
                        data,
                        root: rng.gen_range(0..8),
                    }
                }
                1 => {
                    let len = rng.gen_range(0..=limits.max_block);
                    Step::Block {
                        user,
                        data: random_bytes(rng, len, limits.ascii),
                        root: rng.gen_range(0..8),
                        encode,
                    }
                }
                2 => {
                    let count = rng.gen_range(0..=limits.max_elements);
                    let elem_size = rng.gen_range(0..=limits.max_elem_size);
                    Step::Array {
                        user,
                        count,
                        elem_size,
                        data: random_bytes(rng, (count * elem_size) as usize, limits.ascii),
                        encode,
                        indirect,
                    }
                }
                _ => {
                    let count = rng.gen_range(0..=limits.max_elements);
                    let sizes: Vec<u64> = (0..count)
                        .map(|_| {
                            if rng.gen_bool(0.2) {
                                0
                            } else {
                                rng.gen_range(0..=limits.max_elem_size)
                            }
                        })
                        .collect();
                    let total: u64 = sizes.iter().sum();
                    Step::Varray {
                        user,
                        sizes,
                        data: random_bytes(rng, total as usize, limits.ascii),
                        encode,
                        indirect,
                    }
                }
            }
        })
        .collect();
    Script {
        user: random_user(rng),
        steps,
    }
}

/// Random per-step partitions for `ranks`.
pub fn random_partitions(rng: &mut impl Rng, script: &Script, ranks: usize) -> Vec<Vec<u64>> {
    script
        .steps
        .iter()
        .map(|s| s.count().map(|n| random_partition(rng, n, ranks)).unwrap_or_default())
        .collect()
}

/// Outcome of one fuzz case.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CaseFailure {
    Error(String),
    Mismatch(String),
}

impl std::fmt::Display for CaseFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CaseFailure::Error(m) => write!(f, "error: {m}"),
            CaseFailure::Mismatch(m) => write!(f, "mismatch: {m}"),
        }
    }
}

fn err(e: Error) -> CaseFailure {
    CaseFailure::Error(e.to_string())
}

/// One full fuzz case derived from `seed`: serial and parallel writes
/// agree with the direct encoder, and a repartitioned read (with and
/// without decoding) reproduces the script.
pub fn fuzz_case(seed: u64, max_ranks: usize) -> std::result::Result<(), CaseFailure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let script = random_script(&mut rng, &ScriptLimits::default());
    let opts = WriteOptions {
        style: if rng.gen_bool(0.5) {
            crate::wire::LineStyle::Unix
        } else {
            crate::wire::LineStyle::Mime
        },
        level: if rng.gen_bool(0.5) {
            crate::compress::Level::NONE
        } else {
            crate::compress::Level::BEST
        },
    };
    let expected = encode_script(&script, opts).map_err(err)?;
    let serial = run_serial(&script, opts).map_err(err)?;
    if serial != expected {
        return Err(CaseFailure::Mismatch("serial write differs from direct encoding".into()));
    }
    let ranks = rng.gen_range(1..=max_ranks.max(1));
    let partitions = random_partitions(&mut rng, &script, ranks);
    let schedule = Schedule::Seeded(rng.gen());
    let parallel = run_parallel(&script, opts, ranks, partitions, schedule).map_err(err)?;
    if parallel != expected {
        return Err(CaseFailure::Mismatch(format!("parallel write on {ranks} ranks differs")));
    }
    let read_ranks = rng.gen_range(1..=max_ranks.max(1));
    let part_seed: u64 = rng.gen();
    let partition = move |i: usize, n: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(part_seed ^ i as u64);
        random_partition(&mut r, n, read_ranks)
    };
    for decode in [false, true] {
        let plan = ReadPlan {
            ranks: read_ranks,
            decode,
            partition: &partition,
            skip: &|_, _| false,
            indirect: decode,
        };
        let got = run_read_check(&expected, &plan).map_err(err)?;
        let want = expected_sections(&script, opts, decode).map_err(err)?;
        if got != want {
            return Err(CaseFailure::Mismatch(format!(
                "read back on {read_ranks} ranks with decode={decode} differs"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct SelftestReport {
    pub passed: usize,
    /// Failing case seeds with their failure.
    pub failed: Vec<(u64, CaseFailure)>,
}

/// Run `cases` fuzz cases with seeds derived from `seed`.
pub fn selftest(cases: usize, max_ranks: usize, seed: u64) -> SelftestReport {
    let mut report = SelftestReport::default();
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cases {
        let case_seed: u64 = seeds.gen();
        match fuzz_case(case_seed, max_ranks) {
            Ok(()) => report.passed += 1,
            Err(f) => report.failed.push((case_seed, f)),
        }
    }
    report
}
