//! Acceptance criteria 1-9. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion; exits nonzero if any criterion fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scda::compress::{armor, compress_element, dearmor, Level, MAGIC_ARRAY_FIXED, MAGIC_ARRAY_VAR, MAGIC_BLOCK};
use scda::error::ferror_string;
use scda::parsim::{
    encode_script, expected_sections, random_partitions, random_script, run_parallel, run_read_check, run_serial,
    ReadPlan, ReadSection, Script, ScriptLimits, Step,
};
use scda::sections::{
    encode_array_fixed, encode_block, encode_file, encode_file_header, encode_inline, index_file, FileHeader, Section,
};
use scda::storage::MemStorage;
use scda::validate::validate;
use scda::wire::{data_pad_length, decode_count, pad_data, pad_fixed, unpad_fixed};
use scda::{Comm, ElementsMut, ErrorCode, FileContext, LineStyle, Schedule, SectionType, WriteOptions};

type Outcome = Result<(), String>;

const STYLES: [LineStyle; 2] = [LineStyle::Unix, LineStyle::Mime];

/// Codes produced anywhere in this suite, for the message check.
static SEEN: Mutex<BTreeSet<i32>> = Mutex::new(BTreeSet::new());

fn seen(code: ErrorCode) {
    SEEN.lock().unwrap().insert(code.0);
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        if !$cond {
            return Err(format!($($msg)*));
        }
    };
}

fn err_str(e: scda::Error) -> String {
    seen(e.code());
    e.to_string()
}

fn structural() -> Outcome {
    for style in STYLES {
        let f = encode_file_header(&FileHeader::new(&b"scda-kit 0.1"[..], &b"u"[..]), style).map_err(err_str)?;
        ensure!(f.len() == 128, "F section is {} bytes", f.len());
        let i = encode_inline(b"u", &[b'x'; 32], style).map_err(err_str)?;
        ensure!(i.len() == 96, "I section is {} bytes", i.len());
        let b = encode_block(b"", b"", style).map_err(err_str)?;
        ensure!(b.len() == 128, "empty B section is {} bytes", b.len());
        let a = encode_array_fixed(b"", scda::Count::ZERO, scda::Count::new(4).unwrap(), b"", style).map_err(err_str)?;
        ensure!(a.len() == 160, "empty A section is {} bytes", a.len());
    }
    // The same sizes through the context API.
    let script = Script {
        user: vec![],
        steps: vec![
            Step::Inline { user: vec![], data: [0; 32], root: 0 },
            Step::Block { user: vec![], data: vec![], root: 0, encode: false },
            Step::Array { user: vec![], count: 0, elem_size: 4, data: vec![], encode: false, indirect: false },
        ],
    };
    let image = run_serial(&script, WriteOptions::default()).map_err(err_str)?;
    let lens: Vec<u64> = index_file(&image[..]).map_err(err_str)?.sections.iter().map(|s| s.file_length).collect();
    ensure!(lens == [96, 128, 160], "API section lengths {lens:?}");
    ensure!(image.len() == 128 + 96 + 128 + 160, "API file length {}", image.len());
    Ok(())
}

fn padding_laws() -> Outcome {
    for style in STYLES {
        for n in 0..=200usize {
            for last in [b'a', b'\n'] {
                let mut data = vec![b'a'; n];
                if let Some(l) = data.last_mut() {
                    *l = last;
                }
                let p = pad_data(&data, style).len();
                ensure!((7..=38).contains(&p), "n={n}: pad length {p}");
                ensure!((n + p) % 32 == 0, "n={n}: {n}+{p} not aligned");
                ensure!(p == data_pad_length(n as u128), "n={n}: length function disagrees");
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let alphabet = [b' ', b'-', b'x'];
    for d in [24usize, 30, 62] {
        for style in STYLES {
            for len in 0..=d - 4 {
                let data: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
                let padded = pad_fixed(&data, d, style).map_err(err_str)?;
                ensure!(padded.len() == d, "d={d} len={len}: width {}", padded.len());
                ensure!(unpad_fixed(&padded).map_err(err_str)? == &data[..], "d={d} len={len}: random data");
                // Every dash/space/x suffix of length up to 5.
                let k = len.min(5);
                for code in 0..3usize.pow(k as u32) {
                    let mut adv = vec![b'a'; len - k];
                    let mut c = code;
                    for _ in 0..k {
                        adv.push(alphabet[c % 3]);
                        c /= 3;
                    }
                    let padded = pad_fixed(&adv, d, style).map_err(err_str)?;
                    ensure!(
                        unpad_fixed(&padded).map_err(err_str)? == &adv[..],
                        "d={d}: suffix {:?}",
                        String::from_utf8_lossy(&adv)
                    );
                }
            }
            ensure!(pad_fixed(&vec![b'x'; d - 3], d, style).is_err(), "d={d}: oversize accepted");
        }
    }
    Ok(())
}

fn random_opts(rng: &mut impl Rng) -> WriteOptions {
    WriteOptions {
        style: STYLES[rng.gen_range(0..2)],
        level: if rng.gen_bool(0.5) { Level::NONE } else { Level::BEST },
    }
}

fn partition_independence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..1000 {
        let script = random_script(&mut rng, &ScriptLimits::default());
        let opts = random_opts(&mut rng);
        let serial = run_serial(&script, opts).map_err(err_str)?;
        ensure!(serial == encode_script(&script, opts).map_err(err_str)?, "case {case}: serial differs from encoder");
        let ranks = rng.gen_range(1..=8);
        let partitions = random_partitions(&mut rng, &script, ranks);
        for _ in 0..3 {
            let seed: u64 = rng.gen();
            let image = run_parallel(&script, opts, ranks, partitions.clone(), Schedule::Seeded(seed)).map_err(err_str)?;
            ensure!(image == serial, "case {case}: {ranks} ranks, schedule seed {seed} differs");
        }
    }
    Ok(())
}

fn repartition_reads() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let limits = ScriptLimits { encode_rate: 0.5, ..ScriptLimits::default() };
    let scripts: Vec<(Script, WriteOptions)> =
        (0..6).map(|_| (random_script(&mut rng, &limits), random_opts(&mut rng))).collect();
    for pw in 1..=5 {
        for pr in 1..=5 {
            for (k, (script, opts)) in scripts.iter().enumerate() {
                let parts = random_partitions(&mut rng, script, pw);
                let image = run_parallel(script, *opts, pw, parts, Schedule::Seeded(rng.gen())).map_err(err_str)?;
                let seed: u64 = rng.gen();
                let partition = move |i: usize, n: u64| {
                    scda::parsim::random_partition(&mut ChaCha8Rng::seed_from_u64(seed ^ i as u64), n, pr)
                };
                for decode in [false, true] {
                    let plan = ReadPlan {
                        ranks: pr,
                        decode,
                        partition: &partition,
                        skip: &|_, _| false,
                        indirect: k % 2 == 1,
                    };
                    let got = run_read_check(&image, &plan).map_err(err_str)?;
                    let want = expected_sections(script, *opts, decode).map_err(err_str)?;
                    ensure!(got == want, "P_w={pw} P_r={pr} script {k} decode={decode}: payloads differ");
                }
            }
        }
    }
    Ok(())
}

fn read_all(image: &[u8], decode: bool) -> Vec<ReadSection> {
    let plan = ReadPlan { ranks: 1, decode, partition: &|_, n| vec![n], skip: &|_, _| false, indirect: false };
    run_read_check(image, &plan).unwrap()
}

/// One fuzzed logical section of each kind.
fn fuzz_bytes(rng: &mut impl Rng, n: usize) -> Vec<u8> {
    if rng.gen_bool(0.5) {
        (0..n).map(|_| rng.gen()).collect()
    } else {
        (0..n).map(|i| b"scda "[(i / 3) % 5]).collect()
    }
}

fn fuzz_steps(rng: &mut impl Rng) -> Vec<Step> {
    let len = rng.gen_range(0..3000);
    let block = fuzz_bytes(rng, len);
    let (n, e) = (rng.gen_range(0..30u64), rng.gen_range(0..40u64));
    let arr = fuzz_bytes(rng, (n * e) as usize);
    let count = rng.gen_range(0..30);
    let sizes: Vec<u64> = (0..count).map(|_| rng.gen_range(0..200)).collect();
    let var = fuzz_bytes(rng, sizes.iter().sum::<u64>() as usize);
    vec![
        Step::Block { user: b"blk".to_vec(), data: block, root: 0, encode: true },
        Step::Array { user: b"arr".to_vec(), count: n, elem_size: e, data: arr, encode: true, indirect: false },
        Step::Varray { user: b"var".to_vec(), sizes, data: var, encode: true, indirect: true },
    ]
}

fn check_raw_wrappers(raw: &[ReadSection], steps: &[Step]) -> Outcome {
    ensure!(raw.len() == 6, "{} raw sections", raw.len());
    let h = |i: usize| &raw[i].header;
    ensure!(h(0).kind == SectionType::Inline && h(0).user == MAGIC_BLOCK, "block wrapper metadata");
    ensure!(raw[0].data.starts_with(format!("U {} ", steps[0].data().len()).as_bytes()), "block U entry");
    ensure!(h(1).kind == SectionType::Block && h(1).user == b"blk", "block wrapper data section");
    ensure!(h(2).kind == SectionType::Inline && h(2).user == MAGIC_ARRAY_FIXED, "fixed wrapper metadata");
    let Step::Array { count, elem_size, .. } = &steps[1] else { unreachable!() };
    ensure!(raw[2].data.starts_with(format!("U {elem_size} ").as_bytes()), "fixed wrapper U entry");
    ensure!(h(3).kind == SectionType::ArrayVar && h(3).count == *count && h(3).user == b"arr", "fixed wrapper data");
    let Step::Varray { sizes, .. } = &steps[2] else { unreachable!() };
    ensure!(
        h(4).kind == SectionType::ArrayFixed && h(4).user == MAGIC_ARRAY_VAR && h(4).size == 32,
        "variable wrapper metadata {:?}",
        h(4)
    );
    ensure!(h(4).count == sizes.len() as u64, "variable wrapper metadata count");
    for (i, s) in sizes.iter().enumerate() {
        let entry = &raw[4].data[32 * i..32 * i + 32];
        ensure!(entry.starts_with(format!("U {s} ").as_bytes()), "variable wrapper U entry {i}");
    }
    ensure!(h(5).kind == SectionType::ArrayVar && h(5).user == b"var", "variable wrapper data");
    ensure!(raw.iter().all(|r| !r.header.decoded), "raw view reported decoded");
    Ok(())
}

/// Read one encoded block whose single element is `armored` and return the error code.
fn element_error(armored: Vec<u8>, u: u64) -> i32 {
    let sections = [
        Section::Inline { user: MAGIC_BLOCK.to_vec(), data: scda::compress::encode_u_entry(u, LineStyle::Unix) },
        Section::Block { user: b"x".to_vec(), data: armored },
    ];
    let image = encode_file(&FileHeader::new(&b"v"[..], &b""[..]), &sections, LineStyle::Unix).unwrap();
    let comm = Comm::solo();
    let r = (|| {
        let (ctx, _) = FileContext::open(&comm, Arc::new(MemStorage::from_bytes(image)))?;
        let (ctx, h) = ctx.read_section_header(true)?;
        let size = h.unwrap().size;
        let mut buf = vec![0u8; size as usize];
        ctx.read_block_data(Some(&mut buf), size, 0)?.close()
    })();
    let code = ErrorCode::from_result(&r);
    seen(code);
    code.0
}

fn compression_transparency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for round in 0..20 {
        for level in [Level::NONE, Level::BEST] {
            for style in STYLES {
                let steps = fuzz_steps(&mut rng);
                let script = Script { user: b"c".to_vec(), steps: steps.clone() };
                let opts = WriteOptions { style, level };
                let image = run_serial(&script, opts).map_err(err_str)?;
                let decoded = read_all(&image, true);
                ensure!(decoded.len() == 3, "round {round}: {} logical sections", decoded.len());
                for (got, step) in decoded.iter().zip(&steps) {
                    ensure!(got.data == step.data() && got.header.decoded, "round {round}: {:?} payload differs", step.kind());
                    ensure!(got.header.user == step.user(), "round {round}: user string lost");
                }
                let plain: Vec<Step> = steps
                    .iter()
                    .cloned()
                    .map(|mut s| {
                        match &mut s {
                            Step::Block { encode, .. } | Step::Array { encode, .. } | Step::Varray { encode, .. } => {
                                *encode = false
                            }
                            Step::Inline { .. } => {}
                        }
                        s
                    })
                    .collect();
                let plain_image = run_serial(&Script { user: b"c".to_vec(), steps: plain }, opts).map_err(err_str)?;
                let plain_read = read_all(&plain_image, false);
                for (a, b) in decoded.iter().zip(&plain_read) {
                    ensure!(a.data == b.data && a.sizes == b.sizes, "round {round}: differs from uncompressed write");
                }
                check_raw_wrappers(&read_all(&image, false), &steps).map_err(|m| format!("round {round}: {m}"))?;
            }
        }
    }

    // The three redundant checks, each mutated on its own.
    let data = b"redundant checks in the element codec ".repeat(20);
    let u = data.len() as u64;
    let stage = dearmor(&compress_element(&data, LineStyle::Unix, Level::BEST).armored).map_err(err_str)?;
    let ok = element_error(armor(&stage, LineStyle::Unix), u);
    ensure!(ok == 0, "unmodified element fails with {ok}");
    let mut no_z = stage.clone();
    no_z[8] = b'y';
    let mut bad_size = stage.clone();
    bad_size[7] = bad_size[7].wrapping_add(1);
    let mut bad_sum = stage.clone();
    *bad_sum.last_mut().unwrap() ^= 0x01;
    let codes = [
        element_error(armor(&no_z, LineStyle::Unix), u),
        element_error(armor(&bad_size, LineStyle::Unix), u),
        element_error(armor(&bad_sum, LineStyle::Unix), u),
    ];
    ensure!(codes == [122, 125, 124], "marker/size/checksum mutations gave {codes:?}");
    Ok(())
}

fn decode_table() -> Outcome {
    let script = Script {
        user: vec![],
        steps: vec![
            Step::Block { user: b"raw".to_vec(), data: b"plain".to_vec(), root: 0, encode: false },
            Step::Block { user: b"packed".to_vec(), data: b"compress me".to_vec(), root: 0, encode: true },
        ],
    };
    let image = run_serial(&script, WriteOptions::default()).map_err(err_str)?;
    let raw = read_all(&image, false);
    let dec = read_all(&image, true);
    let h = |s: &ReadSection| (s.header.kind, s.header.count, s.header.size, s.header.user.clone(), s.header.decoded);
    // decode in = 0, raw section: raw view, decode out = 0.
    ensure!(h(&raw[0]) == (SectionType::Block, 0, 5, b"raw".to_vec(), false), "cell (0, raw): {:?}", raw[0].header);
    // decode in = 0, compression header: first section read undecoded.
    ensure!(
        h(&raw[1]) == (SectionType::Inline, 0, 0, MAGIC_BLOCK.to_vec(), false),
        "cell (0, wrapper): {:?}",
        raw[1].header
    );
    // decode in = 1, raw section: read as is, decode out = 0.
    ensure!(h(&dec[0]) == (SectionType::Block, 0, 5, b"raw".to_vec(), false), "cell (1, raw): {:?}", dec[0].header);
    // decode in = 1, compression header: logical view, decode out = 1.
    ensure!(
        h(&dec[1]) == (SectionType::Block, 0, 11, b"packed".to_vec(), true),
        "cell (1, wrapper): {:?}",
        dec[1].header
    );
    ensure!(dec[1].data == b"compress me", "decoded payload");
    Ok(())
}

fn ascii_closure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let limits = ScriptLimits { ascii: true, encode_rate: 0.5, ..ScriptLimits::default() };
    for case in 0..300 {
        let script = random_script(&mut rng, &limits);
        let opts = random_opts(&mut rng);
        let image = run_serial(&script, opts).map_err(err_str)?;
        let allowed = |b: u8| (0x20..0x7f).contains(&b) || b == b'\n' || (b == b'\r' && opts.style == LineStyle::Mime);
        if let Some(at) = image.iter().position(|&b| !allowed(b)) {
            return Err(format!("case {case} ({:?}): byte {:#04x} at {at}", opts.style, image[at]));
        }
    }
    Ok(())
}

const GOLDEN: &[u8] = include_bytes!("golden/three_sections.scd");
/// Count entries of the golden file: block size, array count, element size.
const COUNT_ENTRIES: [(usize, u8); 3] = [(288, b'E'), (416, b'N'), (448, b'E')];

/// Read every section through the API, inflating when the header says so.
fn api_read(image: &[u8], decode: bool) -> scda::Result<()> {
    let comm = Comm::solo();
    let limit = image.len() as u64 * 1100 + 4096;
    let (mut ctx, _) = FileContext::open(&comm, Arc::new(MemStorage::from_bytes(image.to_vec())))?;
    loop {
        let (next, h) = ctx.read_section_header(decode)?;
        let Some(h) = h else { return next.close() };
        ctx = match h.kind {
            SectionType::Inline => next.read_inline_data(Some(&mut [0; 32]), 0)?,
            SectionType::Block => {
                let mut buf = vec![0u8; if h.size <= limit { h.size as usize } else { 0 }];
                next.read_block_data((h.size <= limit).then_some(&mut buf[..]), h.size, 0)?
            }
            SectionType::ArrayFixed if h.count.saturating_mul(h.size) <= limit => {
                let mut buf = vec![0u8; (h.count * h.size) as usize];
                next.read_array_data(Some(ElementsMut::Contiguous(&mut buf)), &[h.count], h.size)?
            }
            SectionType::ArrayFixed => next.read_array_data(None, &[h.count], h.size)?,
            _ => {
                let mut sizes = vec![0u64; h.count.min(limit) as usize];
                if sizes.len() as u64 != h.count {
                    return next.read_varray_sizes(None, &[h.count]).map(|_| ());
                }
                let next = next.read_varray_sizes(Some(&mut sizes), &[h.count])?;
                let total = sizes.iter().fold(0u64, |a, &s| a.saturating_add(s));
                let mut buf = vec![0u8; if total <= limit { total as usize } else { 0 }];
                let out = (total <= limit).then_some(ElementsMut::Contiguous(&mut buf));
                next.read_varray_data(out, &[h.count], &sizes, &[total])?
            }
        };
    }
}

fn error_robustness() -> Outcome {
    ensure!(validate(GOLDEN, true).is_valid(), "golden file is not valid");
    ensure!(index_file(GOLDEN).map_err(err_str)?.sections.len() == 3, "golden file is not three sections");
    for (entry, letter) in COUNT_ENTRIES {
        ensure!(decode_count(&GOLDEN[entry..entry + 32], letter).is_ok(), "no count entry at {entry}");
    }
    let mut outcomes = [0usize; 2];
    for pos in 0..GOLDEN.len() {
        for flip in (0..8).map(|b| 1u8 << b).chain([0xff]) {
            let mut f = GOLDEN.to_vec();
            f[pos] ^= flip;
            let run = catch_unwind(AssertUnwindSafe(|| {
                let lenient = index_file(&f[..]);
                let strict = validate(&f[..], true);
                let api = [api_read(&f, false), api_read(&f, true)];
                (lenient, strict, api)
            }));
            let (lenient, strict, api) = run.map_err(|_| format!("panic at byte {pos} flip {flip:#04x}"))?;
            for r in &api {
                let c = ErrorCode::from_result(r);
                seen(c);
                ensure!(c.message().is_some(), "byte {pos}: unknown code {}", c.0);
            }
            match lenient {
                Ok(_) => outcomes[0] += 1,
                Err(e) => {
                    seen(e.code());
                    outcomes[1] += 1;
                    ensure!(api[0].is_err(), "byte {pos} flip {flip:#04x}: API accepted what indexing rejects");
                }
            }
            if let Some(v) = &strict.violation {
                seen(v.code());
                let off = v.offset().ok_or_else(|| format!("byte {pos}: violation without offset: {v}"))?;
                ensure!(off <= f.len() as u64, "byte {pos}: offset {off} beyond file");
                // A count entry that no longer parses is reported inside itself.
                for (entry, letter) in COUNT_ENTRIES {
                    let range = entry..entry + 32;
                    if range.contains(&pos) && decode_count(&f[range.clone()], letter).is_err() {
                        ensure!(range.contains(&(off as usize)), "byte {pos}: entry at {entry} reported at {off}");
                    }
                }
            }
        }
    }
    ensure!(outcomes[0] > 0 && outcomes[1] > 0, "degenerate outcome split {outcomes:?}");
    Ok(())
}

fn error_strings() -> Outcome {
    let mut codes: BTreeSet<i32> = SEEN.lock().unwrap().clone();
    codes.extend(ErrorCode::all().map(|c| c.0));
    for c in &codes {
        let mut buf = [0u8; 128];
        let mut len = 0;
        ensure!(ferror_string(*c, &mut buf, &mut len) == 0, "code {c} rejected");
        ensure!(len > 0, "code {c} has an empty message");
    }
    for bad in [-1, 1, 99, 126, 199, 207, 310, 1000, i32::MIN, i32::MAX] {
        let mut buf = [0u8; 128];
        let mut len = 0;
        ensure!(ferror_string(bad, &mut buf, &mut len) < 0, "integer {bad} accepted");
    }
    Ok(())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, u64); 9] = [
        ("structural exactness", structural, 1),
        ("padding laws", padding_laws, 5),
        ("partition independence", partition_independence, 60),
        ("repartition reads", repartition_reads, 30),
        ("compression transparency", compression_transparency, 30),
        ("decode table", decode_table, 1),
        ("ascii closure", ascii_closure, 5),
        ("error robustness", error_robustness, 60),
        ("error strings", error_strings, 1),
    ];
    let mut failed = 0;
    for (i, (name, check, limit)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let outcome = outcome.and_then(|()| {
            if took > Duration::from_secs(limit) {
                Err(format!("exceeded the {limit} s limit"))
            } else {
                Ok(())
            }
        });
        match outcome {
            Ok(()) => println!("criterion {}: PASS {name} ({:.2} s, limit {limit} s)", i + 1, took.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name} ({:.2} s): {why}", i + 1, took.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
