//! `scda` command-line tool: inspect, validate, extract, create, and
//! self-test scda files.

mod escape;
mod inspect;
mod manifest;

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::anyhow;
use clap::{Parser, Subcommand, ValueEnum};

use scda::compress::Level;
use scda::sections::SeekSource;
use scda::storage::FsStorage;
use scda::validate::validate;
use scda::{Comm, Elements, ErrorGroup, FileContext, LineStyle, SectionType, WriteOptions};

use manifest::Payload;

#[derive(Parser)]
#[command(name = "scda", version, about = "Inspect, validate, extract, create and self-test scda files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Style {
    Unix,
    Mime,
}

#[derive(Subcommand)]
enum Command {
    /// List the file header and every section.
    Info {
        file: PathBuf,
        /// Show compressed sections as the sections they encode.
        #[arg(long)]
        decode: bool,
        /// Machine-readable output; user strings are base64.
        #[arg(long)]
        json: bool,
    },
    /// Check the file layout. Exit 0 if valid, 1 if invalid, 2 on I/O failure.
    Validate {
        file: PathBuf,
        /// Also require one line style, exact padding, and decodable compression.
        #[arg(long)]
        strict: bool,
    },
    /// Write the payload of section INDEX (as numbered by `info`) into a directory.
    Extract {
        file: PathBuf,
        index: usize,
        #[arg(long)]
        decode: bool,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Build a file from a manifest.
    Create {
        manifest: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "unix")]
        style: Style,
        /// Compress block and array sections unless a line says otherwise.
        #[arg(long)]
        encode: bool,
        /// Deflate level, 0 to 9.
        #[arg(long, default_value_t = 9, value_parser = clap::value_parser!(u32).range(0..=9))]
        level: u32,
    },
    /// Run randomized serial-equivalence and repartition checks.
    Selftest {
        #[arg(long, default_value_t = 200)]
        cases: usize,
        #[arg(long, default_value_t = 8)]
        max_ranks: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Run only the case with this seed, as printed for a failure.
        #[arg(long)]
        replay: Option<u64>,
    },
}

/// Failure with the exit status it maps to.
struct Failure {
    status: u8,
    message: String,
}

impl From<scda::Error> for Failure {
    fn from(e: scda::Error) -> Self {
        let code = e.code();
        let status = if code.group() == Some(ErrorGroup::FileSystem) { 2 } else { 1 };
        Failure {
            status,
            message: format!("error {}: {e}", code.0),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure {
            status: 1,
            message: format!("error: {e:#}"),
        }
    }
}

type Outcome = Result<u8, Failure>;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        status: 2,
        message: format!("error: {}: {e}", path.display()),
    }
}

/// Write to stdout; a closed pipe ends output quietly.
fn emit(text: &str) -> Result<(), Failure> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(io_failure(Path::new("stdout"), e)),
        _ => Ok(()),
    }
}

fn info(file: &Path, decode: bool, json: bool) -> Outcome {
    let (listing, _) = inspect::walk(file, decode, None)?;
    if json {
        let text = serde_json::to_string_pretty(&listing).map_err(anyhow::Error::from)?;
        emit(&format!("{text}\n"))?;
    } else {
        emit(&inspect::render(&listing))?;
    }
    Ok(0)
}

fn validate_cmd(file: &Path, strict: bool) -> Outcome {
    let f = File::open(file).map_err(|e| io_failure(file, e))?;
    let src = SeekSource::new(f).map_err(|e| io_failure(file, e))?;
    let report = validate(&src, strict);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    match &report.violation {
        None => {
            let n = report.index.as_ref().map_or(0, |i| i.sections.len());
            let style = report.style.map_or("unknown", LineStyle::name);
            println!("valid: {n} sections, {style} line style");
            Ok(0)
        }
        Some(v) if v.code().group() == Some(ErrorGroup::FileSystem) => Err(v.clone().into()),
        Some(v) => {
            let at = v.offset().map_or("unknown offset".to_string(), |o| format!("byte {o}"));
            println!("invalid at {at}: {} (code {})", v.code().message().unwrap_or("?"), v.code().0);
            Ok(1)
        }
    }
}

fn extract(file: &Path, index: usize, decode: bool, output: &Path) -> Outcome {
    let (listing, got) = inspect::walk(file, decode, Some(index))?;
    let got = got.ok_or_else(|| {
        scda::Error::Usage {
            kind: scda::error::UsageKind::Range,
            detail: format!("section index {index} out of range, file has {} sections", listing.sections.len()),
        }
    })?;
    fs::create_dir_all(output).map_err(|e| io_failure(output, e))?;
    let write = |name: String, bytes: &[u8]| -> Result<(), Failure> {
        let path = output.join(name);
        fs::write(&path, bytes).map_err(|e| io_failure(&path, e))
    };
    if got.kind == Some(SectionType::ArrayVar) {
        let mut at = 0usize;
        for (i, &s) in got.sizes.iter().enumerate() {
            write(format!("elem_{i}.bin"), &got.data[at..at + s as usize])?;
            at += s as usize;
        }
        println!("wrote {} elements to {}", got.sizes.len(), output.display());
    } else {
        write(format!("section_{index}.bin"), &got.data)?;
        println!("wrote {} bytes to {}", got.data.len(), output.join(format!("section_{index}.bin")).display());
    }
    Ok(0)
}

fn create(manifest_path: &Path, output: &Path, style: Style, encode: bool, level: u32) -> Outcome {
    let text = fs::read_to_string(manifest_path).map_err(|e| io_failure(manifest_path, e))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let m = manifest::parse(&text, base).map_err(|e| anyhow!("{}: {e}", manifest_path.display()))?;
    let opts = WriteOptions {
        style: match style {
            Style::Unix => LineStyle::Unix,
            Style::Mime => LineStyle::Mime,
        },
        level: Level::new(level)?,
    };
    let storage = FsStorage::create(output).map_err(|e| io_failure(output, e))?;
    let comm = Comm::solo();
    let mut ctx = FileContext::create(&comm, Arc::new(storage), &m.user, opts)?;
    for entry in &m.entries {
        let enc = entry.encode.unwrap_or(encode);
        let user = &entry.user;
        let line = |e: scda::Error| -> Failure {
            let f = Failure::from(e);
            Failure {
                status: f.status,
                message: format!("{}: line {}: {}", manifest_path.display(), entry.line, f.message),
            }
        };
        ctx = match &entry.payload {
            Payload::Inline(d) => ctx.write_inline(Some(d), user, 0),
            Payload::Block(d) => ctx.write_block(Some(d), d.len() as u64, user, 0, enc),
            Payload::Array { count, elem_size, data } => {
                ctx.write_array(Elements::Contiguous(data), &[*count], *elem_size, user, enc)
            }
            Payload::Varray { sizes, data } => {
                let sum: u64 = sizes.iter().sum();
                ctx.write_varray(Elements::Contiguous(data), &[sizes.len() as u64], sizes, &[sum], user, enc)
            }
        }
        .map_err(line)?;
    }
    ctx.close()?;
    println!("wrote {} sections to {}", m.entries.len(), output.display());
    Ok(0)
}

fn selftest(cases: usize, max_ranks: usize, seed: u64, replay: Option<u64>) -> Outcome {
    if max_ranks == 0 {
        return Err(anyhow!("--max-ranks must be at least 1").into());
    }
    let start = Instant::now();
    if let Some(case) = replay {
        return match scda::parsim::fuzz_case(case, max_ranks) {
            Ok(()) => {
                println!("case {case:#018x}: pass");
                Ok(0)
            }
            Err(f) => {
                println!("case {case:#018x}: FAIL {f}");
                Ok(1)
            }
        };
    }
    let report = scda::parsim::selftest(cases, max_ranks, seed);
    for (case, failure) in &report.failed {
        println!("FAIL case {case:#018x}: {failure}");
        println!("  replay: scda selftest --replay {case} --max-ranks {max_ranks}");
    }
    println!(
        "selftest: {} passed, {} failed ({} cases, up to {max_ranks} ranks, seed {seed}, {:.1} s)",
        report.passed,
        report.failed.len(),
        cases,
        start.elapsed().as_secs_f64()
    );
    Ok(u8::from(!report.failed.is_empty()))
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Info { file, decode, json } => info(&file, decode, json),
        Command::Validate { file, strict } => validate_cmd(&file, strict),
        Command::Extract { file, index, decode, output } => extract(&file, index, decode, &output),
        Command::Create { manifest, output, style, encode, level } => {
            if manifest == output {
                Err(anyhow!("manifest and output are the same file").into())
            } else {
                create(&manifest, &output, style, encode, level)
            }
        }
        Command::Selftest { cases, max_ranks, seed, replay } => selftest(cases, max_ranks, seed, replay),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(status) => ExitCode::from(status),
        Err(f) => {
            eprintln!("{}", f.message);
            ExitCode::from(f.status)
        }
    }
}
