//! Line-oriented manifest describing the sections of a file to create.
//!
//! ```text
//! # comment
//! F "file user string"
//! I "user" data="32 bytes, escapes allowed"
//! I "user" file=inline.bin
//! B "user" file=block.bin
//! A "user" N=5 E=4 file=array.bin
//! V "user" sizes=1,0,5 file=var.bin
//! ```
//!
//! Values are bare tokens or double-quoted escaped strings. Relative
//! paths resolve against the manifest's directory. `encode=yes|no` on a
//! B, A or V line overrides the command-line default.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::escape::unescape;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Inline([u8; 32]),
    Block(Vec<u8>),
    Array { count: u64, elem_size: u64, data: Vec<u8> },
    Varray { sizes: Vec<u64>, data: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub user: Vec<u8>,
    pub payload: Payload,
    pub encode: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub user: Vec<u8>,
    pub entries: Vec<Entry>,
}

/// Split a line into tokens, honouring double quotes.
fn tokenize(line: &str) -> Result<Vec<String>, String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let mut in_token = false;
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        match c {
            '"' => {
                in_token = true;
                cur.push('"');
                loop {
                    match chars.next() {
                        Some('\\') => {
                            cur.push('\\');
                            cur.push(chars.next().ok_or("dangling backslash")?);
                        }
                        Some('"') => {
                            cur.push('"');
                            break;
                        }
                        Some(c) => cur.push(c),
                        None => return Err("unterminated string".into()),
                    }
                }
            }
            c if c.is_whitespace() => {
                if in_token {
                    tokens.push(std::mem::take(&mut cur));
                    in_token = false;
                }
            }
            c => {
                in_token = true;
                cur.push(c);
            }
        }
    }
    if in_token {
        tokens.push(cur);
    }
    Ok(tokens)
}

/// A token that is either `"escaped"` or a bare word.
fn value(token: &str) -> Result<Vec<u8>, String> {
    match token.strip_prefix('"') {
        Some(rest) => {
            let inner = rest.strip_suffix('"').ok_or("string must end with a quote")?;
            unescape(inner)
        }
        None => Ok(token.as_bytes().to_vec()),
    }
}

fn number(keys: &BTreeMap<String, Vec<u8>>, key: &str) -> Result<u64, String> {
    let raw = keys.get(key).ok_or_else(|| format!("missing {key}="))?;
    std::str::from_utf8(raw)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format!("{key}= must be a non-negative integer"))
}

fn sizes(raw: &[u8]) -> Result<Vec<u64>, String> {
    let text = std::str::from_utf8(raw).map_err(|_| "sizes= must be ASCII".to_string())?;
    if text.trim().is_empty() {
        return Ok(vec![]);
    }
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| format!("bad element size {s:?}")))
        .collect()
}

fn read_file(base: &Path, keys: &BTreeMap<String, Vec<u8>>) -> Result<Vec<u8>, String> {
    let raw = keys.get("file").ok_or("missing file=")?;
    let name = String::from_utf8(raw.clone()).map_err(|_| "file= must be UTF-8".to_string())?;
    let path = base.join(PathBuf::from(&name));
    fs::read(&path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn parse_line(tokens: &[String], base: &Path, line: usize) -> Result<Entry, String> {
    let (kind, rest) = tokens.split_first().ok_or("empty line")?;
    let (user, rest) = rest.split_first().ok_or("missing user string")?;
    if !user.starts_with('"') {
        return Err("user string must be quoted".into());
    }
    let user = value(user)?;
    let mut keys = BTreeMap::new();
    for t in rest {
        let (k, v) = t.split_once('=').ok_or_else(|| format!("expected key=value, got {t:?}"))?;
        if keys.insert(k.to_string(), value(v)?).is_some() {
            return Err(format!("{k}= given twice"));
        }
    }
    let allowed: &[&str] = match kind.as_str() {
        "I" => &["data", "file"],
        "B" => &["file", "encode"],
        "A" => &["N", "E", "file", "encode"],
        "V" => &["sizes", "file", "encode"],
        other => return Err(format!("unknown section type {other:?}")),
    };
    if let Some(k) = keys.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(format!("key {k}= not allowed on a {kind} line"));
    }
    let encode = match keys.get("encode").map(Vec::as_slice) {
        None => None,
        Some(b"yes") => Some(true),
        Some(b"no") => Some(false),
        Some(_) => return Err("encode= must be yes or no".into()),
    };
    let payload = match kind.as_str() {
        "I" => {
            let data = match (keys.get("data"), keys.contains_key("file")) {
                (Some(d), false) => d.clone(),
                (None, true) => read_file(base, &keys)?,
                _ => return Err("inline needs exactly one of data= or file=".into()),
            };
            let data: [u8; 32] = data
                .as_slice()
                .try_into()
                .map_err(|_| format!("inline data has {} bytes, needs 32", data.len()))?;
            Payload::Inline(data)
        }
        "B" => Payload::Block(read_file(base, &keys)?),
        "A" => {
            let (count, elem_size) = (number(&keys, "N")?, number(&keys, "E")?);
            let data = read_file(base, &keys)?;
            let want = count as u128 * elem_size as u128;
            if data.len() as u128 != want {
                return Err(format!("N*E = {want} but payload file has {} bytes", data.len()));
            }
            Payload::Array { count, elem_size, data }
        }
        _ => {
            let sizes = sizes(keys.get("sizes").ok_or("missing sizes=")?)?;
            let data = read_file(base, &keys)?;
            let want: u128 = sizes.iter().map(|&s| s as u128).sum();
            if data.len() as u128 != want {
                return Err(format!("sizes sum to {want} but payload file has {} bytes", data.len()));
            }
            Payload::Varray { sizes, data }
        }
    };
    Ok(Entry { line, user, payload, encode })
}

/// Parse manifest `text`; payload files resolve against `base`.
pub fn parse(text: &str, base: &Path) -> Result<Manifest, String> {
    let mut manifest = Manifest::default();
    let mut seen_section = false;
    let mut seen_header = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let at = |e: String| format!("line {line}: {e}");
        let tokens = tokenize(raw).map_err(at)?;
        if tokens.is_empty() || tokens[0].starts_with('#') {
            continue;
        }
        if tokens[0] == "F" {
            if seen_header || seen_section {
                return Err(at("F line must come first and only once".into()));
            }
            if tokens.len() != 2 || !tokens[1].starts_with('"') {
                return Err(at("F line takes exactly one quoted user string".into()));
            }
            manifest.user = value(&tokens[1]).map_err(at)?;
            seen_header = true;
            continue;
        }
        seen_section = true;
        manifest.entries.push(parse_line(&tokens, base, line).map_err(at)?);
    }
    Ok(manifest)
}
