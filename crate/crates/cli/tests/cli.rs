use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn scda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scda")).args(args).output().expect("spawn scda")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Manifest with one section of every kind, payload files alongside.
fn all_kinds(dir: &Path) -> PathBuf {
    fs::write(dir.join("block.bin"), b"hello block\n".repeat(20)).unwrap();
    fs::write(dir.join("array.bin"), (0u8..20).collect::<Vec<_>>()).unwrap();
    fs::write(dir.join("var.bin"), b"abbbbb").unwrap();
    let manifest = dir.join("m.txt");
    fs::write(
        &manifest,
        concat!(
            "# sample\n",
            "F \"cli test\"\n",
            "I \"note\" data=\"0123456789abcdef0123456789abcdef\"\n",
            "B \"blk\" file=block.bin\n",
            "A \"arr\" N=5 E=4 file=array.bin\n",
            "V \"var\" sizes=1,0,5 file=var.bin\n",
        ),
    )
    .unwrap();
    manifest
}

fn create(dir: &Path, extra: &[&str]) -> PathBuf {
    let manifest = all_kinds(dir);
    let out = dir.join("out.scd");
    let mut args = vec!["create", p(&manifest), "-o", p(&out)];
    args.extend_from_slice(extra);
    let o = scda(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn extract(file: &Path, index: usize, decode: bool, dir: &Path) -> Output {
    let idx = index.to_string();
    let mut args = vec!["extract", p(file), &idx, "-o", p(dir)];
    if decode {
        args.push("--decode");
    }
    scda(&args)
}

#[test]
fn create_then_extract_returns_the_inputs() {
    for style in ["unix", "mime"] {
        let tmp = TempDir::new().unwrap();
        let file = create(tmp.path(), &["--style", style]);
        let v = scda(&["validate", "--strict", p(&file)]);
        assert_eq!(v.status.code(), Some(0));
        assert_eq!(stdout(&v).trim(), format!("valid: 4 sections, {style} line style"));

        let out = tmp.path().join("x");
        assert!(extract(&file, 0, false, &out).status.success());
        assert_eq!(fs::read(out.join("section_0.bin")).unwrap(), b"0123456789abcdef0123456789abcdef");
        assert!(extract(&file, 1, false, &out).status.success());
        assert_eq!(fs::read(out.join("section_1.bin")).unwrap(), fs::read(tmp.path().join("block.bin")).unwrap());
        assert!(extract(&file, 2, false, &out).status.success());
        assert_eq!(fs::read(out.join("section_2.bin")).unwrap(), fs::read(tmp.path().join("array.bin")).unwrap());
        assert!(extract(&file, 3, false, &out).status.success());
        let elems: Vec<Vec<u8>> = (0..3).map(|i| fs::read(out.join(format!("elem_{i}.bin"))).unwrap()).collect();
        assert_eq!(elems, vec![b"a".to_vec(), vec![], b"bbbbb".to_vec()]);
    }
}

#[test]
fn encoded_file_shows_logical_sections_when_decoded() {
    let tmp = TempDir::new().unwrap();
    let file = create(tmp.path(), &["--encode"]);
    assert_eq!(scda(&["validate", "--strict", p(&file)]).status.code(), Some(0));

    let raw = stdout(&scda(&["info", p(&file)]));
    // Inline plus two sections per compressed block, fixed and variable array.
    assert!(raw.contains("7 sections"), "{raw}");
    let decoded = stdout(&scda(&["info", "--decode", p(&file)]));
    assert!(decoded.contains("4 sections"), "{decoded}");

    let out = tmp.path().join("x");
    assert!(extract(&file, 1, true, &out).status.success());
    assert_eq!(fs::read(out.join("section_1.bin")).unwrap(), fs::read(tmp.path().join("block.bin")).unwrap());
    assert!(extract(&file, 3, true, &out).status.success());
    assert_eq!(fs::read(out.join("elem_2.bin")).unwrap(), b"bbbbb");
}

#[test]
fn manifest_errors_name_the_line() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("a.bin"), [0u8; 10]).unwrap();
    let manifest = tmp.path().join("m.txt");
    fs::write(&manifest, "# header\nA \"arr\" N=3 E=4 file=a.bin\n").unwrap();
    let o = scda(&["create", p(&manifest), "-o", p(&tmp.path().join("o.scd"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn header_only_file_has_no_sections() {
    let tmp = TempDir::new().unwrap();
    let manifest = tmp.path().join("m.txt");
    fs::write(&manifest, "F \"empty\"\n").unwrap();
    let out = tmp.path().join("o.scd");
    assert!(scda(&["create", p(&manifest), "-o", p(&out)]).status.success());
    assert_eq!(fs::metadata(&out).unwrap().len(), 128);
    assert!(stdout(&scda(&["info", p(&out)])).contains("0 sections"));
}

#[test]
fn validate_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let file = create(tmp.path(), &[]);
    assert_eq!(scda(&["validate", p(&file)]).status.code(), Some(0));

    let mut bytes = fs::read(&file).unwrap();
    let len = bytes.len();
    bytes.push(b'x');
    let trailing = tmp.path().join("trailing.scd");
    fs::write(&trailing, &bytes).unwrap();
    let o = scda(&["validate", p(&trailing)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains(&format!("invalid at byte {len}")), "{}", stdout(&o));

    // Second digit of the block's byte-count entry becomes a letter.
    let mut bytes = fs::read(&file).unwrap();
    bytes[128 + 96 + 64 + 2] = b'q';
    let flipped = tmp.path().join("flipped.scd");
    fs::write(&flipped, &bytes).unwrap();
    assert_eq!(scda(&["validate", p(&flipped)]).status.code(), Some(1));

    assert_eq!(scda(&["validate", p(&tmp.path().join("missing.scd"))]).status.code(), Some(2));
}

#[test]
fn json_listing_is_stable() {
    let tmp = TempDir::new().unwrap();
    let file = create(tmp.path(), &["--encode"]);
    let a = stdout(&scda(&["info", "--json", "--decode", p(&file)]));
    let b = stdout(&scda(&["info", "--json", "--decode", p(&file)]));
    assert_eq!(a, b);
    assert!(a.contains("\"sections\""));
}

#[test]
fn out_of_range_extract_fails() {
    let tmp = TempDir::new().unwrap();
    let file = create(tmp.path(), &[]);
    let o = extract(&file, 4, false, &tmp.path().join("x"));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("out of range"));
}

#[test]
fn selftest_is_deterministic() {
    let run = || {
        let o = scda(&["selftest", "--cases", "12", "--max-ranks", "3", "--seed", "7"]);
        assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
        // Drop the timing suffix.
        let s = stdout(&o);
        s.rsplit_once(',').map(|(head, _)| head.to_string()).unwrap()
    };
    let first = run();
    assert!(first.contains("12 passed, 0 failed"), "{first}");
    assert_eq!(first, run());
}
