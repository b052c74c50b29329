#!/usr/bin/env python3
"""Regenerate the golden scda fixtures in this directory.

Written independently of the Rust encoder: only the Python standard
library (zlib, base64) is used. Run from any directory:

    python3 gen.py
"""
import base64
import os
import zlib

HERE = os.path.dirname(os.path.abspath(__file__))
VENDOR = b"scda-kit 0.1"

STYLES = {
    "unix": {"q": b"-\n", "brk": b"=\n", "P": b"\n=", "R": b"\n\n", "pq": 4},
    "mime": {"q": b"\r\n", "brk": b"\r\n", "P": b"\r\n", "R": b"\r\n\r\n", "pq": 6},
}


def pad_fixed(data, d, st):
    p = d - len(data)
    assert p >= 4
    return data + b" " + b"-" * (p - 3) + st["q"]


def pad_data(data, st):
    n = len(data)
    p = 7
    while (n + p) % 32:
        p += 1
    head = b"==" if n and data[-1:] == b"\n" else st["P"]
    return head + b"=" * (p - st["pq"]) + st["R"]


def count(letter, value, st):
    return letter + b" " + pad_fixed(str(value).encode(), 30, st)


def header(letter, user, st):
    return letter + b" " + pad_fixed(user, 62, st)


def file_header(user, st):
    return b"scdata0 " + pad_fixed(VENDOR, 24, st) + header(b"F", user, st) + pad_data(b"", st)


def inline(user, data, st):
    assert len(data) == 32
    return header(b"I", user, st) + data


def block(user, data, st):
    return header(b"B", user, st) + count(b"E", len(data), st) + data + pad_data(data, st)


def array(user, n, e, data, st):
    assert len(data) == n * e
    return header(b"A", user, st) + count(b"N", n, st) + count(b"E", e, st) + data + pad_data(data, st)


def varray(user, sizes, data, st):
    assert sum(sizes) == len(data)
    table = b"".join(count(b"E", s, st) for s in sizes)
    return header(b"V", user, st) + count(b"N", len(sizes), st) + table + data + pad_data(data, st)


def element(data, level, st):
    stage = len(data).to_bytes(8, "big") + b"z" + zlib.compress(data, level)
    code = base64.b64encode(stage)
    return b"".join(code[i:i + 76] + st["brk"] for i in range(0, len(code), 76))


def cblock(user, data, level, st):
    return inline(b"B compressed scda 00", count(b"U", len(data), st), st) + block(
        user, element(data, level, st), st)


def carray(user, n, e, data, level, st):
    els = [element(data[i * e:(i + 1) * e], level, st) for i in range(n)]
    return inline(b"A compressed scda 00", count(b"U", e, st), st) + varray(
        user, [len(x) for x in els], b"".join(els), st)


def cvarray(user, sizes, data, level, st):
    els, at = [], 0
    for s in sizes:
        els.append(element(data[at:at + s], level, st))
        at += s
    meta = b"".join(count(b"U", s, st) for s in sizes)
    return array(b"V compressed scda 00", len(sizes), 32, meta, st) + varray(
        user, [len(x) for x in els], b"".join(els), st)


# Inputs shared with golden.rs.
INLINE = b"x" * 32
BLOCK = b"hello world\n"
ARRAY = bytes(range(20))
VSIZES = [1, 0, 5]
VDATA = b"abbbbb"
TEXT = b"the quick brown fox jumps over the lazy dog\n" * 6


def write(name, data):
    with open(os.path.join(HERE, name), "wb") as f:
        f.write(data)


def main():
    u, m = STYLES["unix"], STYLES["mime"]
    write("header_only.scd", file_header(b"hello", u))
    write("three_sections.scd",
          file_header(b"golden", u) + inline(b"note", INLINE, u) + block(b"block", BLOCK, u)
          + array(b"array", 5, 4, ARRAY, u))
    for name, st in (("all_kinds_unix.scd", u), ("all_kinds_mime.scd", m)):
        write(name, file_header(b"kinds", st) + inline(b"note", INLINE, st) + block(b"block", BLOCK, st)
              + array(b"array", 5, 4, ARRAY, st) + varray(b"var", VSIZES, VDATA, st))
    for level, tag in ((0, "stored"), (9, "best")):
        for sname, st in STYLES.items():
            write(f"compressed_{tag}_{sname}.scd",
                  file_header(b"packed", st) + cblock(b"text", TEXT, level, st)
                  + carray(b"fixed", 5, 4, ARRAY, level, st)
                  + cvarray(b"var", VSIZES, VDATA, level, st))


if __name__ == "__main__":
    main()
