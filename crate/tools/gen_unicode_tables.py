#!/usr/bin/env python3
"""Generate Unicode character-class tables for the byte-level pre-tokenizer.

The pre-tokenizer splits text with the byte-level BPE pattern
('s|'t|'re|'ve|'m|'ll|'d| ?\\p{L}+| ?\\p{N}+| ?[^\\s\\p{L}\\p{N}]+|\\s+(?!\\S)|\\s+),
so the Rust scanner needs to classify every codepoint as letter, number,
whitespace, or other exactly like the reference engine. Rather than trusting
any particular Unicode-version table, this script probes the `tokenizers`
ByteLevel pre-tokenizer (the same engine used to produce the encode fixtures)
one codepoint at a time and records the classes it actually uses:

  letter(c)  <=> "a" + c pre-tokenizes to a single piece
  number(c)  <=> "0" + c pre-tokenizes to a single piece
  other(c)   <=> "." + c pre-tokenizes to a single piece
  space(c)   <=> none of the above

Output: crates/detok/src/tokenizer/unicode.rs (sorted inclusive ranges).

Usage: python3 tools/gen_unicode_tables.py
"""

import sys
from pathlib import Path

from tokenizers.pre_tokenizers import ByteLevel

OUT = Path(__file__).resolve().parent.parent / "crates/detok/src/tokenizer/unicode.rs"

HEADER = '''\
//! Unicode character classes used by the pre-tokenizer scanner.
//!
//! Generated by tools/gen_unicode_tables.py by probing the reference
//! byte-level pre-tokenizer; do not edit by hand.

pub(crate) fn is_letter(c: char) -> bool {
    in_ranges(c as u32, LETTER)
}

pub(crate) fn is_number(c: char) -> bool {
    in_ranges(c as u32, NUMBER)
}

pub(crate) fn is_space(c: char) -> bool {
    in_ranges(c as u32, SPACE)
}

fn in_ranges(cp: u32, ranges: &[(u32, u32)]) -> bool {
    let mut lo = 0usize;
    let mut hi = ranges.len();
    while lo < hi {
        let mid = (lo + hi) / 2;
        let (start, end) = ranges[mid];
        if cp < start {
            hi = mid;
        } else if cp > end {
            lo = mid + 1;
        } else {
            return true;
        }
    }
    false
}
'''


def to_ranges(codepoints):
    ranges = []
    start = prev = None
    for cp in codepoints:
        if start is None:
            start = prev = cp
        elif cp == prev + 1:
            prev = cp
        else:
            ranges.append((start, prev))
            start = prev = cp
    if start is not None:
        ranges.append((start, prev))
    return ranges


def emit_table(name, ranges):
    lines = [f"static {name}: &[(u32, u32)] = &["]
    row = []
    for start, end in ranges:
        row.append(f"({start:#06x}, {end:#06x})")
        if len(row) == 4:
            lines.append("    " + ", ".join(row) + ",")
            row = []
    if row:
        lines.append("    " + ", ".join(row) + ",")
    lines.append("];")
    return "\n".join(lines)


def main():
    bl = ByteLevel(add_prefix_space=False, use_regex=True)

    def pieces(s):
        return len(bl.pre_tokenize_str(s))

    letters, numbers, spaces = [], [], []
    for cp in range(0x110000):
        if 0xD800 <= cp <= 0xDFFF:
            continue
        ch = chr(cp)
        if pieces("a" + ch) == 1:
            letters.append(cp)
        elif pieces("0" + ch) == 1:
            numbers.append(cp)
        elif pieces("." + ch) != 1:
            spaces.append(cp)
        if cp and cp % 0x20000 == 0:
            print(f"  probed {cp:#x}", file=sys.stderr)

    # 'a', '0', '.' never probe themselves; patch them in by class.
    letters.append(ord("a"))
    numbers.append(ord("0"))
    letters = sorted(set(letters))
    numbers = sorted(set(numbers))
    spaces = sorted(set(spaces))

    print(f"letters={len(letters)} numbers={len(numbers)} spaces={len(spaces)}")
    assert ord("Z") in letters and 0x00E9 in letters  # 'Z', 'é'
    assert ord("7") in numbers and 0x2167 in numbers  # '7', roman numeral VIII
    assert all(ord(c) in spaces for c in " \t\n\r")
    assert ord("!") not in letters + numbers + spaces

    tables = "\n\n".join(
        emit_table(name, to_ranges(cps))
        for name, cps in [("LETTER", letters), ("NUMBER", numbers), ("SPACE", spaces)]
    )
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(HEADER + "\n" + tables + "\n")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
