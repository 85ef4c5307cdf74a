#!/usr/bin/env python3
"""Generate include/contrans/detail/unicode_tables.hpp.

The byte-level pre-tokenizer needs the Unicode letter (L*) and number (N*)
general categories. Ranges are taken from Python's unicodedata module.
"""
import sys
import unicodedata
from pathlib import Path


def ranges(pred):
    out = []
    start = None
    for cp in range(0x110000):
        hit = pred(chr(cp))
        if hit and start is None:
            start = cp
        elif not hit and start is not None:
            out.append((start, cp - 1))
            start = None
    if start is not None:
        out.append((start, 0x10FFFF))
    return out


def emit(name, rs):
    lines = [f"inline constexpr CodepointRange {name}[] = {{"]
    row = []
    for lo, hi in rs:
        row.append(f"{{0x{lo:X}, 0x{hi:X}}}")
        if len(row) == 6:
            lines.append("    " + ", ".join(row) + ",")
            row = []
    if row:
        lines.append("    " + ", ".join(row) + ",")
    lines.append("};")
    return "\n".join(lines)


def main():
    root = Path(__file__).resolve().parent.parent
    out = root / "include" / "contrans" / "detail" / "unicode_tables.hpp"
    letters = ranges(lambda c: unicodedata.category(c).startswith("L"))
    numbers = ranges(lambda c: unicodedata.category(c).startswith("N"))
    text = f"""// Generated by scripts/gen_unicode_tables.py from Unicode {unicodedata.unidata_version}. Do not edit.
#pragma once

#include <cstdint>

namespace contrans::detail {{

struct CodepointRange {{
    std::uint32_t lo;
    std::uint32_t hi;
}};

{emit("kLetterRanges", letters)}

{emit("kNumberRanges", numbers)}

}}  // namespace contrans::detail
"""
    out.write_text(text)
    print(f"wrote {out} ({len(letters)} letter ranges, {len(numbers)} number ranges)", file=sys.stderr)


if __name__ == "__main__":
    main()
