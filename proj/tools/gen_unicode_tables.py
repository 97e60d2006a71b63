#!/usr/bin/env python3
"""Regenerates the committed Unicode data files.

  python3 tools/gen_unicode_tables.py

Writes include/offlang/punct_ranges.inc (codepoint ranges of the Unicode
P* categories) and data/emoji_names.tsv (emoji sequence -> descriptive
name, demoji-style plain text).
"""
import sys
import unicodedata
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def punct_ranges():
    ranges = []
    start = None
    prev = None
    for cp in range(0x110000):
        try:
            cat = unicodedata.category(chr(cp))
        except ValueError:
            cat = "Cn"
        if cat.startswith("P"):
            if start is None:
                start = cp
            prev = cp
        else:
            if start is not None:
                ranges.append((start, prev))
                start = None
    if start is not None:
        ranges.append((start, prev))
    return ranges


EMOJI_BLOCKS = [
    (0x2600, 0x26FF),    # miscellaneous symbols
    (0x2700, 0x27BF),    # dingbats
    (0x1F300, 0x1F5FF),  # misc symbols and pictographs
    (0x1F600, 0x1F64F),  # emoticons
    (0x1F680, 0x1F6FF),  # transport and map
    (0x1F900, 0x1F9FF),  # supplemental symbols and pictographs
    (0x1FA70, 0x1FAFF),  # symbols and pictographs extended-A
]

# Sequences whose CLDR short names differ from the raw codepoint names,
# plus a few ZWJ/variation-selector sequences for longest-match coverage.
HAND_SEQUENCES = [
    ("❤️", "red heart"),
    ("❤", "red heart"),
    ("☺️", "smiling face"),
    ("\U0001F468‍\U0001F4BB", "man technologist"),
    ("\U0001F469‍\U0001F4BB", "woman technologist"),
    ("\U0001F468‍\U0001F469‍\U0001F466", "family man woman boy"),
    ("\U0001F469‍\U0001F469‍\U0001F467", "family woman woman girl"),
    ("\U0001F3F3️‍\U0001F308", "rainbow flag"),
    ("\U0001F441️‍\U0001F5E8️", "eye in speech bubble"),
    ("\U0001F636‍\U0001F32B️", "face in clouds"),
    ("\U0001F62E‍\U0001F4A8", "face exhaling"),
    ("\U0001F635‍\U0001F4AB", "face with spiral eyes"),
    ("\U0001F468‍\U0001F373", "man cook"),
    ("\U0001F469‍\U0001F373", "woman cook"),
    ("\U0001F9D1‍\U0001F680", "astronaut"),
    ("\U0001F9D1‍⚕️", "health worker"),
]


def emoji_entries():
    entries = {}
    for lo, hi in EMOJI_BLOCKS:
        for cp in range(lo, hi + 1):
            ch = chr(cp)
            try:
                name = unicodedata.name(ch)
            except ValueError:
                continue
            entries[ch] = name.lower()
    for seq, name in HAND_SEQUENCES:
        entries[seq] = name
    return entries


def main():
    inc = ROOT / "include" / "offlang" / "punct_ranges.inc"
    ranges = punct_ranges()
    with inc.open("w", encoding="utf-8") as f:
        f.write("// Generated by tools/gen_unicode_tables.py; do not edit.\n")
        f.write("// Codepoint ranges of the Unicode general categories Pc Pd Ps Pe Pi Pf Po.\n")
        f.write(f"inline constexpr CodepointRange kPunctRanges[{len(ranges)}] = {{\n")
        for lo, hi in ranges:
            f.write(f"    {{0x{lo:04X}, 0x{hi:04X}}},\n")
        f.write("};\n")

    tsv = ROOT / "data" / "emoji_names.tsv"
    entries = emoji_entries()
    assert entries["\U0001F642"] == "slightly smiling face"
    with tsv.open("w", encoding="utf-8") as f:
        for seq in sorted(entries):
            name = entries[seq]
            assert name and "_" not in name and "\t" not in name
            f.write(f"{seq}\t{name}\n")
    print(f"{len(ranges)} punct ranges, {len(entries)} emoji entries",
          file=sys.stderr)


if __name__ == "__main__":
    main()
