#!/usr/bin/env python3
"""Regenerate src/evaluation/moses_tables.inc from sacremoses' data files.

    python3 tools/gen/gen_moses_tables.py > src/evaluation/moses_tables.inc
"""
from sacremoses.tokenize import MosesTokenizer


def ranges(chars):
    cps = sorted({ord(c) for c in chars})
    out = []
    for cp in cps:
        if out and out[-1][1] == cp - 1:
            out[-1][1] = cp
        else:
            out.append([cp, cp])
    return out


def emit_class(name, chars):
    rs = ranges(chars)
    print(f"constexpr CodeRange k{name}[] = {{")
    for i in range(0, len(rs), 6):
        row = ", ".join(f"{{0x{a:X}, 0x{b:X}}}" for a, b in rs[i:i + 6])
        print(f"    {row},")
    print("};")


def emit_words(name, words):
    print(f"constexpr const char* k{name}[] = {{")
    for i in range(0, len(words), 8):
        row = ", ".join('"' + w.replace("\\", "\\\\").replace('"', '\\"') + '"' for w in words[i:i + 8])
        print(f"    {row},")
    print("};")


def main():
    tok = MosesTokenizer(lang="en")
    print("// Generated by tools/gen/gen_moses_tables.py. Do not edit.")
    print()
    emit_class("IsN", tok.IsN)
    emit_class("IsAlnum", tok.IsAlnum)
    emit_class("IsAlpha", tok.IsAlpha)
    emit_class("IsLower", tok.IsLower)
    plain = sorted({w for w in tok.NONBREAKING_PREFIXES if "#" not in w})
    emit_words("NonbreakingPrefixes", plain)
    emit_words("NumericOnlyPrefixes", sorted(set(tok.NUMERIC_ONLY_PREFIXES)))


if __name__ == "__main__":
    main()
