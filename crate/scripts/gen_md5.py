#!/usr/bin/env python3
"""Writes crates/core/fixtures/md5.jir: MD5 compression over padded
little-endian message words, with the 64 steps unrolled."""
import math
import os

S = [7, 12, 17, 22] * 4 + [5, 9, 14, 20] * 4 + [4, 11, 16, 23] * 4 + [6, 10, 15, 21] * 4
K = [int(abs(math.sin(i + 1)) * 2**32) & 0xFFFFFFFF for i in range(64)]
INIT = [0x67452301, 0xEFCDAB89, 0x98BADCFE, 0x10325476]

MSG, NBLOCKS, OUT = 0, 1, 2
A0, B0, C0, D0 = 3, 4, 5, 6
A, B, C, D = 7, 8, 9, 10
BLK, BASE, F = 11, 12, 13


def signed(v):
    v &= 0xFFFFFFFF
    return v - 2**32 if v >= 2**31 else v


def step(i):
    out = [f"    // step {i}"]
    r = i // 16
    if r == 0:
        g = i
        out += [f"iload {B}", f"iload {C}", "and", f"iload {B}", "const -1", "xor", f"iload {D}", "and", "or"]
    elif r == 1:
        g = (5 * i + 1) % 16
        out += [f"iload {D}", f"iload {B}", "and", f"iload {D}", "const -1", "xor", f"iload {C}", "and", "or"]
    elif r == 2:
        g = (3 * i + 5) % 16
        out += [f"iload {B}", f"iload {C}", "xor", f"iload {D}", "xor"]
    else:
        g = (7 * i) % 16
        out += [f"iload {C}", f"iload {B}", f"iload {D}", "const -1", "xor", "or", "xor"]
    out += [
        f"iload {A}", "add",
        f"const {signed(K[i])}", "add",
        f"iload {MSG}", f"iload {BASE}", f"const {g}", "add", "aload", "add",
        f"istore {F}",
        f"iload {F}", f"const {S[i]}", "shl",
        f"iload {F}", f"const {32 - S[i]}", "ushr",
        "or", f"iload {B}", "add",
        f"iload {D}", f"istore {A}",
        f"iload {C}", f"istore {D}",
        f"iload {B}", f"istore {C}",
        f"istore {B}",
    ]
    return out


def main():
    body = []
    for local, v in zip((A0, B0, C0, D0), INIT):
        body += [f"const {signed(v)}", f"istore {local}"]
    body += ["const 0", f"istore {BLK}"]
    body += ["top:", f"iload {BLK}", f"iload {NBLOCKS}", "if_ge done"]
    body += [f"iload {BLK}", "const 16", "mul", f"istore {BASE}"]
    for src, dst in ((A0, A), (B0, B), (C0, C), (D0, D)):
        body += [f"iload {src}", f"istore {dst}"]
    for i in range(64):
        body += step(i)
    for acc, cur in ((A0, A), (B0, B), (C0, C), (D0, D)):
        body += [f"iload {acc}", f"iload {cur}", "add", f"istore {acc}"]
    body += [f"iload {BLK}", "const 1", "add", f"istore {BLK}", "goto top"]
    body += ["done:"]
    for j, acc in enumerate((A0, B0, C0, D0)):
        body += [f"iload {OUT}", f"const {j}", f"iload {acc}", "astore"]
    body += ["ret"]

    lines = [
        "// MD5 compression over `blocks` 16-word blocks of `msg` (padded,",
        "// little-endian words). The digest words go to out[0..4].",
        "// Generated by scripts/gen_md5.py.",
        "entry Md5.digest",
        "",
        "class Md5 {",
        "  method static digest(msg: arr<i32>, blocks: i32, out: arr<i32>): void locals 14 {",
    ]
    for b in body:
        if b.endswith(":"):
            lines.append("  " + b)
        elif b.startswith("    //"):
            lines.append(b)
        else:
            lines.append("    " + b)
    lines += ["  }", "}", ""]
    here = os.path.dirname(os.path.abspath(__file__))
    path = os.path.join(here, "..", "crates", "core", "fixtures", "md5.jir")
    with open(path, "w") as f:
        f.write("\n".join(lines))


if __name__ == "__main__":
    main()
