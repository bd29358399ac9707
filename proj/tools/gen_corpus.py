#!/usr/bin/env python3
"""Regenerates corpus/*.s from the program bodies in tools/corpus/.

Each output file is self-contained: the program body with its `;%chain`
directives expanded, followed by the shared runtime. The `dispatch30`
program is generated outright. Workload inputs (`<name>.in`) are copied.

Usage: tools/gen_corpus.py [--check]
"""

import argparse
import pathlib
import shutil
import sys

ROOT = pathlib.Path(__file__).resolve().parent.parent
SRC = ROOT / "tools" / "corpus"
OUT = ROOT / "corpus"


def chain(prefix, depth, stats, target):
    """Forwarding layers prefix1..prefixN; layer i counts its calls in stats[i-1]."""
    out = []
    for i in range(1, depth + 1):
        callee = f"{prefix}{i + 1}" if i < depth else target
        out.append(
            f""".func {prefix}{i}
  enter {{r4}}
  adrd r4, {stats}
  ldr r1, [r4, #{4 * (i - 1)}]
  add r1, r1, #1
  str r1, [r4, #{4 * (i - 1)}]
  call {callee}
  leave
.endfunc
""")
    return "\n".join(out)


def expand(body):
    lines = []
    for line in body.splitlines():
        if line.startswith(";%chain"):
            _, prefix, depth, stats, target = line.split()
            lines.append(chain(prefix, int(depth), stats, target).rstrip("\n"))
        else:
            lines.append(line)
    return "\n".join(lines) + "\n"


# Handler templates for dispatch30: (comment, body). Input in r0, result in r0.
HANDLERS = [
    ("scale and offset", ["movi r1, {a}", "mul r0, r0, r1", "add r0, r0, #{b}"]),
    ("fold high half", ["lsr r1, r0, #16", "eor r0, r0, r1", "li r1, 0xFFFF", "and r0, r0, r1"]),
    ("modular reduce", ["movi r1, {c}", "umod r0, r0, r1"]),
    ("population count", ["movi r1, 0", "{L}_bits:", "and r2, r0, #1", "add r1, r1, r2",
                          "lsr r0, r0, #1", "cmp r0, #0", "bne {L}_bits", "mov r0, r1"]),
    ("digit sum", ["movi r1, 0", "movi r3, 10", "{L}_digits:", "umod r2, r0, r3", "add r1, r1, r2",
                   "udiv r0, r0, r3", "cmp r0, #0", "bne {L}_digits", "mov r0, r1"]),
    ("clamp", ["cmp r0, #{d}", "bls {L}_in", "movi r0, {d}", "{L}_in:", "add r0, r0, #{b}"]),
    ("xor mix", ["li r1, {k}", "eor r0, r0, r1", "lsl r1, r0, #3", "add r0, r0, r1"]),
    ("triangle number", ["and r0, r0, #63", "add r1, r0, #1", "mul r0, r0, r1", "lsr r0, r0, #1"]),
]


def dispatch30():
    n_handlers = 11
    parts = [
        "; Command dispatcher with eleven handlers, driven by a fixed command script.",
        ".entry main",
        '.string label_cmd "cmd "',
        '.string label_res " -> "',
        ".bytes script " + "".join(f"{(i * 7 + 3) % n_handlers:02x}" for i in range(36)),
        ".global results 48",
        "",
        ".func main",
        "  enter {r4, r5, r6}",
        "  adrd r4, script",
        "  movi r5, 0",
        "  li r6, 1234",
        "next:",
        "  add r1, r4, r5",
        "  ldrb r0, [r1, #0]",
        "  mov r1, r6",
        "  call dispatch",
        "  mov r6, r0",
        "  add r5, r5, #1",
        "  cmp r5, #36",
        "  blo next",
        "  call summary",
        "  halt #0",
        ".endfunc",
        "",
        "; dispatch(command, value)",
        ".func dispatch",
        "  enter {r4, r5}",
        "  mov r4, r0",
        "  mov r5, r1",
        "  adrd r0, label_cmd",
        "  call puts",
        "  mov r0, r4",
        "  call print_dec",
        "  adrd r0, label_res",
        "  call puts",
        "  mov r0, r5",
    ]
    for i in range(n_handlers):
        parts += [f"  cmp r4, #{i}", f"  beq go{i}"]
    parts += ["  b unknown"]
    for i in range(n_handlers):
        parts += [f"go{i}:", f"  call handler{i:02d}", "  b record"]
    parts += [
        "unknown:",
        "  movi r0, 0",
        "record:",
        "  adrd r1, results",
        "  lsl r2, r4, #2",
        "  add r1, r1, r2",
        "  str r0, [r1, #0]",
        "  mov r5, r0",
        "  call print_dec",
        "  call newline",
        "  mov r0, r5",
        "  add r0, r0, r4",
        "  leave",
        ".endfunc",
        "",
        ".func summary",
        "  enter {r4, r5}",
        "  adrd r4, results",
        "  movi r5, 0",
        "next:",
        "  ldr r0, [r4, #0]",
        "  call print_hex",
        "  call newline",
        "  add r4, r4, #4",
        "  add r5, r5, #1",
        f"  cmp r5, #{n_handlers}",
        "  blo next",
        "  leave",
        ".endfunc",
        "",
    ]
    for i in range(n_handlers):
        comment, body = HANDLERS[i % len(HANDLERS)]
        params = {"a": 3 + 2 * i, "b": 17 * i + 1, "c": 97 + 10 * i, "d": 500 + 37 * i,
                  "k": hex(0x9E3779B9 ^ (i * 0x01010101)), "L": f"h{i}"}
        parts += [f"; {comment}", f".func handler{i:02d}"]
        for line in body:
            text = line.format(**params)
            parts.append(text if text.endswith(":") else "  " + text)
        parts += ["  ret", ".endfunc", ""]
    return "\n".join(parts) + "\n"


def render_all():
    runtime = (SRC / "runtime.s").read_text()
    programs = {}
    for path in sorted(SRC.glob("*.s")):
        if path.name == "runtime.s":
            continue
        programs[path.stem] = expand(path.read_text())
    programs["dispatch30"] = dispatch30()
    return {name: f"{body}\n{runtime}" for name, body in programs.items()}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--check", action="store_true", help="fail if corpus/ is out of date")
    args = parser.parse_args()
    rendered = render_all()
    stale = []
    OUT.mkdir(exist_ok=True)
    for name, text in rendered.items():
        target = OUT / f"{name}.s"
        if args.check:
            if not target.exists() or target.read_text() != text:
                stale.append(target.name)
        else:
            target.write_text(text)
    for path in SRC.glob("*.in"):
        if args.check:
            target = OUT / path.name
            if not target.exists() or target.read_bytes() != path.read_bytes():
                stale.append(path.name)
        else:
            shutil.copyfile(path, OUT / path.name)
    if stale:
        print("out of date: " + ", ".join(stale), file=sys.stderr)
        return 1
    print(f"{len(rendered)} programs")
    return 0


if __name__ == "__main__":
    sys.exit(main())
