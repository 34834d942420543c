"""Corpus ingestion: load C programs with test cases, drop uncalled functions,
and extract structural code metrics.

The C handling here is deliberately lightweight: a comment/string masker plus
top-level brace matching, not a real front end.  Whenever the scanner is
unsure, it errs on the side of keeping code.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)


class CorpusError(Exception):
    """Raised when a corpus root is unusable."""


@dataclass(frozen=True)
class TestCase:
    input: str
    expected_output: str


@dataclass(frozen=True)
class CodeMetrics:
    loc: int
    functions: int
    pointers: int
    structs: int
    memory_calls: int


@dataclass
class SourceProgram:
    id: str
    source_text: str
    test_cases: list[TestCase]
    metrics: CodeMetrics
    coverage: dict | None = None


# ---------------------------------------------------------------------------
# masking helpers
# ---------------------------------------------------------------------------

def _blank_comments(text: str) -> str:
    """Replace comment bodies with spaces, preserving newlines and offsets."""
    out = list(text)
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c == "/" and i + 1 < n and text[i + 1] == "/":
            while i < n and text[i] != "\n":
                out[i] = " "
                i += 1
        elif c == "/" and i + 1 < n and text[i + 1] == "*":
            end = text.find("*/", i + 2)
            stop = n if end == -1 else end + 2
            while i < stop:
                if text[i] != "\n":
                    out[i] = " "
                i += 1
        elif c == '"' or c == "'":
            # skip literal so comment markers inside it are not masked
            quote = c
            i += 1
            while i < n and text[i] != quote:
                i += 2 if text[i] == "\\" else 1
            i += 1
        else:
            i += 1
    return "".join(out)


def _mask_all(text: str) -> str:
    """Blank comments and the interiors of string/char literals."""
    text = _blank_comments(text)
    out = list(text)
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c == '"' or c == "'":
            quote = c
            j = i + 1
            while j < n and text[j] != quote:
                if text[j] == "\\":
                    if text[j] != "\n":
                        out[j] = " "
                    j += 1
                if j < n and text[j] != "\n":
                    out[j] = " "
                j += 1
            i = j + 1
        else:
            i += 1
    return "".join(out)


# ---------------------------------------------------------------------------
# top-level function scanner
# ---------------------------------------------------------------------------

C_KEYWORDS = frozenset(
    """auto break case char const continue default do double else enum extern
    float for goto if inline int long register restrict return short signed
    sizeof static struct switch typedef union unsigned void volatile while
    _Bool _Complex _Imaginary""".split()
)

TYPE_KEYWORDS = frozenset(
    """void char short int long float double signed unsigned _Bool bool
    size_t ssize_t ptrdiff_t wchar_t time_t FILE
    int8_t int16_t int32_t int64_t uint8_t uint16_t uint32_t uint64_t
    intptr_t uintptr_t""".split()
)

_QUALIFIERS = frozenset({"const", "volatile", "restrict", "inline", "static", "register"})


@dataclass(frozen=True)
class _FuncDef:
    name: str
    start: int  # first char of the definition (return type onwards)
    body_start: int  # index of the opening brace
    end: int  # index just past the closing brace


def _scan_functions(masked: str) -> tuple[list[_FuncDef], bool]:
    """Find top-level function definitions via brace matching.

    Returns (definitions, ok).  ok=False means braces did not balance at the
    top level and the caller must treat the input as unscannable.
    """
    defs: list[_FuncDef] = []
    i, n = 0, len(masked)
    chunk_start = 0  # where the current top-level declaration began
    while i < n:
        c = masked[i]
        if c == "#":
            line_start = masked.rfind("\n", 0, i) + 1
            if masked[line_start:i].strip() == "":
                # preprocessor directive, honouring backslash continuations
                j = i
                while j < n and not (masked[j] == "\n" and masked[j - 1] != "\\"):
                    j += 1
                i = j + 1
                chunk_start = i
                continue
            i += 1
            continue
        if c == ";":
            chunk_start = i + 1
            i += 1
            continue
        if c == "}":
            return defs, False  # unbalanced close at top level
        if c == "{":
            depth = 1
            j = i + 1
            while j < n and depth:
                if masked[j] == "{":
                    depth += 1
                elif masked[j] == "}":
                    depth -= 1
                j += 1
            if depth:
                return defs, False
            name = _func_name(masked, chunk_start, i)
            if name:
                start = chunk_start
                while start < i and masked[start].isspace():
                    start += 1
                end = j
                while end < n and masked[end] in " \t":
                    end += 1
                if end < n and masked[end] == "\n":
                    end += 1
                defs.append(_FuncDef(name, start, i, end))
            chunk_start = j
            i = j
            continue
        i += 1
    return defs, True


def _func_name(masked: str, chunk_start: int, brace_pos: int) -> str | None:
    """Name of the function whose body opens at brace_pos, or None if the
    chunk does not look like `... name(params) {`."""
    k = brace_pos - 1
    while True:
        while k >= chunk_start and masked[k].isspace():
            k -= 1
        if k < chunk_start or masked[k] != ")":
            return None
        depth = 0
        while k >= chunk_start:
            if masked[k] == ")":
                depth += 1
            elif masked[k] == "(":
                depth -= 1
                if depth == 0:
                    break
            k -= 1
        if depth:
            return None
        m = k - 1
        while m >= chunk_start and masked[m].isspace():
            m -= 1
        end = m
        while m >= chunk_start and (masked[m].isalnum() or masked[m] == "_"):
            m -= 1
        name = masked[m + 1 : end + 1]
        if name == "__attribute__":
            k = m  # attribute between param list and brace; keep looking left
            continue
        if not name or name[0].isdigit() or name in C_KEYWORDS:
            return None
        return name


def strip_dead_functions(source_text: str) -> str:
    """Remove functions unreachable from main via the static call graph.

    Any identifier occurrence counts as a use (so address-taken functions are
    kept), and names referenced from non-function top-level text are treated
    as roots.  Unscannable input is returned unchanged with a warning.
    """
    masked = _mask_all(source_text)
    defs, ok = _scan_functions(masked)
    if not ok:
        logger.warning("dead-function pass: unbalanced braces, leaving source unchanged")
        return source_text
    names = {d.name for d in defs}
    if "main" not in names:
        return source_text

    name_re = re.compile(r"\b(" + "|".join(re.escape(n) for n in sorted(names)) + r")\b")
    edges: dict[str, set[str]] = {name: set() for name in names}
    for d in defs:
        # whole span, not just the body: self-edges cannot make a function
        # reachable, and calls can hide in VLA parameter declarators
        for m in name_re.finditer(masked, d.start, d.end):
            edges[d.name].add(m.group(1))

    rooted = {"main"}
    spans = sorted((d.start, d.end) for d in defs)
    pos = 0
    gaps = []
    for s, e in spans:
        gaps.append((pos, s))
        pos = e
    gaps.append((pos, len(masked)))
    for gs, ge in gaps:
        for m in name_re.finditer(masked, gs, ge):
            # at file scope `name(` can only be a declarator (prototypes),
            # never a call, so it is not a use; `= name`, `{name, ...}` and
            # macro bodies do root the function
            k = m.end()
            while k < ge and masked[k].isspace():
                k += 1
            if k < ge and masked[k] == "(":
                continue
            rooted.add(m.group(1))

    reachable: set[str] = set()
    frontier = list(rooted & names)
    while frontier:
        cur = frontier.pop()
        if cur in reachable:
            continue
        reachable.add(cur)
        frontier.extend(edges.get(cur, ()) - reachable)

    dead = [d for d in defs if d.name not in reachable]
    if not dead:
        return source_text
    out = []
    pos = 0
    for d in sorted(dead, key=lambda d: d.start):
        out.append(source_text[pos : d.start])
        pos = d.end
    out.append(source_text[pos:])
    return "".join(out)


# ---------------------------------------------------------------------------
# structural metrics
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"[A-Za-z_]\w*|\*=|\*|\S")
_STRUCT_DEF_RE = re.compile(r"\bstruct\b\s*(?:[A-Za-z_]\w*\s*)?\{")
_MEMORY_CALL_RE = re.compile(r"\b(?:malloc|calloc|realloc|free)\s*\(")


def _typedef_names(masked: str) -> set[str]:
    """Names introduced by top-level typedefs (last identifier before the
    terminating semicolon, skipping brace bodies)."""
    names: set[str] = set()
    for m in re.finditer(r"\btypedef\b", masked):
        i, n = m.end(), len(masked)
        depth = 0
        last_ident = None
        while i < n:
            c = masked[i]
            if c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
            elif c == ";" and depth == 0:
                break
            elif depth == 0 and (c.isalpha() or c == "_"):
                j = i
                while j < n and (masked[j].isalnum() or masked[j] == "_"):
                    j += 1
                last_ident = masked[i:j]
                i = j
                continue
            i += 1
        if last_ident and last_ident not in C_KEYWORDS:
            names.add(last_ident)
    return names


def _count_pointer_declarators(masked: str) -> int:
    """Count `*` tokens in declarator position.

    A star counts when the previous significant token is a known type name
    (builtin keyword, typedef name, or struct/union/enum tag) or another
    counted star; qualifiers are transparent.  This keeps multiplication and
    dereference out of the count.
    """
    type_names = TYPE_KEYWORDS | _typedef_names(masked)
    count = 0
    pointer_ok = False
    prev = None
    for m in _TOKEN_RE.finditer(masked):
        tok = m.group()
        if tok in _QUALIFIERS:
            continue
        if tok == "*":
            if pointer_ok:
                count += 1
            # chained stars stay countable, anything else resets below
            prev = tok
            continue
        if tok in type_names or (prev in ("struct", "union", "enum") and tok.isidentifier()):
            pointer_ok = True
        else:
            pointer_ok = False
        prev = tok
    return count


def extract_code_metrics(source_text: str) -> CodeMetrics:
    """Token-scan metrics: non-blank comment-stripped lines, function
    definitions, pointer declarators, struct definitions, allocator calls."""
    stripped = _blank_comments(source_text)
    loc = sum(1 for line in stripped.splitlines() if line.strip())
    masked = _mask_all(source_text)
    defs, _ = _scan_functions(masked)
    return CodeMetrics(
        loc=loc,
        functions=len(defs),
        pointers=_count_pointer_declarators(masked),
        structs=len(_STRUCT_DEF_RE.findall(masked)),
        memory_calls=len(_MEMORY_CALL_RE.findall(masked)),
    )


# ---------------------------------------------------------------------------
# corpus layout: <root>/<id>/main.c, <root>/<id>/tests/<n>.in|.out,
# optional <root>/<id>/meta.json with precomputed coverage
# ---------------------------------------------------------------------------

def _case_sort_key(stem: str):
    return (0, int(stem)) if stem.isdigit() else (1, stem)


def _load_cases(tests_dir: Path) -> list[TestCase]:
    if not tests_dir.is_dir():
        return []
    cases = []
    for in_file in sorted(tests_dir.glob("*.in"), key=lambda p: _case_sort_key(p.stem)):
        out_file = in_file.with_suffix(".out")
        if not out_file.is_file():
            logger.warning("test case %s has no matching .out file, skipping", in_file)
            continue
        cases.append(
            TestCase(
                input=in_file.read_text(encoding="utf-8", errors="replace"),
                expected_output=out_file.read_text(encoding="utf-8", errors="replace"),
            )
        )
    return cases


def load_corpus(root: str | Path) -> list[SourceProgram]:
    """Load every program directory under root that has at least one test
    case; malformed directories are skipped with a warning."""
    root = Path(root)
    if not root.is_dir():
        raise CorpusError(f"corpus root {root} is not a readable directory")
    programs = []
    for prog_dir in sorted((p for p in root.iterdir() if p.is_dir()), key=lambda p: p.name):
        src_file = prog_dir / "main.c"
        if not src_file.is_file():
            logger.warning("program %s has no main.c, skipping", prog_dir.name)
            continue
        raw = src_file.read_text(encoding="utf-8", errors="replace")
        if not raw.strip():
            logger.warning("program %s has an empty main.c, skipping", prog_dir.name)
            continue
        cases = _load_cases(prog_dir / "tests")
        if not cases:
            logger.warning("program %s has no usable test cases, skipping", prog_dir.name)
            continue
        source = strip_dead_functions(raw)
        coverage = None
        meta_file = prog_dir / "meta.json"
        if meta_file.is_file():
            try:
                meta = json.loads(meta_file.read_text(encoding="utf-8"))
                coverage = meta.get("coverage")
            except (json.JSONDecodeError, OSError) as exc:
                logger.warning("program %s has unreadable meta.json (%s)", prog_dir.name, exc)
        programs.append(
            SourceProgram(
                id=prog_dir.name,
                source_text=source,
                test_cases=cases,
                metrics=extract_code_metrics(source),
                coverage=coverage,
            )
        )
    return programs


def write_corpus(programs: list[SourceProgram], root: str | Path) -> None:
    """Serialize programs back into the on-disk corpus layout."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for prog in programs:
        prog_dir = root / prog.id
        tests_dir = prog_dir / "tests"
        tests_dir.mkdir(parents=True, exist_ok=True)
        (prog_dir / "main.c").write_text(prog.source_text, encoding="utf-8")
        for i, case in enumerate(prog.test_cases):
            (tests_dir / f"{i}.in").write_text(case.input, encoding="utf-8")
            (tests_dir / f"{i}.out").write_text(case.expected_output, encoding="utf-8")
        if prog.coverage is not None:
            (prog_dir / "meta.json").write_text(
                json.dumps({"coverage": prog.coverage}), encoding="utf-8"
            )
