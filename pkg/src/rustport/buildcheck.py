"""Rust compiler invocation in isolated working directories, with structured
diagnostic parsing and a catalogue of the frequent error codes."""

from __future__ import annotations

import json
import logging
import re
import subprocess
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)

DEFAULT_COMPILER_CMD = ("rustc", "--edition", "2021", "--error-format=json", "-O")
DEFAULT_COMPILE_TIMEOUT_MS = 60_000
SOURCE_NAME = "main.rs"
BINARY_NAME = "main_bin"

_ERROR_CODE_RE = re.compile(r"^E\d{4}$")
_HEADER_RE = re.compile(r"^(error|warning)(?:\[([A-Z]\d{4})\])?: (.*)$")

# bounds simultaneous compiler processes across worker threads
_compile_slots = threading.BoundedSemaphore(4)


class CompilerMissingError(Exception):
    """The configured compiler binary cannot be executed."""


class WorkdirReuseError(Exception):
    """A compile workdir already holds a source file from a previous attempt."""


@dataclass(frozen=True)
class Diagnostic:
    code: str | None
    level: str  # "error" | "warning"
    message: str
    rendered: str


@dataclass
class CompileResult:
    status: str  # "success" | "failure"
    binary_path: Path | None
    diagnostics: list[Diagnostic]
    duration_ms: int

    @property
    def errors(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.level == "error"]

    def rendered_errors(self) -> str:
        return "".join(d.rendered for d in self.errors)


def set_compile_jobs(n: int) -> None:
    global _compile_slots
    _compile_slots = threading.BoundedSemaphore(max(1, n))


def _is_summary(message: str) -> bool:
    # rustc closes the stream with bookkeeping lines that are not diagnostics
    return (
        message.startswith("aborting due to")
        or re.fullmatch(r"\d+ warnings? emitted", message) is not None
    )


def _parse_json_stream(raw: str) -> list[Diagnostic] | None:
    diagnostics = []
    saw_json = False
    for line in raw.splitlines():
        line = line.strip()
        if not line.startswith("{"):
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError:
            continue
        if doc.get("$message_type", "diagnostic") != "diagnostic":
            continue
        saw_json = True
        level = doc.get("level")
        if level not in ("error", "warning"):
            continue
        message = doc.get("message", "")
        if _is_summary(message):
            continue
        code = (doc.get("code") or {}).get("code")
        if code and not _ERROR_CODE_RE.match(code):
            code = None  # lint names are not error codes
        rendered = doc.get("rendered") or f"{level}: {message}\n"
        diagnostics.append(Diagnostic(code=code, level=level, message=message, rendered=rendered))
    return diagnostics if saw_json else None


def _parse_rendered(raw: str) -> list[Diagnostic]:
    diagnostics = []
    current: dict | None = None
    lines_acc: list[str] = []

    def flush():
        if current is not None:
            current["rendered"] = "\n".join(lines_acc) + "\n"
            diagnostics.append(Diagnostic(**current))

    for line in raw.splitlines():
        m = _HEADER_RE.match(line)
        if m and not _is_summary(m.group(3)):
            flush()
            current = {"level": m.group(1), "code": m.group(2), "message": m.group(3)}
            lines_acc = [line]
        elif m:
            flush()
            current = None
            lines_acc = []
        elif current is not None:
            lines_acc.append(line)
    flush()
    return diagnostics


def parse_diagnostics(raw_output: str) -> list[Diagnostic]:
    """Parse compiler output into diagnostics, in order.

    Prefers the machine-readable JSON stream when the text contains one and
    falls back to scanning the human-readable rendering; unrecognized lines
    are ignored.
    """
    from_json = _parse_json_stream(raw_output)
    if from_json is not None:
        return from_json
    return _parse_rendered(raw_output)


def compile_translation(
    translation: str,
    workdir: str | Path,
    timeout_ms: int = DEFAULT_COMPILE_TIMEOUT_MS,
    compiler_cmd: tuple[str, ...] = DEFAULT_COMPILER_CMD,
) -> CompileResult:
    """Write the translation into a fresh workdir and compile it.

    The workdir is retained afterwards so the transcript can reference the
    exact source and binary; reusing a workdir that already holds a source
    file is refused.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    source = workdir / SOURCE_NAME
    if source.exists():
        raise WorkdirReuseError(f"{workdir} already contains {SOURCE_NAME}")
    source.write_text(translation, encoding="utf-8")

    cmd = [*compiler_cmd, SOURCE_NAME, "-o", BINARY_NAME]
    start = time.monotonic()
    with _compile_slots:
        try:
            proc = subprocess.run(
                cmd,
                cwd=workdir,
                capture_output=True,
                text=True,
                timeout=timeout_ms / 1000.0,
            )
        except FileNotFoundError as exc:
            raise CompilerMissingError(f"compiler not found: {compiler_cmd[0]}") from exc
        except subprocess.TimeoutExpired:
            duration = int((time.monotonic() - start) * 1000)
            timeout_diag = Diagnostic(
                code=None,
                level="error",
                message="compiler timeout",
                rendered="error: compiler timeout\n",
            )
            return CompileResult("failure", None, [timeout_diag], duration)
    duration = int((time.monotonic() - start) * 1000)

    diagnostics = parse_diagnostics(proc.stderr)
    binary = workdir / BINARY_NAME
    if proc.returncode == 0 and binary.is_file():
        return CompileResult("success", binary, diagnostics, duration)
    if not any(d.level == "error" for d in diagnostics):
        # compiler crashed or died without emitting a structured error
        tail = proc.stderr[-2000:]
        diagnostics = list(diagnostics) + [
            Diagnostic(
                code=None,
                level="error",
                message="compiler crash",
                rendered=f"error: compiler crash\n{tail}\n",
            )
        ]
    return CompileResult("failure", None, diagnostics, duration)


def count_unsafe_blocks(translation: str) -> int:
    """Occurrences of the `unsafe` keyword outside strings and comments."""
    return len(re.findall(r"\bunsafe\b", _mask_rust(translation)))


def _mask_rust(text: str) -> str:
    """Blank out comment and string/char literal contents (Rust syntax,
    including nested block comments and raw strings)."""
    out = list(text)
    i, n = 0, len(text)

    def blank(a: int, b: int) -> None:
        for k in range(a, min(b, n)):
            if text[k] != "\n":
                out[k] = " "

    while i < n:
        c = text[i]
        nxt = text[i + 1] if i + 1 < n else ""
        if c == "/" and nxt == "/":
            j = text.find("\n", i)
            j = n if j == -1 else j
            blank(i, j)
            i = j
        elif c == "/" and nxt == "*":
            depth = 1
            j = i + 2
            while j < n and depth:
                if text[j : j + 2] == "/*":
                    depth += 1
                    j += 2
                elif text[j : j + 2] == "*/":
                    depth -= 1
                    j += 2
                else:
                    j += 1
            blank(i, j)
            i = j
        elif c == "r" and (nxt == '"' or nxt == "#"):
            m = re.match(r'r(#*)"', text[i:])
            if m:
                closer = '"' + m.group(1)
                j = text.find(closer, i + len(m.group(0)))
                j = n if j == -1 else j + len(closer)
                blank(i, j)
                i = j
            else:
                i += 1
        elif c == '"':
            j = i + 1
            while j < n and text[j] != '"':
                j += 2 if text[j] == "\\" else 1
            blank(i, j + 1)
            i = j + 1
        elif c == "'":
            # char literal (not a lifetime): 'x', '\n', '\u{..}'
            m = re.match(r"'(\\.[^']*|[^'\\])'", text[i:])
            if m:
                blank(i, i + m.end())
                i += m.end()
            else:
                i += 1
        else:
            i += 1
    return "".join(out)


# one-line meanings for the 25 frequently seen rustc error codes
ERROR_CATALOGUE: dict[str, str] = {
    "E0061": "wrong number of arguments passed to a function call",
    "E0106": "missing lifetime specifier in a type",
    "E0133": "unsafe operation used outside an unsafe block",
    "E0252": "a name is imported or defined multiple times in the same scope",
    "E0277": "a type does not implement a required trait",
    "E0282": "type annotations needed; the type cannot be inferred",
    "E0284": "type annotations needed; ambiguous associated type resolution",
    "E0308": "mismatched types",
    "E0369": "binary operation cannot be applied to the given types",
    "E0382": "use of a moved value",
    "E0384": "cannot assign twice to an immutable variable",
    "E0425": "cannot find value in this scope",
    "E0428": "an item is defined multiple times with the same name",
    "E0432": "unresolved import",
    "E0433": "failed to resolve a path (undeclared crate, module, or type)",
    "E0434": "cannot capture the dynamic environment in a fn item",
    "E0499": "cannot borrow a value as mutable more than once at a time",
    "E0502": "cannot borrow as mutable because it is also borrowed as immutable",
    "E0506": "cannot assign to a value while it is borrowed",
    "E0530": "a match binding cannot shadow a static, struct, or constant",
    "E0596": "cannot borrow an immutable value as mutable",
    "E0599": "no method or associated item found for the given type",
    "E0600": "unary operator cannot be applied to the type",
    "E0608": "cannot index into a value of this type",
    "E0609": "no field with that name exists on the type",
}


@dataclass
class CodeTally:
    known: Counter
    unknown: Counter


def tally_codes(diagnostics: list[Diagnostic]) -> CodeTally:
    """Split error-code counts into catalogued and unknown; codes are never
    dropped on the floor."""
    known: Counter = Counter()
    unknown: Counter = Counter()
    for diag in diagnostics:
        if diag.level != "error" or diag.code is None:
            continue
        (known if diag.code in ERROR_CATALOGUE else unknown)[diag.code] += 1
    return CodeTally(known=known, unknown=unknown)
