"""Bounded-model-checker scanning of the C corpus and replay of trigger
inputs against the C original and its translation to classify whether each
flaw was mitigated."""

from __future__ import annotations

import json
import logging
import os
import re
import resource
import shutil
import signal
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from . import buildcheck
from .corpus import SourceProgram
from .validate import ExecLimits, scrub_volatile

logger = logging.getLogger(__name__)

SCAN_FILE = "scan.jsonl"
MITIGATION_FILE = "mitigation.jsonl"
MITIGATION_SUMMARY_FILE = "mitigation_summary.json"

_SANITIZER_MARKERS = ("runtime error:", "AddressSanitizer", "LeakSanitizer", "stack smashing")


class CheckerUnavailableError(Exception):
    """The external checker binary is not installed; scanning is disabled."""


class VulnType(str, Enum):
    buffer_overflow = "buffer_overflow"
    array_bounds = "array_bounds"
    arithmetic_overflow = "arithmetic_overflow"
    null_deref = "null_deref"
    div_by_zero = "div_by_zero"
    vla_overflow = "vla_overflow"
    forgotten_memory = "forgotten_memory"
    invalid_pointer = "invalid_pointer"
    invalidated_object = "invalidated_object"
    invalid_free = "invalid_free"
    misaligned_access = "misaligned_access"
    other = "other"


class MitigationKind(str, Enum):
    mitigated_panic = "mitigated_panic"
    mitigated_graceful = "mitigated_graceful"
    not_triggered = "not_triggered"
    still_vulnerable = "still_vulnerable"
    inconclusive = "inconclusive"


@dataclass(frozen=True)
class CheckerConfig:
    command: str = "esbmc"
    flags: tuple[str, ...] = ("--overflow-check",)
    timeout_ms: int = 30_000


@dataclass(frozen=True)
class PanicSignature:
    exit_code: int = 101
    marker: str = "panicked"


@dataclass
class Finding:
    vuln_type: str
    location: str
    trigger_input: str | None
    raw: str


@dataclass
class VerificationOutcome:
    kind: str  # "failed" | "successful" | "scan_error"
    findings: list[Finding]
    duration_ms: int


@dataclass
class MitigationVerdict:
    kind: MitigationKind
    c_behavior: str
    translated_behavior: str


# checker violation text -> category; more specific phrases first
_CLASSIFY_PATTERNS: tuple[tuple[str, VulnType], ...] = (
    ("invalid pointer freed", VulnType.invalid_free),
    ("invalidated dynamic object", VulnType.invalidated_object),
    ("forgotten memory", VulnType.forgotten_memory),
    ("misaligned access", VulnType.misaligned_access),
    ("null pointer", VulnType.null_deref),
    ("invalid pointer", VulnType.invalid_pointer),
    ("buffer overflow", VulnType.buffer_overflow),
    ("array bounds violated", VulnType.array_bounds),
    ("bounds violated", VulnType.array_bounds),
    ("arithmetic overflow", VulnType.arithmetic_overflow),
    ("division by zero", VulnType.div_by_zero),
    ("vla array size", VulnType.vla_overflow),
    ("overflows address space", VulnType.vla_overflow),
)


def classify_finding(raw_line: str) -> str:
    """Map checker violation text onto a vulnerability category
    (case-insensitive substring match, falling back to `other`)."""
    lowered = raw_line.lower()
    for needle, vuln_type in _CLASSIFY_PATTERNS:
        if needle in lowered:
            return vuln_type.value
    return VulnType.other.value


_STATE_ASSIGN_RE = re.compile(r"^\s+([A-Za-z_]\w*)\s*=\s*(-?\d+)\b")
_LOCATION_RE = re.compile(r"file\s+(\S+)\s+line\s+(\d+)")


def _parse_checker_output(output: str) -> tuple[list[Finding], str | None]:
    """Pull findings out of counterexample text.

    The trigger input is rebuilt from the scalar assignments in the state
    trace, joined into one whitespace-separated stdin line; when nothing
    parses the findings are kept with trigger_input absent.
    """
    scalars: list[str] = []
    findings: list[Finding] = []
    lines = output.splitlines()
    i = 0
    while i < len(lines):
        line = lines[i]
        m = _STATE_ASSIGN_RE.match(line)
        if m:
            scalars.append(m.group(2))
        if line.strip().startswith("Violated property"):
            block = []
            j = i + 1
            while j < len(lines) and lines[j].strip() and not lines[j].startswith("State"):
                block.append(lines[j].strip())
                j += 1
            location = ""
            violation = ""
            for entry in block:
                loc = _LOCATION_RE.search(entry)
                if loc and not location:
                    location = f"{loc.group(1)}:{loc.group(2)}"
                elif entry and not violation and not loc:
                    violation = entry
            findings.append(
                Finding(
                    vuln_type=classify_finding(violation or " ".join(block)),
                    location=location,
                    trigger_input=None,
                    raw="\n".join(block),
                )
            )
            i = j
            continue
        i += 1
    trigger = (" ".join(scalars) + "\n") if scalars else None
    for f in findings:
        f.trigger_input = trigger
    return findings, trigger


def verify_c_program(program: SourceProgram, checker: CheckerConfig) -> VerificationOutcome:
    """Run the bounded model checker on one program.

    Counterexample -> failed (with findings), proof within the bound ->
    successful, checker crash or timeout -> scan_error.
    """
    if shutil.which(checker.command) is None:
        raise CheckerUnavailableError(
            f"checker command {checker.command!r} not found; scanning disabled"
        )
    start = time.monotonic()
    with tempfile.TemporaryDirectory(prefix="vulnscan-") as tmp:
        src = Path(tmp) / "main.c"
        src.write_text(program.source_text, encoding="utf-8")
        try:
            proc = subprocess.run(
                [checker.command, *checker.flags, src.name],
                cwd=tmp,
                capture_output=True,
                text=True,
                timeout=checker.timeout_ms / 1000.0,
            )
        except subprocess.TimeoutExpired:
            duration = int((time.monotonic() - start) * 1000)
            return VerificationOutcome("scan_error", [], duration)
    duration = int((time.monotonic() - start) * 1000)
    output = proc.stdout + "\n" + proc.stderr
    if "VERIFICATION FAILED" in output:
        findings, _ = _parse_checker_output(output)
        if not findings:
            findings = [
                Finding(
                    vuln_type=VulnType.other.value,
                    location="",
                    trigger_input=None,
                    raw="verification failed without a parseable violated property",
                )
            ]
        return VerificationOutcome("failed", findings, duration)
    if "VERIFICATION SUCCESSFUL" in output:
        return VerificationOutcome("successful", [], duration)
    return VerificationOutcome("scan_error", [], duration)


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

@dataclass
class Behavior:
    exit_code: int | None
    signal: int | None
    stdout: str
    stderr: str
    timed_out: bool

    def describe(self) -> str:
        if self.timed_out:
            return "timed out"
        if self.signal is not None:
            return f"terminated by signal {self.signal}; stderr: {self.stderr[:500]!r}"
        return f"exit status {self.exit_code}; stderr: {self.stderr[:500]!r}"


def _run_binary(binary: Path, input_text: str, limits: ExecLimits) -> Behavior:
    # no RLIMIT_AS here: sanitizer runtimes reserve large address ranges
    def apply_limits():
        resource.setrlimit(resource.RLIMIT_CORE, (0, 0))

    proc = subprocess.Popen(
        [str(binary)],
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        env={"PATH": os.environ.get("PATH", "/usr/bin"), "RUST_BACKTRACE": "0"},
        preexec_fn=apply_limits,
        start_new_session=True,
    )
    try:
        out, err = proc.communicate(
            input=input_text.encode("utf-8"), timeout=limits.wall_timeout_ms / 1000.0
        )
    except subprocess.TimeoutExpired:
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        proc.communicate()
        return Behavior(None, None, "", "", True)
    rc = proc.returncode
    return Behavior(
        exit_code=rc if rc >= 0 else None,
        signal=-rc if rc < 0 else None,
        stdout=out[: limits.output_cap_bytes].decode("utf-8", errors="replace"),
        stderr=scrub_volatile(err[:65536].decode("utf-8", errors="replace")),
        timed_out=False,
    )


def build_c_binary(
    source_text: str, workdir: str | Path, instrumented: bool = False, cc: str = "gcc"
) -> Path | None:
    """Build the C side of a replay; instrumented builds add runtime checking
    so silent undefined behavior becomes observable."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    src = workdir / "main.c"
    src.write_text(source_text, encoding="utf-8")
    out = workdir / ("c_checked" if instrumented else "c_plain")
    cmd = [cc, "-O0", "-w", str(src), "-o", str(out)]
    if instrumented:
        cmd[2:2] = ["-g", "-fsanitize=address,undefined", "-fno-sanitize-recover=all"]
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True, timeout=120)
    except (subprocess.TimeoutExpired, FileNotFoundError) as exc:
        logger.warning("C build failed (%s): %s", out.name, exc)
        return None
    if proc.returncode != 0:
        logger.warning("C build failed (%s): %s", out.name, proc.stderr[:500])
        return None
    return out


def _c_abnormal(behavior: Behavior) -> bool:
    if behavior.signal is not None:
        return True
    low = behavior.stderr
    if any(marker in low for marker in _SANITIZER_MARKERS):
        return True
    return False


def replay_mitigation(
    c_binary: str | Path,
    translated_binary: str | Path,
    trigger: str | None,
    limits: ExecLimits,
    instrumented_c_binary: str | Path | None = None,
    panic: PanicSignature = PanicSignature(),
) -> MitigationVerdict:
    """Feed the same trigger input to both binaries and classify the result.

    Both behaviors are always recorded.  The C side counts as abnormal on a
    fault signal or a sanitizer report (from the plain build or, when given,
    the instrumented one); the translation counts as a panic when it matches
    the configured signature.
    """
    if trigger is None:
        reason = "not executed: no trigger input available"
        return MitigationVerdict(MitigationKind.inconclusive, reason, reason)
    c_beh = _run_binary(Path(c_binary), trigger, limits)
    c_desc = f"plain build: {c_beh.describe()}"
    c_abnormal = _c_abnormal(c_beh)
    if not c_abnormal and instrumented_c_binary is not None:
        checked = _run_binary(Path(instrumented_c_binary), trigger, limits)
        if _c_abnormal(checked):
            c_abnormal = True
            c_beh = checked
            c_desc = f"instrumented build: {checked.describe()}"
    tr_beh = _run_binary(Path(translated_binary), trigger, limits)
    tr_desc = tr_beh.describe()

    tr_panic = (
        tr_beh.exit_code == panic.exit_code and panic.marker in tr_beh.stderr
    )
    tr_fault = tr_beh.signal is not None
    tr_normal = tr_beh.exit_code == 0 and not tr_beh.timed_out
    tr_graceful = (
        not tr_fault
        and not tr_panic
        and not tr_beh.timed_out
        and (tr_beh.exit_code != 0 or bool(tr_beh.stderr.strip()))
    )
    c_normal = c_beh.exit_code == 0 and not c_abnormal and not c_beh.timed_out

    if tr_fault:
        kind = MitigationKind.still_vulnerable
    elif c_abnormal and tr_panic:
        kind = MitigationKind.mitigated_panic
    elif c_abnormal and tr_graceful:
        kind = MitigationKind.mitigated_graceful
    elif c_normal and tr_normal:
        kind = MitigationKind.not_triggered
    else:
        kind = MitigationKind.inconclusive
    return MitigationVerdict(kind, c_desc, tr_desc)


# ---------------------------------------------------------------------------
# campaign-level scan and replay
# ---------------------------------------------------------------------------

def scan_corpus(
    corpus: list[SourceProgram], checker: CheckerConfig, out_dir: str | Path
) -> list[tuple[str, VerificationOutcome]]:
    """Scan the corpus and persist results (including each program's source,
    so the replay step needs only the scan directory and a run directory)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    with (out_dir / SCAN_FILE).open("w", encoding="utf-8") as fh:
        for program in corpus:
            outcome = verify_c_program(program, checker)
            results.append((program.id, outcome))
            fh.write(
                json.dumps(
                    {
                        "program_id": program.id,
                        "kind": outcome.kind,
                        "duration_ms": outcome.duration_ms,
                        "source_text": program.source_text,
                        "findings": [
                            {
                                "vuln_type": f.vuln_type,
                                "location": f.location,
                                "trigger_input": f.trigger_input,
                                "raw": f.raw,
                            }
                            for f in outcome.findings
                        ],
                    },
                    sort_keys=True,
                )
                + "\n"
            )
            fh.flush()
    return results


def load_scan(scan_dir: str | Path) -> list[dict]:
    path = Path(scan_dir) / SCAN_FILE
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]


def replay_campaign(
    run_dir: str | Path,
    scan_dir: str | Path,
    limits: ExecLimits | None = None,
    cc: str = "gcc",
    panic: PanicSignature = PanicSignature(),
) -> list[dict]:
    """Replay every finding with a trigger against the final translation of
    each successfully translated program; writes mitigation.jsonl plus a
    vuln-type x verdict contingency summary."""
    run_dir = Path(run_dir)
    scan_dir = Path(scan_dir)
    limits = limits or ExecLimits()
    records: list[dict] = []
    replay_root = scan_dir / "replay"
    for entry in load_scan(scan_dir):
        if entry["kind"] != "failed":
            continue
        program_id = entry["program_id"]
        final_rs = run_dir / program_id / "final.rs"
        if not final_rs.is_file():
            logger.info("program %s has no successful translation; skipping replay", program_id)
            continue
        workdir = replay_root / program_id
        c_plain = build_c_binary(entry["source_text"], workdir, instrumented=False, cc=cc)
        c_checked = build_c_binary(entry["source_text"], workdir, instrumented=True, cc=cc)
        try:
            cres = buildcheck.compile_translation(
                final_rs.read_text(encoding="utf-8"), workdir / "rust"
            )
        except buildcheck.CompilerMissingError:
            logger.warning("rust compiler unavailable; aborting replay")
            break
        if c_plain is None or cres.status != "success":
            logger.warning("program %s: replay binaries unavailable", program_id)
            continue
        for finding in entry["findings"]:
            verdict = replay_mitigation(
                c_plain,
                cres.binary_path,
                finding.get("trigger_input"),
                limits,
                instrumented_c_binary=c_checked,
                panic=panic,
            )
            records.append(
                {
                    "program_id": program_id,
                    "vuln_type": finding["vuln_type"],
                    "location": finding["location"],
                    "verdict": verdict.kind.value,
                    "c_behavior": verdict.c_behavior,
                    "translated_behavior": verdict.translated_behavior,
                }
            )
    with (scan_dir / MITIGATION_FILE).open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    (scan_dir / MITIGATION_SUMMARY_FILE).write_text(
        json.dumps(mitigation_table(records), sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    return records


def mitigation_table(records: list[dict]) -> dict[str, dict[str, int]]:
    """Contingency table: per vulnerability type, counts of each verdict."""
    table: dict[str, dict[str, int]] = {}
    for record in records:
        row = table.setdefault(record["vuln_type"], {k.value: 0 for k in MitigationKind})
        row[record["verdict"]] += 1
    return table
