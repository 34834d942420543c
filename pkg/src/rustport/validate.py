"""Execute compiled translations against test cases under resource limits and
classify the outcome (pass, runtime error, infinite loop, wrong output)."""

from __future__ import annotations

import logging
import os
import re
import resource
import signal
import subprocess
import tempfile
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .corpus import TestCase
from .prompts import infinite_loop_notice

logger = logging.getLogger(__name__)

_DETAIL_CAP = 64 * 1024  # stderr kept per failure, head
_SECTION_CAP = 4000  # chars per section of a mismatch report

# rustc >= 1.82 prints the OS thread id inside panic headers; it varies per
# run, so it is scrubbed to keep transcripts replay-identical
_THREAD_ID_RE = re.compile(r"(thread '[^']*') \(\d+\)( panicked)")


class Verdict(str, Enum):
    passed = "pass"
    runtime_error = "runtime_error"
    infinite_loop = "infinite_loop"
    test_case_error = "test_case_error"


@dataclass(frozen=True)
class ExecLimits:
    wall_timeout_ms: int = 10_000
    memory_cap_bytes: int = 1 << 30
    output_cap_bytes: int = 8 * 1024 * 1024

    def __post_init__(self):
        if min(self.wall_timeout_ms, self.memory_cap_bytes, self.output_cap_bytes) <= 0:
            raise ValueError("all execution limits must be positive")


@dataclass
class CaseRun:
    status: str
    duration_ms: int


@dataclass
class ValidationResult:
    verdict: Verdict
    failing_case: int | None
    detail: str
    per_case: list[CaseRun]


def _normalize(text: str) -> str:
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    lines = [line.rstrip() for line in text.split("\n")]
    while lines and lines[-1] == "":
        lines.pop()
    return "\n".join(lines)


def compare_output(actual: str, expected: str) -> bool:
    """Equality after unifying line endings, stripping trailing whitespace per
    line, and dropping trailing blank lines.  Interior whitespace counts."""
    return _normalize(actual) == _normalize(expected)


def scrub_volatile(stderr_text: str) -> str:
    return _THREAD_ID_RE.sub(r"\1\2", stderr_text)


def _clip(text: str, cap: int) -> str:
    return text if len(text) <= cap else text[:cap] + "\n... (truncated)"


def _mismatch_detail(index: int, case: TestCase, actual: str) -> str:
    return "\n".join(
        [
            f"test case {index} failed",
            "input:",
            _clip(case.input.rstrip("\n"), _SECTION_CAP),
            "expected output:",
            _clip(case.expected_output.rstrip("\n"), _SECTION_CAP),
            "actual output:",
            _clip(actual.rstrip("\n"), _SECTION_CAP),
        ]
    )


@dataclass
class _CaseOutcome:
    status: Verdict
    duration_ms: int
    detail: str


def _run_one(binary: Path, case: TestCase, limits: ExecLimits) -> _CaseOutcome:
    def apply_limits():
        resource.setrlimit(resource.RLIMIT_AS, (limits.memory_cap_bytes,) * 2)
        resource.setrlimit(resource.RLIMIT_FSIZE, (limits.output_cap_bytes,) * 2)
        resource.setrlimit(resource.RLIMIT_CORE, (0, 0))

    env = {"PATH": os.environ.get("PATH", "/usr/bin"), "RUST_BACKTRACE": "0"}
    start = time.monotonic()
    with tempfile.TemporaryFile() as stdout_file:
        proc = subprocess.Popen(
            [str(binary)],
            stdin=subprocess.PIPE,
            stdout=stdout_file,
            stderr=subprocess.PIPE,
            env=env,
            preexec_fn=apply_limits,
            start_new_session=True,
        )
        try:
            _, stderr = proc.communicate(
                input=case.input.encode("utf-8"), timeout=limits.wall_timeout_ms / 1000.0
            )
        except subprocess.TimeoutExpired:
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except ProcessLookupError:
                pass
            proc.communicate()
            duration = int((time.monotonic() - start) * 1000)
            return _CaseOutcome(
                Verdict.infinite_loop,
                duration,
                infinite_loop_notice(limits.wall_timeout_ms / 1000.0),
            )
        duration = int((time.monotonic() - start) * 1000)
        stderr_text = _clip(scrub_volatile(stderr.decode("utf-8", errors="replace")), _DETAIL_CAP)

        if proc.returncode < 0:
            sig = -proc.returncode
            if sig == signal.SIGXFSZ:
                return _CaseOutcome(Verdict.runtime_error, duration, "output limit exceeded")
            detail = stderr_text or f"terminated by signal {sig}"
            return _CaseOutcome(Verdict.runtime_error, duration, detail)
        if proc.returncode != 0:
            detail = stderr_text or f"exited with status {proc.returncode}"
            return _CaseOutcome(Verdict.runtime_error, duration, detail)

        stdout_file.seek(0)
        raw_out = stdout_file.read(limits.output_cap_bytes + 1)
        if len(raw_out) > limits.output_cap_bytes:
            return _CaseOutcome(Verdict.runtime_error, duration, "output limit exceeded")
        actual = raw_out.decode("utf-8", errors="replace")
        if compare_output(actual, case.expected_output):
            return _CaseOutcome(Verdict.passed, duration, "")
        return _CaseOutcome(Verdict.test_case_error, duration, actual)


def run_tests(binary: str | Path, cases: list[TestCase], limits: ExecLimits) -> ValidationResult:
    """Run cases in order, stopping at the first failure.

    Timeout maps to infinite_loop, abnormal termination or nonzero exit to
    runtime_error, and an output mismatch to test_case_error, with the panic
    text, timeout notice, or expected/actual dump carried in detail.
    """
    binary = Path(binary)
    if not binary.is_file():
        raise FileNotFoundError(f"binary {binary} does not exist")
    per_case: list[CaseRun] = []
    for index, case in enumerate(cases):
        outcome = _run_one(binary, case, limits)
        per_case.append(CaseRun(status=outcome.status.value, duration_ms=outcome.duration_ms))
        if outcome.status is not Verdict.passed:
            detail = outcome.detail
            if outcome.status is Verdict.test_case_error:
                detail = _mismatch_detail(index, case, outcome.detail)
            return ValidationResult(outcome.status, index, detail, per_case)
    return ValidationResult(Verdict.passed, None, "", per_case)
