"""Deterministic rendering of the four prompt families (base translation,
basic repair, guided repair, dynamic repair) and the guided-repair knowledge
base keyed by compiler error code."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import yaml

# the eight error codes covered by guided repair
TARGETED_CODES = ("E0277", "E0308", "E0425", "E0599", "E0384", "E0282", "E0502", "E0499")
TARGETED_CODE_SET = frozenset(TARGETED_CODES)

DEFAULT_DIAGNOSTICS_BUDGET = 16 * 1024  # bytes of compiler output kept (head)

GUIDANCE_DIR = Path(__file__).parent / "guidance"

BASE_TEMPLATE = (
    "Given some code written in the C programming language, translate it into "
    "equivalent Rust code that solves the exact same problem as the original "
    "code does. Ensure the following:\n"
    "- Produce only safe Rust code.\n"
    "- The translated Rust code can be compiled and executed with all the "
    "necessary imports.\n"
    "- Output only the code without any additional explanation or comments.\n"
    "- Wrap the code with ```rust\n"
    "C code:\n"
    "{c_source}\n"
    "Rust code:"
)

REPAIR_ERRORS_LINE = (
    "Executing your generated code gives the following errors because it is "
    "syntactically incorrect:"
)

CORRECTED_VERSION_LINE = (
    "Please suggest a corrected version of the complete code wrapped in ```rust"
)

DYNAMIC_ERROR_LINE = "Executing your generated code gives the following {error_type} error:"

GUIDANCE_HEADER = "Instructions for fixing specific errors:"


class PromptKind(str, Enum):
    base = "base"
    basic_repair = "basic_repair"
    guided_repair = "guided_repair"
    dynamic_repair = "dynamic_repair"


class DynamicErrorKind(str, Enum):
    runtime = "runtime"
    infinite_loop = "infinite_loop"
    test_case = "test_case"


_DYNAMIC_LABELS = {
    DynamicErrorKind.runtime: "runtime",
    DynamicErrorKind.infinite_loop: "infinite loop",
    DynamicErrorKind.test_case: "test case",
}


@dataclass(frozen=True)
class GuidanceCause:
    explanation: str
    bad_snippet: str
    fixed_snippet: str


@dataclass(frozen=True)
class GuidanceEntry:
    error_code: str
    title: str
    causes: tuple[GuidanceCause, ...]


def infinite_loop_notice(timeout_seconds: float) -> str:
    return f"the program did not terminate within {timeout_seconds:g} seconds"


def truncate_diagnostics(text: str, byte_budget: int = DEFAULT_DIAGNOSTICS_BUDGET) -> str:
    """Keep the head of oversized compiler output, cut on a UTF-8 boundary."""
    encoded = text.encode("utf-8")
    if len(encoded) <= byte_budget:
        return text
    head = encoded[:byte_budget].decode("utf-8", errors="ignore")
    return head + "\n... (diagnostics truncated)"


def build_base_prompt(c_source: str) -> str:
    if not c_source.strip():
        raise ValueError("c_source must be non-empty")
    return BASE_TEMPLATE.format(c_source=c_source)


def build_repair_prompt(
    c_source: str,
    bad_translation: str,
    diagnostics_text: str,
    byte_budget: int = DEFAULT_DIAGNOSTICS_BUDGET,
) -> str:
    if not diagnostics_text.strip():
        raise ValueError("diagnostics_text must be non-empty")
    return "\n".join(
        [
            build_base_prompt(c_source),
            "",
            "Rust code:",
            bad_translation,
            "",
            REPAIR_ERRORS_LINE,
            truncate_diagnostics(diagnostics_text, byte_budget),
            CORRECTED_VERSION_LINE,
        ]
    )


def render_guidance_entry(entry: GuidanceEntry) -> str:
    parts = [f"Error {entry.error_code} ({entry.title}):"]
    for i, cause in enumerate(entry.causes, start=1):
        parts.append(f"{i}. {cause.explanation} Example:")
        parts.append("//Cause:")
        parts.append(cause.bad_snippet.rstrip("\n"))
        parts.append("//Fix:")
        parts.append(cause.fixed_snippet.rstrip("\n"))
    return "\n".join(parts)


def build_guided_prompt(
    c_source: str,
    bad_translation: str,
    diagnostics,
    kb: list[GuidanceEntry],
    byte_budget: int = DEFAULT_DIAGNOSTICS_BUDGET,
) -> str:
    """Repair prompt augmented with exactly the knowledge-base entries whose
    codes occur in the diagnostics, in first-occurrence order."""
    by_code = {entry.error_code: entry for entry in kb}
    selected: list[GuidanceEntry] = []
    seen = set()
    for diag in diagnostics:
        code = getattr(diag, "code", None)
        if code and code in by_code and code not in seen:
            seen.add(code)
            selected.append(by_code[code])
    if not selected:
        raise ValueError("no diagnostic code has a guidance entry; use build_repair_prompt")
    diagnostics_text = "".join(getattr(d, "rendered", "") for d in diagnostics)
    if not diagnostics_text.strip():
        diagnostics_text = "\n".join(
            f"error[{d.code}]: {d.message}" if d.code else f"error: {d.message}"
            for d in diagnostics
        )
    return "\n".join(
        [
            build_base_prompt(c_source),
            "",
            "Rust code:",
            bad_translation,
            "",
            REPAIR_ERRORS_LINE,
            truncate_diagnostics(diagnostics_text, byte_budget),
            "",
            GUIDANCE_HEADER,
            "",
            "\n\n".join(render_guidance_entry(e) for e in selected),
            "",
            CORRECTED_VERSION_LINE,
        ]
    )


def build_dynamic_prompt(
    c_source: str,
    bad_translation: str,
    error_type: DynamicErrorKind | str,
    error_message: str,
    timeout_seconds: float | None = None,
) -> str:
    error_type = DynamicErrorKind(error_type)
    if not error_message.strip():
        if error_type is DynamicErrorKind.infinite_loop and timeout_seconds is not None:
            error_message = infinite_loop_notice(timeout_seconds)
        else:
            raise ValueError(f"error_message required for {error_type.value} errors")
    return "\n".join(
        [
            build_base_prompt(c_source),
            "",
            "Rust code:",
            bad_translation,
            "",
            DYNAMIC_ERROR_LINE.format(error_type=_DYNAMIC_LABELS[error_type]),
            error_message,
        ]
    )


def load_guidance_kb(directory: str | Path | None = None) -> list[GuidanceEntry]:
    """Load the guidance knowledge base from its data directory (one YAML
    file per targeted error code), validating shape on the way in."""
    directory = Path(directory) if directory is not None else GUIDANCE_DIR
    entries = []
    for path in sorted(directory.glob("E*.yaml")):
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
        code = doc["error_code"]
        if code not in TARGETED_CODE_SET:
            raise ValueError(f"{path.name}: {code} is not a targeted error code")
        causes = tuple(
            GuidanceCause(
                explanation=c["explanation"].strip(),
                bad_snippet=c["bad_snippet"].rstrip("\n"),
                fixed_snippet=c["fixed_snippet"].rstrip("\n"),
            )
            for c in doc["causes"]
        )
        if not causes:
            raise ValueError(f"{path.name}: causes must be non-empty")
        for cause in causes:
            if not cause.bad_snippet or not cause.fixed_snippet:
                raise ValueError(f"{path.name}: every cause needs both snippets")
        entries.append(GuidanceEntry(error_code=code, title=doc["title"].strip(), causes=causes))
    return entries
