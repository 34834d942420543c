"""Campaign metrics computed from transcripts: computational accuracy,
repair/pass rates, per-code resolution rates, error-code distributions, and
per-outcome CDFs over structural code metrics."""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path

from .corpus import CodeMetrics, SourceProgram
from .orchestrator import (
    CORPUS_INDEX_FILE,
    Outcome,
    Phase,
    Transcript,
    read_transcripts,
)
from .prompts import TARGETED_CODES

CDF_METRICS = ("loc", "pointers", "functions")

DISTRIBUTION_POINTS = ("base", "post_basic_repair")


@dataclass(frozen=True)
class RateSummary:
    initial_failures: int
    repaired: int
    repair_rate: float | None
    pass_rate: float | None


@dataclass(frozen=True)
class ResolutionCell:
    initial: int
    remaining: int
    rr: float


@dataclass
class CampaignReport:
    ca: float
    outcome_breakdown: dict[str, float]
    repair_rate: float | None
    pass_rate: float | None
    resolution: dict[str, dict]
    error_distribution: dict[str, float]
    unfixed_distribution: dict[str, float]
    error_counts: dict[str, dict[str, int]]
    cdf_sets: dict[str, dict[str, list[list[float]]]]


# ---------------------------------------------------------------------------
# attempt walking helpers
# ---------------------------------------------------------------------------

def _base_compile(transcript: Transcript):
    for attempt in transcript.attempts:
        if attempt.phase is Phase.base:
            return attempt.compile
    return None


def _last_compile_before(transcript: Transcript, phases: tuple[Phase, ...]):
    """Compile result of the last compile-bearing attempt within phases."""
    result = None
    for attempt in transcript.attempts:
        if attempt.phase in phases and attempt.compile is not None:
            result = attempt.compile
    return result


def _error_codes(compile_result) -> list[str]:
    if compile_result is None:
        return []
    return [d.code for d in compile_result.diagnostics if d.level == "error" and d.code]


def _entered_guided(transcript: Transcript) -> bool:
    return any(a.phase is Phase.guided_repair for a in transcript.attempts)


# ---------------------------------------------------------------------------
# the metrics themselves
# ---------------------------------------------------------------------------

def computational_accuracy(transcripts: list[Transcript]) -> float:
    if not transcripts:
        raise ValueError("computational accuracy is undefined for an empty campaign")
    successes = sum(1 for t in transcripts if t.outcome is Outcome.success)
    return successes / len(transcripts)


def outcome_breakdown(transcripts: list[Transcript]) -> dict[str, float]:
    total = len(transcripts)
    counts = Counter(t.outcome.value for t in transcripts)
    return {kind.value: counts.get(kind.value, 0) / total for kind in Outcome}


def repair_and_pass_rates(transcripts: list[Transcript]) -> RateSummary:
    """Share of initially uncompilable programs later made compilable, and the
    share of those that then pass all tests; absent on a zero denominator."""
    initially_failing = [
        t for t in transcripts
        if (c := _base_compile(t)) is not None and c.status == "failure"
    ]
    repaired = [
        t for t in initially_failing
        if any(a.compile is not None and a.compile.status == "success" for a in t.attempts)
    ]
    passed = [t for t in repaired if t.outcome is Outcome.success]
    repair_rate = len(repaired) / len(initially_failing) if initially_failing else None
    pass_rate = len(passed) / len(repaired) if repaired else None
    return RateSummary(len(initially_failing), len(repaired), repair_rate, pass_rate)


def resolution_rate(code: str, transcripts: list[Transcript]) -> ResolutionCell:
    """Per-code fraction of error instances present when guided repair starts
    that are gone after it ends; rr = 1 - remaining/initial, 0 for (0/0)."""
    initial = 0
    remaining = 0
    for t in transcripts:
        if not _entered_guided(t):
            continue
        entry = _last_compile_before(t, (Phase.base, Phase.basic_repair))
        final = _last_compile_before(t, (Phase.base, Phase.basic_repair, Phase.guided_repair))
        initial += _error_codes(entry).count(code)
        remaining += _error_codes(final).count(code)
    rr = 0.0 if initial == 0 else 1.0 - remaining / initial
    return ResolutionCell(initial=initial, remaining=remaining, rr=rr)


def _codes_at(transcript: Transcript, at: str) -> list[str]:
    if at == "base":
        return _error_codes(_base_compile(transcript))
    if at == "post_basic_repair":
        last = _last_compile_before(transcript, (Phase.base, Phase.basic_repair))
        if last is not None and last.status == "failure":
            return _error_codes(last)
        return []
    raise ValueError(f"unknown distribution point {at!r}")


def error_code_counts(transcripts: list[Transcript], at: str) -> dict[str, int]:
    counts: Counter = Counter()
    for t in transcripts:
        counts.update(_codes_at(t, at))
    return dict(sorted(counts.items()))


def error_distribution(transcripts: list[Transcript], at: str) -> dict[str, float]:
    """Per-code share of all coded error instances at the chosen point."""
    counts = error_code_counts(transcripts, at)
    total = sum(counts.values())
    if total == 0:
        return {}
    return {code: n / total for code, n in counts.items()}


def cdf_by_metric(
    transcripts: list[Transcript],
    corpus: list[SourceProgram] | dict[str, CodeMetrics],
    metric: str,
) -> dict[str, list[list[float]]]:
    """Per-outcome cumulative fraction of the whole corpus at or below each
    metric value.  Curves of all outcome kinds sum to 1 at the global max."""
    if metric not in CDF_METRICS:
        raise ValueError(f"metric must be one of {CDF_METRICS}")
    if isinstance(corpus, dict):
        metric_of = {pid: getattr(m, metric) for pid, m in corpus.items()}
    else:
        metric_of = {p.id: getattr(p.metrics, metric) for p in corpus}
    total = len(transcripts)
    by_outcome: dict[str, list[int]] = {}
    for t in transcripts:
        if t.program_id not in metric_of:
            raise ValueError(f"program {t.program_id} missing from corpus")
        by_outcome.setdefault(t.outcome.value, []).append(metric_of[t.program_id])
    curves: dict[str, list[list[float]]] = {}
    for kind, values in sorted(by_outcome.items()):
        values.sort()
        curve = []
        for i, v in enumerate(values, start=1):
            if curve and curve[-1][0] == v:
                curve[-1][1] = i / total
            else:
                curve.append([float(v), i / total])
        curves[kind] = curve
    return curves


def build_report(
    transcripts: list[Transcript],
    corpus: list[SourceProgram] | dict[str, CodeMetrics],
) -> CampaignReport:
    rates = repair_and_pass_rates(transcripts)
    return CampaignReport(
        ca=computational_accuracy(transcripts),
        outcome_breakdown=outcome_breakdown(transcripts),
        repair_rate=rates.repair_rate,
        pass_rate=rates.pass_rate,
        resolution={
            code: asdict(resolution_rate(code, transcripts)) for code in TARGETED_CODES
        },
        error_distribution=error_distribution(transcripts, "base"),
        unfixed_distribution=error_distribution(transcripts, "post_basic_repair"),
        error_counts={at: error_code_counts(transcripts, at) for at in DISTRIBUTION_POINTS},
        cdf_sets={m: cdf_by_metric(transcripts, corpus, m) for m in CDF_METRICS},
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def report_to_json(report: CampaignReport) -> str:
    return json.dumps(asdict(report), sort_keys=True, indent=2)


def report_from_json(text: str) -> CampaignReport:
    doc = json.loads(text)
    return CampaignReport(**doc)


def load_corpus_index(run_dir: str | Path) -> dict[str, CodeMetrics]:
    path = Path(run_dir) / CORPUS_INDEX_FILE
    doc = json.loads(path.read_text(encoding="utf-8"))
    return {pid: CodeMetrics(**fields) for pid, fields in doc.items()}


def build_report_from_run(run_dir: str | Path) -> CampaignReport:
    run_dir = Path(run_dir)
    transcripts = read_transcripts(run_dir)
    return build_report(transcripts, load_corpus_index(run_dir))


def write_report(report: CampaignReport, out_dir: str | Path, fmt: str = "json") -> list[Path]:
    """Emit report.json or the per-table CSV set; returns the files written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "json":
        path = out_dir / "report.json"
        path.write_text(report_to_json(report) + "\n", encoding="utf-8")
        written.append(path)
    elif fmt == "csv":
        written.append(_write_csv(out_dir / "ca.csv", ["metric", "value"], [
            ["ca", report.ca],
            *[[f"share_{k}", v] for k, v in sorted(report.outcome_breakdown.items())],
        ]))
        written.append(_write_csv(out_dir / "rates.csv", ["repair_rate", "pass_rate"], [
            [_fmt_opt(report.repair_rate), _fmt_opt(report.pass_rate)],
        ]))
        written.append(_write_csv(
            out_dir / "resolution.csv",
            ["code", "initial", "remaining", "rr"],
            [
                [code, cell["initial"], cell["remaining"], cell["rr"]]
                for code, cell in report.resolution.items()
            ],
        ))
        dist_rows = []
        for at, counts in report.error_counts.items():
            dist = report.error_distribution if at == "base" else report.unfixed_distribution
            for code, count in counts.items():
                dist_rows.append([at, code, count, dist.get(code, 0.0)])
        written.append(_write_csv(
            out_dir / "distribution.csv", ["at", "code", "count", "ratio"], dist_rows
        ))
        for metric, curves in report.cdf_sets.items():
            rows = [
                [kind, value, frac]
                for kind, curve in sorted(curves.items())
                for value, frac in curve
            ]
            written.append(_write_csv(
                out_dir / f"cdf_{metric}.csv", ["outcome", "value", "cum_fraction"], rows
            ))
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return written


def _fmt_opt(value: float | None) -> str:
    return "" if value is None else repr(value)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path
