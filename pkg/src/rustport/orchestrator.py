"""Per-program translation state machine (translate, compile, basic repair,
guided repair, validate, dynamic repair) and resumable batch campaigns with
append-only transcripts."""

from __future__ import annotations

import json
import logging
import shutil
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

from . import buildcheck, gateway, prompts
from .buildcheck import CompileResult, Diagnostic
from .config import PipelineConfig, config_digest
from .corpus import SourceProgram
from .gateway import GenerationError, GenerationParams, complete, extract_code
from .prompts import (
    DynamicErrorKind,
    TARGETED_CODE_SET,
    build_base_prompt,
    build_dynamic_prompt,
    build_guided_prompt,
    build_repair_prompt,
    load_guidance_kb,
)
from .validate import CaseRun, ValidationResult, Verdict, run_tests

logger = logging.getLogger(__name__)

STATE_FILE = "state.json"
TRANSCRIPT_FILE = "transcript.jsonl"
CORPUS_INDEX_FILE = "corpus_index.json"
FINAL_SOURCE_FILE = "final.rs"


class Outcome(str, Enum):
    success = "success"
    generation_error = "generation_error"
    compilation_error = "compilation_error"
    runtime_error = "runtime_error"
    infinite_loop = "infinite_loop"
    test_case_error = "test_case_error"


class Phase(str, Enum):
    base = "base"
    basic_repair = "basic_repair"
    guided_repair = "guided_repair"
    dynamic_repair = "dynamic_repair"


@dataclass
class Attempt:
    seq: int
    phase: Phase
    prompt: str
    response: str
    finish_reason: str
    code: str | None  # extracted translation, None when extraction failed
    extraction_error: str | None
    compile: CompileResult | None = None
    validation: ValidationResult | None = None


@dataclass
class Transcript:
    program_id: str
    attempts: list[Attempt]
    outcome: Outcome
    iteration_counts: dict[str, int]

    def final_code(self) -> str | None:
        for attempt in reversed(self.attempts):
            if attempt.code is not None:
                return attempt.code
        return None


@dataclass
class CampaignState:
    run_id: str
    backend: str
    completed: set[str]
    config_digest: str


class CampaignStateError(Exception):
    """The campaign state file refuses this resume."""


def select_guided_phase(diagnostics: list[Diagnostic]) -> bool:
    """True iff any error-level diagnostic carries one of the targeted codes."""
    return any(
        d.code in TARGETED_CODE_SET for d in diagnostics if d.level == "error" and d.code
    )


# ---------------------------------------------------------------------------
# transcript persistence (append-only JSONL; volatile fields like durations
# and absolute paths are kept out so replays are byte-identical)
# ---------------------------------------------------------------------------

def _dump(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _compile_record(result: CompileResult | None, run_dir: Path) -> dict | None:
    if result is None:
        return None
    binary = None
    if result.binary_path is not None:
        binary = result.binary_path.relative_to(run_dir).as_posix()
    return {
        "status": result.status,
        "binary": binary,
        "diagnostics": [
            {"code": d.code, "level": d.level, "message": d.message, "rendered": d.rendered}
            for d in result.diagnostics
        ],
    }


def _validation_record(result: ValidationResult | None) -> dict | None:
    if result is None:
        return None
    return {
        "verdict": result.verdict.value,
        "failing_case": result.failing_case,
        "detail": result.detail,
        "per_case": [{"status": c.status} for c in result.per_case],
    }


class TranscriptWriter:
    """Append-only per-program transcript sink, flushed after every record."""

    def __init__(self, path: Path, run_dir: Path):
        self.path = path
        self.run_dir = run_dir
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def _append(self, record: dict) -> None:
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(_dump(record) + "\n")

    def write_llm(self, attempt: Attempt) -> None:
        self._append(
            {
                "type": "llm",
                "seq": attempt.seq,
                "phase": attempt.phase.value,
                "prompt": attempt.prompt,
                "response": attempt.response,
                "finish_reason": attempt.finish_reason,
                "code": attempt.code,
                "extraction_error": attempt.extraction_error,
            }
        )

    def write_eval(self, attempt: Attempt) -> None:
        self._append(
            {
                "type": "eval",
                "seq": attempt.seq,
                "compile": _compile_record(attempt.compile, self.run_dir),
                "validation": _validation_record(attempt.validation),
            }
        )

    def write_outcome(self, outcome: Outcome, iteration_counts: dict[str, int]) -> None:
        self._append(
            {"type": "outcome", "kind": outcome.value, "iteration_counts": iteration_counts}
        )


def read_transcript(path: str | Path, run_dir: str | Path | None = None) -> Transcript:
    path = Path(path)
    run_dir = Path(run_dir) if run_dir is not None else path.parent.parent
    attempts: dict[int, Attempt] = {}
    outcome = None
    counts: dict[str, int] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        rec = json.loads(line)
        kind = rec["type"]
        if kind == "llm":
            attempts[rec["seq"]] = Attempt(
                seq=rec["seq"],
                phase=Phase(rec["phase"]),
                prompt=rec["prompt"],
                response=rec["response"],
                finish_reason=rec["finish_reason"],
                code=rec["code"],
                extraction_error=rec["extraction_error"],
            )
        elif kind == "eval":
            attempt = attempts[rec["seq"]]
            if rec["compile"] is not None:
                c = rec["compile"]
                attempt.compile = CompileResult(
                    status=c["status"],
                    binary_path=(run_dir / c["binary"]) if c["binary"] else None,
                    diagnostics=[Diagnostic(**d) for d in c["diagnostics"]],
                    duration_ms=0,
                )
            if rec["validation"] is not None:
                v = rec["validation"]
                attempt.validation = ValidationResult(
                    verdict=Verdict(v["verdict"]),
                    failing_case=v["failing_case"],
                    detail=v["detail"],
                    per_case=[CaseRun(status=c["status"], duration_ms=0) for c in v["per_case"]],
                )
        elif kind == "outcome":
            outcome = Outcome(rec["kind"])
            counts = rec["iteration_counts"]
    if outcome is None:
        raise ValueError(f"transcript {path} has no outcome record (incomplete run)")
    ordered = [attempts[k] for k in sorted(attempts)]
    return Transcript(
        program_id=path.parent.name, attempts=ordered, outcome=outcome, iteration_counts=counts
    )


def read_transcripts(run_dir: str | Path) -> list[Transcript]:
    run_dir = Path(run_dir)
    transcripts = []
    for prog_dir in sorted(p for p in run_dir.iterdir() if p.is_dir()):
        t_path = prog_dir / TRANSCRIPT_FILE
        if not t_path.is_file():
            continue
        try:
            transcripts.append(read_transcript(t_path, run_dir))
        except ValueError as exc:
            logger.warning("skipping incomplete transcript: %s", exc)
    return transcripts


# ---------------------------------------------------------------------------
# per-program state machine
# ---------------------------------------------------------------------------

_VERDICT_TO_OUTCOME = {
    Verdict.passed: Outcome.success,
    Verdict.runtime_error: Outcome.runtime_error,
    Verdict.infinite_loop: Outcome.infinite_loop,
    Verdict.test_case_error: Outcome.test_case_error,
}

_VERDICT_TO_DYNAMIC_KIND = {
    Verdict.runtime_error: DynamicErrorKind.runtime,
    Verdict.infinite_loop: DynamicErrorKind.infinite_loop,
    Verdict.test_case_error: DynamicErrorKind.test_case,
}


class _ProgramRun:
    def __init__(self, program: SourceProgram, backend, config: PipelineConfig, run_dir: Path):
        self.program = program
        self.backend = backend
        self.config = config
        self.run_dir = Path(run_dir)
        self.prog_dir = self.run_dir / program.id
        self.writer = TranscriptWriter(self.prog_dir / TRANSCRIPT_FILE, self.run_dir)
        self.attempts: list[Attempt] = []
        self.counts = {phase.value: 0 for phase in Phase}
        self.kb = load_guidance_kb()

    # -- primitives --------------------------------------------------------

    def _ask(self, phase: Phase, prompt: str, temperature: float) -> Attempt:
        params = GenerationParams(temperature=temperature, max_tokens=self.config.max_tokens)
        raw = complete(self.backend, prompt, params, tag=self.program.id)
        code, error = None, None
        try:
            code = extract_code(raw)
        except GenerationError as exc:
            error = str(exc)
        attempt = Attempt(
            seq=len(self.attempts),
            phase=phase,
            prompt=prompt,
            response=raw.text,
            finish_reason=raw.finish_reason.value,
            code=code,
            extraction_error=error,
        )
        self.attempts.append(attempt)
        self.counts[phase.value] += 1
        self.writer.write_llm(attempt)
        return attempt

    def _evaluate(self, attempt: Attempt) -> tuple[CompileResult, ValidationResult | None]:
        """Compile the attempt's code and, on success, validate it; the eval
        record lands in the transcript in one piece."""
        workdir = self.prog_dir / f"attempt-{attempt.seq}"
        cres = buildcheck.compile_translation(
            attempt.code, workdir, self.config.compile_timeout_ms, self.config.compiler_cmd
        )
        attempt.compile = cres
        vres = None
        if cres.status == "success":
            vres = run_tests(cres.binary_path, self.program.test_cases, self.config.exec_limits)
            attempt.validation = vres
        self.writer.write_eval(attempt)
        return cres, vres

    def _finish(self, outcome: Outcome) -> Transcript:
        self.writer.write_outcome(outcome, self.counts)
        transcript = Transcript(
            program_id=self.program.id,
            attempts=self.attempts,
            outcome=outcome,
            iteration_counts=self.counts,
        )
        if outcome is Outcome.success:
            final = transcript.final_code()
            if final is not None:
                (self.prog_dir / FINAL_SOURCE_FILE).write_text(final, encoding="utf-8")
        return transcript

    def _diagnostics_text(self, cres: CompileResult) -> str:
        text = cres.rendered_errors()
        return text if text.strip() else "error: compilation failed\n"

    # -- phases -------------------------------------------------------------

    def run(self) -> Transcript:
        cfg = self.config
        src = self.program.source_text
        attempt = self._ask(Phase.base, build_base_prompt(src), cfg.base_temperature)
        if attempt.code is None:
            self.writer.write_eval(attempt)
            return self._finish(Outcome.generation_error)
        cres, vres = self._evaluate(attempt)
        code = attempt.code

        if cres.status == "failure":
            code, cres, vres = self._compile_repair(
                Phase.basic_repair, cfg.caps.basic_repair, code, cres
            )
        if cres.status == "failure" and select_guided_phase(cres.errors):
            code, cres, vres = self._compile_repair(
                Phase.guided_repair, cfg.caps.guided_repair, code, cres
            )
        if cres.status == "failure":
            return self._finish(Outcome.compilation_error)

        if vres is not None and vres.verdict is Verdict.passed:
            return self._finish(Outcome.success)
        return self._dynamic_repair(code, cres, vres)

    def _compile_repair(
        self, phase: Phase, cap: int, code: str, cres: CompileResult
    ) -> tuple[str, CompileResult, ValidationResult | None]:
        cfg = self.config
        vres = None
        for _ in range(cap):
            errors = cres.errors
            use_guided = phase is Phase.guided_repair and any(
                d.code in TARGETED_CODE_SET for d in errors if d.code
            )
            if use_guided:
                prompt = build_guided_prompt(
                    self.program.source_text, code, errors, self.kb,
                    byte_budget=cfg.diagnostics_byte_budget,
                )
            else:
                # inside the guided phase the error set can drift off the
                # targeted codes; those iterations fall back to plain repair
                prompt = build_repair_prompt(
                    self.program.source_text, code, self._diagnostics_text(cres),
                    byte_budget=cfg.diagnostics_byte_budget,
                )
            attempt = self._ask(phase, prompt, cfg.repair_temperature)
            if attempt.code is None:
                self.writer.write_eval(attempt)
                continue  # a failed extraction consumes the iteration
            cres, vres = self._evaluate(attempt)
            code = attempt.code
            if cres.status == "success":
                break
        return code, cres, vres

    def _dynamic_repair(
        self, code: str, cres: CompileResult, vres: ValidationResult | None
    ) -> Transcript:
        cfg = self.config
        timeout_s = cfg.exec_limits.wall_timeout_ms / 1000.0
        for _ in range(cfg.caps.dynamic_repair):
            if cres.status == "failure":
                # intermediate compilation breakage is repaired with plain
                # repair prompts and shares this phase's budget
                prompt = build_repair_prompt(
                    self.program.source_text, code, self._diagnostics_text(cres),
                    byte_budget=cfg.diagnostics_byte_budget,
                )
            else:
                kind = _VERDICT_TO_DYNAMIC_KIND[vres.verdict]
                prompt = build_dynamic_prompt(
                    self.program.source_text, code, kind, vres.detail,
                    timeout_seconds=timeout_s,
                )
            attempt = self._ask(Phase.dynamic_repair, prompt, cfg.repair_temperature)
            if attempt.code is None:
                self.writer.write_eval(attempt)
                continue
            cres, vres = self._evaluate(attempt)
            code = attempt.code
            if cres.status == "success" and vres.verdict is Verdict.passed:
                return self._finish(Outcome.success)
        return self._finish(self._classify_tail())

    def _classify_tail(self) -> Outcome:
        for attempt in reversed(self.attempts):
            if attempt.validation is not None:
                return _VERDICT_TO_OUTCOME[attempt.validation.verdict]
            if attempt.compile is not None:
                return Outcome.compilation_error
        return Outcome.generation_error


def translate_program(
    program: SourceProgram, backend, config: PipelineConfig, run_dir: str | Path
) -> Transcript:
    """Run the full state machine for one program, persisting every prompt,
    response, and evaluation before moving on."""
    return _ProgramRun(program, backend, config, Path(run_dir)).run()


# ---------------------------------------------------------------------------
# campaigns
# ---------------------------------------------------------------------------

def _save_state(state: CampaignState, run_dir: Path) -> None:
    payload = {
        "run_id": state.run_id,
        "backend": state.backend,
        "completed": sorted(state.completed),
        "config_digest": state.config_digest,
    }
    tmp = run_dir / (STATE_FILE + ".tmp")
    tmp.write_text(_dump(payload) + "\n", encoding="utf-8")
    tmp.replace(run_dir / STATE_FILE)


def _load_state(run_dir: Path) -> CampaignState:
    path = run_dir / STATE_FILE
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        return CampaignState(
            run_id=doc["run_id"],
            backend=doc["backend"],
            completed=set(doc["completed"]),
            config_digest=doc["config_digest"],
        )
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CampaignStateError(
            f"corrupted campaign state {path}; delete the run directory to reset"
        ) from exc


def _rebuild_state(run_dir: Path, backend_name: str, digest: str) -> CampaignState:
    completed = set()
    for prog_dir in (p for p in run_dir.iterdir() if p.is_dir()):
        t_path = prog_dir / TRANSCRIPT_FILE
        if not t_path.is_file():
            continue
        try:
            read_transcript(t_path, run_dir)
        except ValueError:
            continue
        completed.add(prog_dir.name)
    logger.info("rebuilt campaign state from %d transcript(s)", len(completed))
    return CampaignState(run_dir.name, backend_name, completed, digest)


def run_campaign(
    corpus: list[SourceProgram],
    backend,
    config: PipelineConfig,
    run_dir: str | Path,
    resume: bool = False,
) -> tuple[CampaignState, list[Transcript]]:
    """Translate every program not yet completed, flushing state after each.

    Resume requires a matching config digest; completed programs are never
    re-run, and leftovers of interrupted programs are cleared before retrying.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    digest = config_digest(config, backend.spec)
    state_path = run_dir / STATE_FILE

    if state_path.exists():
        if not resume:
            raise CampaignStateError(
                f"{run_dir} already holds campaign state; resume it or use a fresh directory"
            )
        state = _load_state(run_dir)
        if state.config_digest != digest:
            raise CampaignStateError(
                "configuration changed since the previous run; resume refused"
            )
    elif resume:
        state = _rebuild_state(run_dir, backend.spec.name, digest)
    else:
        state = CampaignState(run_dir.name, backend.spec.name, set(), digest)

    buildcheck.set_compile_jobs(config.compile_jobs)

    # clear partial leftovers from interrupted programs
    for program in corpus:
        if program.id not in state.completed:
            prog_dir = run_dir / program.id
            if prog_dir.exists():
                shutil.rmtree(prog_dir)

    index = {p.id: asdict(p.metrics) for p in corpus}
    (run_dir / CORPUS_INDEX_FILE).write_text(_dump(index) + "\n", encoding="utf-8")
    _save_state(state, run_dir)

    pending = [p for p in corpus if p.id not in state.completed]
    lock = threading.Lock()

    def work(program: SourceProgram) -> Transcript:
        transcript = translate_program(program, backend, config, run_dir)
        with lock:
            state.completed.add(program.id)
            _save_state(state, run_dir)
        return transcript

    if config.workers <= 1:
        for program in pending:
            work(program)
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            list(pool.map(work, pending))

    return state, read_transcripts(run_dir)
