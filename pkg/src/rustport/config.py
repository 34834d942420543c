"""Pipeline configuration and the digest that gates campaign resumption."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

from .buildcheck import DEFAULT_COMPILE_TIMEOUT_MS, DEFAULT_COMPILER_CMD
from .prompts import DEFAULT_DIAGNOSTICS_BUDGET
from .validate import ExecLimits

BASE_TEMPERATURE = 0.2  # initial translation: keep output near-deterministic
REPAIR_TEMPERATURE = 0.6  # repair rounds: allow more creative fixes


@dataclass(frozen=True)
class IterationCaps:
    basic_repair: int = 5
    guided_repair: int = 5
    dynamic_repair: int = 5


@dataclass(frozen=True)
class PipelineConfig:
    caps: IterationCaps = IterationCaps()
    base_temperature: float = BASE_TEMPERATURE
    repair_temperature: float = REPAIR_TEMPERATURE
    max_tokens: int = 4096
    diagnostics_byte_budget: int = DEFAULT_DIAGNOSTICS_BUDGET
    compiler_cmd: tuple[str, ...] = DEFAULT_COMPILER_CMD
    compile_timeout_ms: int = DEFAULT_COMPILE_TIMEOUT_MS
    exec_limits: ExecLimits = ExecLimits()
    workers: int = 1
    compile_jobs: int = 4


def config_digest(config: PipelineConfig, backend_spec) -> str:
    """Stable digest of everything that must match for a resume to be valid."""
    payload = {
        "config": asdict(config),
        "backend": {"name": backend_spec.name, "model": backend_spec.model},
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
