"""Command-line entry points for campaigns, reports, and security replay."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import PipelineConfig
from .corpus import load_corpus
from .gateway import BackendConfigError, load_backends
from .metrics import build_report_from_run, write_report
from .orchestrator import CampaignStateError, run_campaign, translate_program
from .validate import ExecLimits
from .vuln import CheckerConfig, CheckerUnavailableError, replay_campaign, scan_corpus

logger = logging.getLogger(__name__)


def _add_campaign_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--corpus", required=True, help="corpus root directory")
    parser.add_argument("--backends", required=True, help="backend config file (JSON)")
    parser.add_argument("--backend", required=True, help="name of the backend to use")
    parser.add_argument("--out", required=True, help="run directory")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--exec-timeout-ms", type=int, default=None,
                        help="per-test-case wall timeout override")


def _make_config(args) -> PipelineConfig:
    kwargs = {"workers": args.workers}
    if args.exec_timeout_ms:
        kwargs["exec_limits"] = ExecLimits(wall_timeout_ms=args.exec_timeout_ms)
    return PipelineConfig(**kwargs)


def _pick_backend(args):
    backends = load_backends(args.backends)
    if args.backend not in backends:
        raise BackendConfigError(
            f"backend {args.backend!r} not in config (have: {', '.join(sorted(backends))})"
        )
    return backends[args.backend]


def cmd_run(args) -> int:
    corpus = load_corpus(args.corpus)
    backend = _pick_backend(args)
    config = _make_config(args)
    state, transcripts = run_campaign(
        corpus, backend, config, args.out, resume=args.resume
    )
    done = len(state.completed)
    print(f"campaign complete: {done}/{len(corpus)} programs in {args.out}")
    return 0 if done == len(corpus) else 1


def cmd_translate_one(args) -> int:
    corpus = load_corpus(args.corpus)
    programs = {p.id: p for p in corpus}
    if args.program not in programs:
        print(f"program {args.program!r} not found in corpus", file=sys.stderr)
        return 2
    backend = _pick_backend(args)
    config = _make_config(args)
    transcript = translate_program(programs[args.program], backend, config, args.out)
    print(f"{args.program}: {transcript.outcome.value} "
          f"(iterations: {transcript.iteration_counts})")
    return 0 if transcript.outcome.value == "success" else 1


def cmd_report(args) -> int:
    report = build_report_from_run(args.run)
    out_dir = Path(args.out) if args.out else Path(args.run) / "report"
    files = write_report(report, out_dir, args.format)
    for path in files:
        print(path)
    return 0


def cmd_vulnscan(args) -> int:
    corpus = load_corpus(args.corpus)
    checker = CheckerConfig(
        command=args.checker,
        flags=tuple(args.checker_flag or CheckerConfig.flags),
        timeout_ms=args.checker_timeout_ms,
    )
    try:
        results = scan_corpus(corpus, checker, args.out)
    except CheckerUnavailableError as exc:
        print(f"vulnerability scanning disabled: {exc}", file=sys.stderr)
        return 3
    failed = sum(1 for _, o in results if o.kind == "failed")
    print(f"scanned {len(results)} programs: {failed} with findings -> {args.out}")
    return 0


def cmd_mitigate(args) -> int:
    records = replay_campaign(args.run, args.scan)
    print(f"replayed {len(records)} finding(s); results in {args.scan}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rustport", description="Batch C-to-Rust translation pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a translation campaign")
    _add_campaign_args(p_run)
    p_run.add_argument("--resume", action="store_true", help="resume an interrupted run")
    p_run.set_defaults(func=cmd_run)

    p_one = sub.add_parser("translate-one", help="translate a single program")
    _add_campaign_args(p_one)
    p_one.add_argument("--program", required=True, help="program id within the corpus")
    p_one.set_defaults(func=cmd_translate_one)

    p_report = sub.add_parser("report", help="compute metrics for a finished run")
    p_report.add_argument("--run", required=True, help="run directory")
    p_report.add_argument("--format", choices=("json", "csv"), default="json")
    p_report.add_argument("--out", default=None, help="output directory (default <run>/report)")
    p_report.set_defaults(func=cmd_report)

    p_scan = sub.add_parser("vulnscan", help="scan the C corpus with a bounded model checker")
    p_scan.add_argument("--corpus", required=True)
    p_scan.add_argument("--out", required=True)
    p_scan.add_argument("--checker", default=CheckerConfig.command)
    p_scan.add_argument("--checker-flag", action="append", default=None)
    p_scan.add_argument("--checker-timeout-ms", type=int, default=CheckerConfig.timeout_ms)
    p_scan.set_defaults(func=cmd_vulnscan)

    p_mit = sub.add_parser("mitigate", help="replay scan triggers against translations")
    p_mit.add_argument("--run", required=True, help="run directory with translations")
    p_mit.add_argument("--scan", required=True, help="directory produced by vulnscan")
    p_mit.set_defaults(func=cmd_mitigate)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CampaignStateError, BackendConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
