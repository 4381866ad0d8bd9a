"""Command-line entry point.

Exit codes:

    0  success
    1  unexpected internal error
    2  usage error (bad flags)
    3  configuration error (missing/invalid config, unknown backend ids)
    4  dataset error (unreadable file, malformed line)
    5  backend error (timeout, HTTP status, malformed upstream reply)
    6  model reply could not be parsed
    7  expert panel too small after failures
    8  other pipeline error
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from .backends import BackendPool
from .consensus import CONFIG_ENV_VAR, EngineConfig, run_pipeline
from .domain import Query, QueryKind
from .errors import BackendError, ConfigError, ConsensusError, DatasetError, PanelTooSmall, ReplyParseError
from .evaluation.bench import mcq_report, ddx_report, run_ddx, run_mcq, write_ddx_report, write_mcq_report
from .evaluation.datasets import load_ddx_dataset, load_mcq_dataset, sample_subset
from .evaluation.ddx import Judge
from .trace import dumps

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATASET = 4
EXIT_BACKEND = 5
EXIT_PARSE = 6
EXIT_PANEL = 7
EXIT_PIPELINE = 8

log = logging.getLogger("medconsensus")


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, DatasetError):
        return EXIT_DATASET
    if isinstance(exc, PanelTooSmall):
        return EXIT_PANEL
    if isinstance(exc, ReplyParseError):
        return EXIT_PARSE
    if isinstance(exc, BackendError):
        return EXIT_BACKEND
    if isinstance(exc, ConsensusError):
        return EXIT_PIPELINE
    return EXIT_INTERNAL


def _load_engine(path: str | None) -> tuple[EngineConfig, BackendPool]:
    try:
        config = EngineConfig.load(path)
        return config, config.build_pool()
    except ConfigError:
        raise
    except ConsensusError as exc:
        raise ConfigError(str(exc)) from exc


def _read_query(args: argparse.Namespace) -> Query:
    if args.query:
        try:
            data = json.loads(Path(args.query).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DatasetError(f"cannot read query file {args.query}: {exc}") from exc
        try:
            if "question" in data:
                # MCQ dataset line; the gold answer, if present, is ignored
                data = {"id": data.get("id", "query"), "text": data["question"], "options": data.get("options")}
            return Query.from_dict(data)
        except (KeyError, ValueError, ConsensusError) as exc:
            raise DatasetError(f"invalid query file {args.query}: {exc}") from exc
    options = []
    for opt in args.option or []:
        label, sep, text = opt.partition("=")
        if not sep:
            raise DatasetError(f"--option expects LABEL=TEXT, got {opt!r}")
        options.append((label.strip(), text.strip()))
    kind = QueryKind.MULTIPLE_CHOICE if options else QueryKind.OPEN_DIFFERENTIAL
    try:
        return Query(args.id, args.text, tuple(options), kind)
    except ConsensusError as exc:
        raise DatasetError(str(exc)) from exc


async def _ask(args: argparse.Namespace) -> int:
    config, pool = _load_engine(args.config)
    query = _read_query(args)
    try:
        result = await run_pipeline(query, config, pool)
    finally:
        await pool.aclose()
    sys.stdout.write(dumps(result.to_dict(include_trace=args.trace, include_timings=args.timestamps)))
    return EXIT_OK


def _subset(items: list[Any], n: int | None, seed: int) -> list[Any]:
    return sample_subset(items, len(items) if n is None else n, seed)


async def _bench_mcq(args: argparse.Namespace) -> int:
    config, pool = _load_engine(args.config)
    items = _subset(load_mcq_dataset(args.dataset), args.n, args.seed)
    try:
        run = await run_mcq(items, config, pool, parallel=args.parallel)
    finally:
        await pool.aclose()
    report = mcq_report(run, k_max=args.k_max, n_bins=args.bins, timestamps=args.timestamps)
    written = write_mcq_report(report, args.report)
    _summary(report, written, ["accuracy", "top_k"])
    return EXIT_OK


async def _bench_ddx(args: argparse.Namespace) -> int:
    config, pool = _load_engine(args.config)
    cases = _subset(load_ddx_dataset(args.dataset), args.n, args.seed)
    judge = None
    if args.judge.lower() != "none":
        try:
            pool.get(args.judge)
        except ConsensusError as exc:
            raise ConfigError(f"judge backend: {exc}") from exc
        judge = Judge(pool, args.judge, model_name=args.judge_model or "")
    try:
        run = await run_ddx(cases, config, pool, judge=judge, parallel=args.parallel)
    finally:
        await pool.aclose()
    report = ddx_report(run, k_max=args.k_max, k=args.k, timestamps=args.timestamps)
    written = write_ddx_report(report, args.report)
    _summary(report, written, ["metrics", "judge_fallbacks"])
    return EXIT_OK


def _summary(report: dict[str, Any], written: Sequence[Path], keys: Sequence[str]) -> None:
    out = {k: report[k] for k in ("n_items", "n_scored", "n_errors", *keys)}
    out["files"] = [str(p) for p in written]
    sys.stdout.write(dumps(out))


async def _show_config(args: argparse.Namespace) -> int:
    config, pool = _load_engine(args.config)
    await pool.aclose()
    out = {
        "triage": {"backend_id": config.triage.backend_id, "model_name": config.triage.model_name},
        "consensus": {"backend_id": config.consensus.backend_id, "model_name": config.consensus.model_name},
        "backends": {bid: type(b).__name__ for bid, b in pool.backends.items()},
        "registry": config.registry.to_dict(),
        "weights": config.weights if isinstance(config.weights, str) else dict(config.weights),
        "boost_scale": config.boost_scale,
        "theta": list(config.cascade.theta),
        "panel": {
            "expert_timeout_s": config.panel.timeout_s,
            "retries": config.panel.retries,
            "backoff_s": config.panel.backoff_s,
        },
    }
    sys.stdout.write(dumps(out))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="medconsensus", description=__doc__.split("\n")[0])
    parser.add_argument("--config", help=f"engine config JSON (default: ${CONFIG_ENV_VAR})")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    ask = sub.add_parser("ask", help="run the pipeline on one query")
    src = ask.add_mutually_exclusive_group(required=True)
    src.add_argument("--query", help="JSON file holding a query or an MCQ item")
    src.add_argument("--text", help="inline query text")
    ask.add_argument("--option", action="append", metavar="LABEL=TEXT", help="answer option (repeatable)")
    ask.add_argument("--id", default="query", help="id for an inline query")
    ask.add_argument("--trace", action="store_true", help="include the full provenance trace")
    ask.add_argument("--timestamps", action="store_true", help="include stage timings")
    ask.set_defaults(func=_ask)

    for name, func, help_text, k_max in (
        ("bench-mcq", _bench_mcq, "benchmark on a multiple-choice JSONL dataset", 4),
        ("bench-ddx", _bench_ddx, "benchmark on a differential-diagnosis JSONL dataset", 10),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--dataset", required=True)
        p.add_argument("--n", type=int, default=None, help="subset size (default: all items)")
        p.add_argument("--seed", type=int, default=5)
        p.add_argument("--k-max", type=int, default=k_max)
        p.add_argument("--report", required=True, help="output directory for report files")
        p.add_argument("--parallel", type=int, default=4, help="concurrent pipeline runs")
        p.add_argument("--timestamps", action="store_true", help="include wall-clock data in reports")
        p.set_defaults(func=func)
        if name == "bench-mcq":
            p.add_argument("--bins", type=int, default=10, help="calibration bins")
        else:
            p.add_argument("--judge", default="none", help="judge backend id, or 'none'")
            p.add_argument("--judge-model", default=None)
            p.add_argument("--k", type=int, default=5, help="k for precision/recall/F1")

    show = sub.add_parser("show-config", help="validate and print the resolved engine config")
    show.set_defaults(func=_show_config)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return asyncio.run(args.func(args))
    except ConsensusError as exc:
        stage = exc.stage or "-"
        print(f"error [{stage}] {type(exc).__name__}: {Exception.__str__(exc)}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
