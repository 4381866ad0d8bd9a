"""Batch benchmark runners and report writers.

Items whose pipeline run fails are recorded in the report's ``errors`` list
and excluded from the metrics; they never abort the batch.  Reports carry no
wall-clock data unless ``timestamps=True``.
"""

from __future__ import annotations

import asyncio
import csv
import datetime as dt
import logging
from collections.abc import Awaitable, Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, TypeVar

from ..backends import BackendPool
from ..consensus import EngineConfig, run_pipeline
from ..errors import ConsensusError
from ..trace import ConsensusResult, dumps
from .calibration import DEFAULT_BINS, reliability
from .datasets import DdxCase, McqItem
from .ddx import DEFAULT_METRIC_K, Judge, StandardizeResult, ddx_metrics, judge_standardize
from .metrics import EvalRecord, accuracy, stratified_accuracy, top_k_curve

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

STRATA_KEYS = ("task_type", "body_system", "question_type", "specialty")


@dataclass
class ItemError:
    item_id: str
    stage: str | None
    error: str

    def to_dict(self) -> dict[str, Any]:
        return {"item_id": self.item_id, "stage": self.stage, "error": self.error}


async def _bounded_map(
    items: Sequence[T], fn: Callable[[T], Awaitable[R]], parallel: int
) -> list[R | ConsensusError]:
    sem = asyncio.Semaphore(max(1, parallel))

    async def one(item: T) -> R | ConsensusError:
        async with sem:
            try:
                return await fn(item)
            except ConsensusError as exc:
                return exc

    return list(await asyncio.gather(*(one(i) for i in items)))


def _item_error(item_id: str, exc: ConsensusError) -> ItemError:
    # message without the stage prefix; the stage has its own column
    return ItemError(item_id, exc.stage, f"{type(exc).__name__}: {Exception.__str__(exc)}")


@dataclass
class McqRun:
    items: list[McqItem]
    results: list[ConsensusResult | None]
    records: list[EvalRecord]
    errors: list[ItemError] = field(default_factory=list)


async def run_mcq(
    items: Sequence[McqItem], config: EngineConfig, pool: BackendPool, parallel: int = 4
) -> McqRun:
    outcomes = await _bounded_map(items, lambda it: run_pipeline(it.to_query(), config, pool), parallel)
    run = McqRun(list(items), [], [])
    for item, out in zip(items, outcomes):
        if isinstance(out, ConsensusError):
            log.warning("item %s failed: %s", item.id, out)
            run.errors.append(_item_error(item.id, out))
            run.results.append(None)
            continue
        run.results.append(out)
        run.records.append(EvalRecord(item.id, out.final_distribution, out.final_answer, item.gold_label, item.metadata))
    return run


def mcq_report(run: McqRun, k_max: int = 4, n_bins: int = DEFAULT_BINS, timestamps: bool = False) -> dict[str, Any]:
    records = run.records
    strata_keys = [k for k in STRATA_KEYS if any(k in it.metadata for it in run.items)]
    report: dict[str, Any] = {
        "kind": "mcq",
        "n_items": len(run.items),
        "n_scored": len(records),
        "n_errors": len(run.errors),
        "accuracy": accuracy(records),
        "top_k": {str(k): v for k, v in top_k_curve(records, k_max).items()},
        "strata": {
            key: {v: {"accuracy": acc, "count": n} for v, (acc, n) in stratified_accuracy(records, key).items()}
            for key in strata_keys
        },
        "calibration": reliability(records, n_bins).to_dict(),
        "consensus_fallbacks": sum(1 for r in run.results if r is not None and r.trace.fallback),
        "errors": [e.to_dict() for e in run.errors],
        "items": [],
    }
    for item, res in zip(run.items, run.results):
        row: dict[str, Any] = {"id": item.id, "gold": item.gold_label}
        if res is None:
            row.update(final_answer=None, argmax=None, correct=False, errored=True)
        else:
            row.update(
                final_answer=res.final_answer,
                argmax=res.trace.argmax_answer,
                correct=res.final_answer == item.gold_label,
                errored=False,
            )
            if timestamps:
                row["timings_ms"] = dict(res.trace.timings)
        report["items"].append(row)
    if timestamps:
        report["generated_at"] = dt.datetime.now(dt.timezone.utc).isoformat()
    return report


@dataclass
class DdxRun:
    cases: list[DdxCase]
    results: list[ConsensusResult | None]
    standardized: list[StandardizeResult | None]
    errors: list[ItemError] = field(default_factory=list)


async def run_ddx(
    cases: Sequence[DdxCase],
    config: EngineConfig,
    pool: BackendPool,
    judge: Judge | None = None,
    parallel: int = 4,
) -> DdxRun:
    async def one(case: DdxCase) -> tuple[ConsensusResult, StandardizeResult]:
        res = await run_pipeline(case.to_query(), config, pool)
        if judge is None:
            return res, StandardizeResult(res.final_distribution)
        return res, await judge_standardize(case.gold_differential, res.final_distribution, judge)

    outcomes = await _bounded_map(cases, one, parallel)
    run = DdxRun(list(cases), [], [])
    for case, out in zip(cases, outcomes):
        if isinstance(out, ConsensusError):
            log.warning("case %s failed: %s", case.id, out)
            run.errors.append(_item_error(case.id, out))
            run.results.append(None)
            run.standardized.append(None)
        else:
            run.results.append(out[0])
            run.standardized.append(out[1])
    return run


def ddx_report(run: DdxRun, k_max: int = 10, k: int = DEFAULT_METRIC_K, timestamps: bool = False) -> dict[str, Any]:
    pairs = [
        (case.gold_differential, std.distribution)
        for case, std in zip(run.cases, run.standardized)
        if std is not None
    ]
    metrics = ddx_metrics(pairs, k_max, k) if pairs else None
    report: dict[str, Any] = {
        "kind": "ddx",
        "n_items": len(run.cases),
        "n_scored": len(pairs),
        "n_errors": len(run.errors),
        "metrics": metrics.to_dict() if metrics else None,
        "judge_fallbacks": sum(1 for s in run.standardized if s is not None and s.fallback),
        "errors": [e.to_dict() for e in run.errors],
        "items": [],
    }
    scores = iter(metrics.per_case if metrics else ())
    for case, res, std in zip(run.cases, run.results, run.standardized):
        row: dict[str, Any] = {"id": case.id, "gold_top": case.gold_differential.argmax()}
        if res is None or std is None:
            row.update(errored=True)
        else:
            s = next(scores)
            row.update(
                errored=False,
                final_answer=res.final_answer,
                prediction=std.distribution.ranked_labels()[:k],
                judge_fallback=std.fallback,
                judge_reason=std.reason,
                precision=s.precision,
                recall=s.recall,
                f1=s.f1,
            )
        report["items"].append(row)
    if timestamps:
        report["generated_at"] = dt.datetime.now(dt.timezone.utc).isoformat()
    return report


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_mcq_report(report: dict[str, Any], out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "report.json"]
    written[0].write_text(dumps(report), encoding="utf-8")

    path = out / "topk.csv"
    _write_csv(path, ["k", "accuracy"], [[k, v] for k, v in report["top_k"].items()])
    written.append(path)

    path = out / "calibration.csv"
    _write_csv(
        path,
        ["lower", "upper", "count", "mean_confidence", "accuracy"],
        [[b["lower"], b["upper"], b["count"], _cell(b["mean_confidence"]), _cell(b["accuracy"])]
         for b in report["calibration"]["bins"]],
    )
    written.append(path)

    for key, table in report["strata"].items():
        path = out / f"strata_{key}.csv"
        _write_csv(path, [key, "accuracy", "count"], [[v, row["accuracy"], row["count"]] for v, row in table.items()])
        written.append(path)
    return written


def write_ddx_report(report: dict[str, Any], out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "report.json"]
    written[0].write_text(dumps(report), encoding="utf-8")
    metrics = report["metrics"] or {"top_k": {}}

    path = out / "ddx_topk.csv"
    _write_csv(path, ["k", "accuracy"], [[k, v] for k, v in metrics["top_k"].items()])
    written.append(path)

    path = out / "ddx_cases.csv"
    _write_csv(
        path,
        ["id", "errored", "precision", "recall", "f1", "judge_fallback"],
        [[r["id"], r["errored"], _cell(r.get("precision")), _cell(r.get("recall")), _cell(r.get("f1")),
          _cell(r.get("judge_fallback"))] for r in report["items"]],
    )
    written.append(path)
    return written


def _cell(v: Any) -> Any:
    return "" if v is None else v
