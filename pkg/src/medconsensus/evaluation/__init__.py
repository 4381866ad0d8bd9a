"""Benchmark harness: datasets, accuracy, calibration and DDx scoring."""

from .calibration import CalibrationBin, CalibrationReport, calibration_from_pairs, reliability
from .datasets import DdxCase, McqItem, load_ddx_dataset, load_mcq_dataset, sample_subset
from .ddx import DdxMetrics, Judge, StandardizeResult, check_rename, ddx_metrics, judge_standardize
from .metrics import OTHER_NA, EvalRecord, accuracy, stratified_accuracy, top_k_accuracy, top_k_curve

__all__ = [
    "CalibrationBin",
    "CalibrationReport",
    "DdxCase",
    "DdxMetrics",
    "EvalRecord",
    "Judge",
    "McqItem",
    "OTHER_NA",
    "StandardizeResult",
    "accuracy",
    "calibration_from_pairs",
    "check_rename",
    "ddx_metrics",
    "judge_standardize",
    "load_ddx_dataset",
    "load_mcq_dataset",
    "reliability",
    "sample_subset",
    "stratified_accuracy",
    "top_k_accuracy",
    "top_k_curve",
]
