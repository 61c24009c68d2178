"""Workloads, trace files, end-to-end runs and the command line."""

from .pipeline import RunReport, compare_strategies, needle_suite, run_encoded, run_pipeline, rows_to_csv
from .workload import Workload, default_layout, generate_workload, parse_layout

__all__ = [
    "RunReport", "Workload", "compare_strategies", "default_layout", "generate_workload",
    "needle_suite", "parse_layout", "rows_to_csv", "run_encoded", "run_pipeline",
]
