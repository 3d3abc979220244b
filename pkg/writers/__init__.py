"""
Output writers for the Pareto re-ranking engine

This package contains the modules that persist run results:
- run_writer: final lists, fronts, anchors, example dumps, traces, checkpoint
- report_writer: metrics report, per-user CSV, ablation and sweep reports
"""

from writers.report_writer import ReportWriter
from writers.run_writer import RunWriter, read_final_lists

__all__ = [
    'RunWriter',
    'ReportWriter',
    'read_final_lists'
]
