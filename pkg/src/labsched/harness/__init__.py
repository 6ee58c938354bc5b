"""Experiment orchestration: sweeps, frontier extraction and report export."""

from .config import DATA_ROOT_ENV, ExperimentConfig, data_root
from .export import export_reports, read_boxplot, read_scatter, read_table
from .frontier import FrontierReport, box_summaries, frontier, pareto_indices
from .sweep import SweepInputs, SweepResult, prepare_inputs, sweep

__all__ = [
    "DATA_ROOT_ENV",
    "ExperimentConfig",
    "FrontierReport",
    "SweepInputs",
    "SweepResult",
    "box_summaries",
    "data_root",
    "export_reports",
    "frontier",
    "pareto_indices",
    "prepare_inputs",
    "read_boxplot",
    "read_scatter",
    "read_table",
    "sweep",
]
