"""Hyperparameter sweeps over (algorithm, learning rate, cost coefficient, seed)."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ..agents import TrainConfig, save_policy, train
from ..cohort import Dataset, EpisodeSet
from ..experience import ReplayBuffer, RewardParams, build_buffer
from ..policyeval import (EvalContext, PhiEstimator, PhiHParams, PolicyReport, QPolicy,
                          ReferencePolicy, eval_context, evaluate_policy, phi_dataset,
                          read_reports, train_phi, write_reports)
from ..trajectory import TrajectoryModel
from .config import ExperimentConfig

log = logging.getLogger(__name__)

Cell = Tuple[str, float, float, int]


def cell_id(cell: Cell) -> str:
    algo, lr, lam, seed = cell
    return f"{algo}_lr{lr:g}_lam{lam:g}_s{seed}"


def cell_dir(out: Path, cell: Cell) -> Path:
    return Path(out) / "cells" / cell_id(cell)


def head(episodes: EpisodeSet, n: int) -> EpisodeSet:
    """First ``n`` stays (all if ``n`` is 0 or exceeds the split)."""
    if n <= 0 or n >= len(episodes):
        return episodes
    return episodes.subset(np.arange(n))


@dataclass
class SweepInputs:
    """Shared read-only inputs: base (cost-free) buffer, phi and the evaluation context."""

    buffer: ReplayBuffer
    phi: PhiEstimator
    ctx: EvalContext


def fit_phi(model: TrajectoryModel, dataset: Dataset, n_stays: int, orderable=None,
            hparams: PhiHParams = PhiHParams()) -> PhiEstimator:
    tr = phi_dataset(eval_context(model, head(dataset["train"], n_stays), orderable))
    va = phi_dataset(eval_context(model, head(dataset["val"], max(n_stays // 4, 1)), orderable))
    phi, _ = train_phi(tr, va, hparams)
    return phi


def prepare_inputs(cfg: ExperimentConfig, dataset: Dataset, model: TrajectoryModel,
                   phi: Optional[PhiEstimator] = None) -> SweepInputs:
    orderable = list(cfg.orderable) if cfg.orderable is not None else None
    buffer = build_buffer(model, head(dataset["train"], cfg.buffer_stays),
                          RewardParams(0.0, cfg.gamma, cfg.sign_flip_time_passing),
                          cfg.experience_seed, orderable)
    if phi is None:
        phi = fit_phi(model, dataset, cfg.phi_stays, orderable)
    ctx = eval_context(model, head(dataset["test"], cfg.eval_stays), orderable)
    return SweepInputs(buffer, phi, ctx)


@dataclass
class CellResult:
    cell: Cell
    report: Optional[PolicyReport] = None
    trained: bool = False
    error: Optional[str] = None


@dataclass
class SweepResult:
    cells: List[CellResult] = field(default_factory=list)

    @property
    def reports(self) -> List[PolicyReport]:
        return [c.report for c in self.cells if c.report is not None]

    @property
    def failures(self) -> List[CellResult]:
        return [c for c in self.cells if c.error is not None]

    @property
    def n_trained(self) -> int:
        return sum(c.trained for c in self.cells)

    @property
    def exit_code(self) -> int:
        return 2 if self.failures else 0


def train_config(cfg: ExperimentConfig, lr: float, seed: int) -> TrainConfig:
    return TrainConfig(lr=lr, gamma=cfg.gamma, batch_size=cfg.batch_size, steps=cfg.steps,
                       target_sync=cfg.target_sync, cql_alpha=cfg.cql_alpha,
                       iql_tau=cfg.iql_tau, seed=seed, hidden=cfg.hidden)


def run_cell(cell: Cell, cfg: ExperimentConfig, inputs: SweepInputs,
             buffers: dict) -> CellResult:
    algo, lr, lam, seed = cell
    d = cell_dir(cfg.out, cell)
    report_path = d / "report.csv"
    if report_path.exists():
        return CellResult(cell, read_reports(report_path)[0], trained=False)
    try:
        result = train(algo, buffers[lam], train_config(cfg, lr, seed))
        report = evaluate_policy(QPolicy(result.net), inputs.phi, inputs.ctx, cfg.gamma,
                                 policy_id=cell_id(cell), algo=algo, lr=lr, lam=lam, seed=seed)
        d.mkdir(parents=True, exist_ok=True)
        save_policy(d / "policy.ckpt", result, {"lr": lr, "lambda": lam, "seed": seed})
        result.write_losses(d / "loss.csv")
        tmp = d / "report.csv.tmp"
        write_reports(tmp, [report])
        tmp.replace(report_path)
        return CellResult(cell, report, trained=True)
    except Exception as exc:  # a failed cell must not abort the sweep
        log.warning("cell %s failed: %s", cell_id(cell), exc)
        return CellResult(cell, error=f"{type(exc).__name__}: {exc}")


def sweep(cfg: ExperimentConfig, inputs: SweepInputs,
          progress: Optional[Callable[[CellResult], None]] = None,
          cells: Optional[Sequence[Cell]] = None) -> SweepResult:
    """Train and evaluate every grid cell; cells with an existing report are reused."""
    cells = list(cells) if cells is not None else cfg.cells()
    buffers = {lam: inputs.buffer.with_lambda(lam) for lam in sorted({c[2] for c in cells})}
    Path(cfg.out).mkdir(parents=True, exist_ok=True)

    def job(cell):
        res = run_cell(cell, cfg, inputs, buffers)
        if progress is not None:
            progress(res)
        return res

    if cfg.workers == 1:
        results = [job(c) for c in cells]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(job, cells))
    out = SweepResult(results)
    write_reports(Path(cfg.out) / "reports.csv", out.reports)
    with open(Path(cfg.out) / "failures.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell", "error"])
        for f in out.failures:
            w.writerow([cell_id(f.cell), f.error])
    return out


def reference_reports(inputs: SweepInputs, gamma: float) -> List[PolicyReport]:
    refs = []
    for pol, pid in ((ReferencePolicy("physician"), "Physician"),
                     (ReferencePolicy("always-stop"), "Always-stop")):
        refs.append(evaluate_policy(pol, inputs.phi, inputs.ctx, gamma, policy_id=pid,
                                    algo=pol.kind))
    return refs


def matched_random(report: PolicyReport, inputs: SweepInputs, gamma: float) -> PolicyReport:
    """Random reference whose per-test probability matches ``report``'s expected cost."""
    ctx = inputs.ctx
    p = min(1.0, report.C / (ctx.K * ctx.T))
    seed = report.seed if report.seed is not None else 0
    pol = ReferencePolicy("random", p, seed)
    return evaluate_policy(pol, inputs.phi, ctx, gamma, policy_id=f"{report.policy_id}:random",
                           algo="random", seed=seed)
