"""Pareto frontier extraction and cost-bucketed gain summaries."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..policyeval import PolicyReport
from .config import DEFAULT_BOX_EDGES


def _seed_key(r: PolicyReport) -> int:
    return r.seed if r.seed is not None else np.iinfo(np.int64).max


def pareto_indices(reports: Sequence[PolicyReport]) -> List[int]:
    """Indices of the Pareto set under (minimise C, maximise G).

    Among points with equal C only the highest G survives; exact (C, G)
    duplicates keep the lowest seed.
    """
    order = sorted(range(len(reports)),
                   key=lambda i: (reports[i].C, -reports[i].G, _seed_key(reports[i]), i))
    keep, best = [], -np.inf
    for i in order:
        if reports[i].G > best:
            keep.append(i)
            best = reports[i].G
    return keep


def dominates(a: PolicyReport, b: PolicyReport) -> bool:
    return a.C <= b.C and a.G >= b.G and (a.C < b.C or a.G > b.G)


@dataclass
class BoxSummary:
    lo: float
    hi: float
    n: int
    minimum: float = float("nan")
    q1: float = float("nan")
    median: float = float("nan")
    q3: float = float("nan")
    maximum: float = float("nan")

    @property
    def label(self) -> str:
        hi = "inf" if np.isinf(self.hi) else f"{self.hi:g}"
        return f"[{self.lo:g},{hi})"


def quartiles(values: Sequence[float]) -> Tuple[float, float, float, float, float]:
    v = np.asarray(values, dtype=np.float64)
    q = np.percentile(v, [0, 25, 50, 75, 100])
    return tuple(float(x) for x in q)


def box_summaries(reports: Sequence[PolicyReport], edges: Sequence[float] = DEFAULT_BOX_EDGES
                  ) -> List[BoxSummary]:
    """Quartiles of G for policies grouped by cost interval ``[edges[k], edges[k+1])``."""
    bounds = list(edges) + [np.inf]
    out = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        g = [r.G for r in reports if lo <= r.C < hi]
        box = BoxSummary(float(lo), float(hi), len(g))
        if g:
            box.minimum, box.q1, box.median, box.q3, box.maximum = quartiles(g)
        out.append(box)
    return out


@dataclass
class FrontierReport:
    points: List[PolicyReport]
    pareto: List[bool]
    by_method: Dict[str, List[PolicyReport]] = field(default_factory=dict)
    references: List[PolicyReport] = field(default_factory=list)
    boxes: Dict[str, List[BoxSummary]] = field(default_factory=dict)

    @property
    def pareto_points(self) -> List[PolicyReport]:
        return [p for p, f in zip(self.points, self.pareto) if f]


def frontier(reports: Sequence[PolicyReport], references: Sequence[PolicyReport] = (),
             edges: Sequence[float] = DEFAULT_BOX_EDGES) -> FrontierReport:
    """Global Pareto flags, per-method Pareto sets and per-method box summaries."""
    reports = list(reports)
    keep = set(pareto_indices(reports))
    flags = [i in keep for i in range(len(reports))]
    methods: Dict[str, List[PolicyReport]] = {}
    for r in reports:
        methods.setdefault(r.algo, []).append(r)
    by_method = {}
    boxes = {}
    for algo, rs in methods.items():
        idx = pareto_indices(rs)
        by_method[algo] = sorted((rs[i] for i in idx), key=lambda r: r.C)
        boxes[algo] = box_summaries(rs, edges)
    return FrontierReport(reports, flags, by_method, list(references), boxes)


def matched_random_check(policy: PolicyReport, random_ref: PolicyReport,
                         tolerance: float = 0.10) -> bool:
    """True if ``policy`` beats a random reference whose cost is within ``tolerance`` of its own.

    Costs that agree to within the tolerance count as equal, so the policy
    must then have strictly higher gain.
    """
    if policy.C <= 0 or random_ref.C <= 0:
        return False
    if abs(random_ref.C - policy.C) > tolerance * policy.C:
        return False
    return policy.G > random_ref.G


def best_matched_gain_margin(policies: Sequence[PolicyReport], randoms: Sequence[PolicyReport],
                             tolerance: float = 0.10) -> Optional[float]:
    """Largest G margin over each policy's matched random reference (None if nothing matches)."""
    best = None
    for p, r in zip(policies, randoms):
        if matched_random_check(p, r, tolerance):
            margin = p.G - r.G
            best = margin if best is None else max(best, margin)
    return best
