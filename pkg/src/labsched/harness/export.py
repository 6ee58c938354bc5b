"""CSV and SVG report emission for frontier results, plus matching parsers."""

from __future__ import annotations

import csv
import re
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..policyeval import PolicyReport  # noqa: E402
from .frontier import BoxSummary, FrontierReport  # noqa: E402

DISPLAY_NAMES = {"bc": "BC", "ddqn": "DDQN", "cql": "CQL", "iql": "IQL",
                 "physician": "Physician", "random": "Random", "always-stop": "Always-stop"}

TABLE_HEADER = ("method", "points")
SCATTER_HEADER = ("policy_id", "method", "lr", "lambda", "seed", "C", "G", "pareto")
BOX_HEADER = ("method", "interval", "lo", "hi", "n", "min", "q1", "median", "q3", "max")

_POINT = re.compile(r"\(\s*([^,()]+)\s*,\s*([^,()]+)\s*\)")


def display_name(algo: str) -> str:
    return DISPLAY_NAMES.get(algo, algo)


def format_point(C: float, G: float) -> str:
    """Table cell text ``(C, G)`` with C to 2 and G to 3 decimals."""
    return f"({round(float(C), 2)!r}, {round(float(G), 3)!r})"


def parse_points(text: str) -> List[Tuple[float, float]]:
    return [(float(a), float(b)) for a, b in _POINT.findall(text)]


def table_rows(front: FrontierReport) -> List[Tuple[str, str]]:
    rows = []
    for ref in front.references:
        rows.append((display_name(ref.algo), format_point(ref.C, ref.G)))
    for algo, pts in front.by_method.items():
        rows.append((display_name(algo), "; ".join(format_point(p.C, p.G) for p in pts)))
    return rows


def _num(x) -> str:
    return "" if x is None else repr(float(x))


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def export_reports(front: FrontierReport, out_dir) -> Dict[str, Path]:
    """Write table.csv, scatter.csv, boxplot.csv, scatter.svg and boxplot.svg."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / f for k, f in (("table", "table.csv"), ("scatter", "scatter.csv"),
                                     ("boxplot", "boxplot.csv"), ("scatter_svg", "scatter.svg"),
                                     ("boxplot_svg", "boxplot.svg"))}
    with open(paths["table"], "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(TABLE_HEADER)
        w.writerows(table_rows(front))
    with open(paths["scatter"], "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(SCATTER_HEADER)
        for r, flag in zip(front.points, front.pareto):
            w.writerow([r.policy_id, display_name(r.algo), _num(r.lr), _num(r.lam),
                        "" if r.seed is None else r.seed, _num(r.C), _num(r.G), int(flag)])
        for r in front.references:
            w.writerow([r.policy_id, display_name(r.algo), "", "", "", _num(r.C), _num(r.G), 0])
    with open(paths["boxplot"], "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(BOX_HEADER)
        for algo, boxes in front.boxes.items():
            for b in boxes:
                w.writerow([display_name(algo), b.label, _num(b.lo), _num(b.hi), b.n,
                            _num(b.minimum), _num(b.q1), _num(b.median), _num(b.q3),
                            _num(b.maximum)])
    _scatter_svg(front, paths["scatter_svg"])
    _box_svg(front, paths["boxplot_svg"])
    return paths


def _save(fig, path) -> None:
    with plt.rc_context({"svg.hashsalt": "labsched", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _scatter_svg(front: FrontierReport, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4.5))
    methods: Dict[str, List[PolicyReport]] = {}
    for r in front.points:
        methods.setdefault(r.algo, []).append(r)
    for algo, rs in methods.items():
        ax.scatter([r.C for r in rs], [r.G for r in rs], s=14, alpha=0.7,
                   label=display_name(algo))
    for ref in front.references:
        ax.scatter([ref.C], [ref.G], marker="*", s=90, color="black")
        ax.annotate(ref.policy_id, (ref.C, ref.G), textcoords="offset points", xytext=(4, 4),
                    fontsize=7)
    par = sorted(front.pareto_points, key=lambda r: r.C)
    if par:
        ax.step([r.C for r in par], [r.G for r in par], where="post", color="grey", lw=0.8)
    ax.set_xlabel("policy cost C")
    ax.set_ylabel("cumulative gain G")
    if methods:
        ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)


def _box_svg(front: FrontierReport, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4.5))
    stats, labels = [], []
    for algo, boxes in front.boxes.items():
        for b in boxes:
            if b.n == 0:
                continue
            stats.append({"med": b.median, "q1": b.q1, "q3": b.q3, "whislo": b.minimum,
                          "whishi": b.maximum, "fliers": [], "label": ""})
            labels.append(f"{display_name(algo)}\n{b.label}")
    if stats:
        ax.bxp(stats, showfliers=False)
        ax.set_xticks(np.arange(1, len(labels) + 1))
        ax.set_xticklabels(labels, fontsize=6)
    ax.set_ylabel("cumulative gain G")
    fig.tight_layout()
    _save(fig, path)


# --------------------------------------------------------------------------
# parsers
# --------------------------------------------------------------------------

def _read(path) -> List[List[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def read_table(path) -> List[Tuple[str, List[Tuple[float, float]]]]:
    rows = _read(path)
    return [(r[0], parse_points(r[1])) for r in rows[1:]]


def _opt_float(s: str):
    return None if s == "" else float(s)


def read_scatter(path) -> List[Dict]:
    rows = _read(path)
    out = []
    for r in rows[1:]:
        rec = dict(zip(SCATTER_HEADER, r))
        out.append({"policy_id": rec["policy_id"], "method": rec["method"],
                    "lr": _opt_float(rec["lr"]), "lambda": _opt_float(rec["lambda"]),
                    "seed": None if rec["seed"] == "" else int(rec["seed"]),
                    "C": float(rec["C"]), "G": float(rec["G"]), "pareto": rec["pareto"] == "1"})
    return out


def read_boxplot(path) -> List[Tuple[str, BoxSummary]]:
    rows = _read(path)
    out = []
    for r in rows[1:]:
        rec = dict(zip(BOX_HEADER, r))
        b = BoxSummary(float(rec["lo"]), float(rec["hi"]), int(rec["n"]), float(rec["min"]),
                       float(rec["q1"]), float(rec["median"]), float(rec["q3"]), float(rec["max"]))
        out.append((rec["method"], b))
    return out
