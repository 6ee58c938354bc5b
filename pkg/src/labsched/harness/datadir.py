"""On-disk layout of a cohort directory.

``raw_stays.jsonl``  raw event records with labels
``episodes.jsonl``   discretised, filled and normalised episodes tagged by split
``stats.json``       train-split population statistics
``cohort.json``      generator configuration
``truth.npz``        latent ground truth (synthetic cohorts only)
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from ..cohort import (CohortConfig, Dataset, GroundTruth, PopulationStats, build_dataset,
                      read_episodes, read_raw_stays, synth_cohort, write_episodes,
                      write_raw_stays)
from ..errors import DataError

RAW = "raw_stays.jsonl"
EPISODES = "episodes.jsonl"
STATS = "stats.json"
COHORT = "cohort.json"
TRUTH = "truth.npz"


def write_truth(path, truth: GroundTruth) -> None:
    np.savez(path, stay_ids=truth.stay_ids, latents=truth.latents,
             mortality_prob=truth.mortality_prob, signal_slopes=truth.signal_slopes,
             signal_offsets=truth.signal_offsets,
             label=np.array([truth.label_slope, truth.label_bias]))


def read_truth(path) -> GroundTruth:
    z = np.load(path)
    return GroundTruth(z["stay_ids"], z["latents"], z["mortality_prob"], z["signal_slopes"],
                       z["signal_offsets"], float(z["label"][0]), float(z["label"][1]))


def synth_to_dir(cfg: CohortConfig, out) -> Dataset:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    stays, truth, labels = synth_cohort(cfg)
    dataset = build_dataset(stays, labels, cfg.T, cfg.m, cfg.interval_hours, cfg.seed)
    write_raw_stays(out / RAW, stays, labels)
    write_episodes(out / EPISODES, dataset)
    dataset.stats.save(out / STATS)
    (out / COHORT).write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=1))
    write_truth(out / TRUTH, truth)
    return dataset


def load_cohort_config(data_dir) -> Optional[CohortConfig]:
    p = Path(data_dir) / COHORT
    return CohortConfig.from_dict(json.loads(p.read_text())) if p.exists() else None


def load_dataset(data_dir) -> Dataset:
    d = Path(data_dir)
    for name in (EPISODES, STATS):
        if not (d / name).exists():
            raise DataError(f"cohort directory {d} lacks {name}")
    cfg = load_cohort_config(d)
    interval = cfg.interval_hours if cfg is not None else 1.0
    return read_episodes(d / EPISODES, PopulationStats.load(d / STATS), interval)


def split_ids(dataset: Dataset) -> Dict[str, np.ndarray]:
    return {name: np.asarray(eps.stay_ids) for name, eps in dataset.splits.items()}


def rebuild_from_raw(data_dir, split: str = "train") -> Dataset:
    """Recompute statistics from raw stays on ``split`` and re-normalise every split."""
    d = Path(data_dir)
    stays, labels = read_raw_stays(d / RAW)
    current = load_dataset(d)
    cfg = load_cohort_config(d) or CohortConfig()
    ids = split_ids(current)
    if split not in ids:
        raise DataError(f"unknown split {split!r}")
    ordered = dict(ids)
    ordered["train"], ordered[split] = ids[split], ids["train"]
    ds = build_dataset(stays, labels, cfg.T, cfg.m, cfg.interval_hours, cfg.seed,
                       split_ids=ordered)
    return build_dataset(stays, labels, cfg.T, cfg.m, cfg.interval_hours, cfg.seed,
                         split_ids=ids, stats=ds.stats)
