"""Episodic ICU-stay schema, preprocessing and a synthetic cohort generator.

Raw stays are irregular event lists. Preprocessing buckets them into ``T``
fixed-width intervals (mean of all values per cell), z-scores each signal
with training-split statistics and forward-fills holes. The synthetic
generator drives every signal from one latent severity process so that
downstream evaluators can be checked against the truth.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DataError, GenerationError
from .signals import SIGNAL_FREQUENCIES

STATS_VERSION = 1
SPLITS = ("train", "val", "test")


@dataclass
class RawStay:
    stay_id: int
    static_features: np.ndarray
    event_times: np.ndarray
    event_signals: np.ndarray
    event_values: np.ndarray
    duration_hours: float
    death_time_hours: Optional[float] = None

    def __post_init__(self):
        self.static_features = np.asarray(self.static_features, dtype=np.float64)
        self.event_times = np.asarray(self.event_times, dtype=np.float64)
        self.event_signals = np.asarray(self.event_signals, dtype=np.int64)
        self.event_values = np.asarray(self.event_values, dtype=np.float64)
        n = len(self.event_times)
        if len(self.event_signals) != n or len(self.event_values) != n:
            raise DataError(f"stay {self.stay_id}: event arrays have unequal lengths")

    @classmethod
    def from_events(cls, stay_id: int, static_features, events: Iterable[Tuple[float, int, float]],
                    duration_hours: float, death_time_hours: Optional[float] = None) -> "RawStay":
        events = list(events)
        times = [e[0] for e in events]
        sigs = [e[1] for e in events]
        vals = [e[2] for e in events]
        return cls(stay_id, static_features, times, sigs, vals, duration_hours, death_time_hours)

    @property
    def events(self) -> List[Tuple[float, int, float]]:
        return list(zip(self.event_times.tolist(), self.event_signals.tolist(),
                        self.event_values.tolist()))

    @property
    def n_events(self) -> int:
        return len(self.event_times)

    def validate(self, m: int) -> None:
        if np.any(self.event_signals < 0) or np.any(self.event_signals >= m):
            raise DataError(f"stay {self.stay_id}: signal index outside 0..{m - 1}")
        if np.any(self.event_times < 0) or np.any(self.event_times > self.duration_hours):
            raise DataError(f"stay {self.stay_id}: event time outside [0, duration]")


@dataclass
class Episode:
    stay_id: int
    X_inv: np.ndarray
    X_tv: np.ndarray
    observed_mask: np.ndarray
    y: int


@dataclass
class EpisodeSet:
    """Column-oriented collection of episodes sharing T, m and u."""

    stay_ids: np.ndarray
    X_inv: np.ndarray
    X_tv: np.ndarray
    mask: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.stay_ids = np.asarray(self.stay_ids, dtype=np.int64)
        self.X_inv = np.asarray(self.X_inv, dtype=np.float64)
        self.X_tv = np.asarray(self.X_tv, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.uint8)
        self.y = np.asarray(self.y, dtype=np.int64)
        n = len(self.stay_ids)
        if not (len(self.X_inv) == len(self.X_tv) == len(self.mask) == len(self.y) == n):
            raise DataError("episode arrays have inconsistent lengths")
        if self.X_tv.shape != self.mask.shape:
            raise DataError(f"X_tv shape {self.X_tv.shape} vs mask shape {self.mask.shape}")

    def __len__(self) -> int:
        return len(self.stay_ids)

    @property
    def T(self) -> int:
        return self.X_tv.shape[1]

    @property
    def m(self) -> int:
        return self.X_tv.shape[2]

    @property
    def u(self) -> int:
        return self.X_inv.shape[1]

    def subset(self, idx) -> "EpisodeSet":
        idx = np.asarray(idx)
        return EpisodeSet(self.stay_ids[idx], self.X_inv[idx], self.X_tv[idx], self.mask[idx],
                          self.y[idx])

    def episode(self, i: int) -> Episode:
        return Episode(int(self.stay_ids[i]), self.X_inv[i], self.X_tv[i], self.mask[i],
                       int(self.y[i]))

    @classmethod
    def from_episodes(cls, episodes: Sequence[Episode]) -> "EpisodeSet":
        return cls([e.stay_id for e in episodes], [e.X_inv for e in episodes],
                   [e.X_tv for e in episodes], [e.observed_mask for e in episodes],
                   [e.y for e in episodes])


@dataclass
class PopulationStats:
    mean: np.ndarray
    std: np.ndarray

    def to_json(self) -> str:
        return json.dumps({
            "version": STATS_VERSION,
            "signals": [{"index": i, "mean": float(mu), "std": float(sd)}
                        for i, (mu, sd) in enumerate(zip(self.mean, self.std))],
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "PopulationStats":
        obj = json.loads(text)
        if obj.get("version") != STATS_VERSION:
            raise DataError(f"unsupported population stats version {obj.get('version')}")
        sig = sorted(obj["signals"], key=lambda s: s["index"])
        return cls(np.array([s["mean"] for s in sig]), np.array([s["std"] for s in sig]))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "PopulationStats":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def identity(cls, m: int) -> "PopulationStats":
        return cls(np.zeros(m), np.ones(m))


@dataclass
class CohortConfig:
    n_stays: int = 20000
    T: int = 23
    m: int = 38
    u: int = 38
    interval_hours: float = 1.0
    target_mortality_rate: float = 0.12
    signal_frequencies: Tuple[float, ...] = SIGNAL_FREQUENCIES
    seed: int = 0
    # latent process and measurement model
    ar_coef: float = 0.9
    ar_noise_sd: float = 0.3
    obs_noise_var: float = 0.25
    max_obs_prob: float = 0.95
    repeat_prob: float = 0.2
    label_slope: float = 5.0

    def __post_init__(self):
        self.signal_frequencies = tuple(float(f) for f in self.signal_frequencies)
        self.validate()

    def validate(self) -> None:
        if self.n_stays <= 0 or self.T <= 0 or self.m <= 0 or self.u < 3:
            raise ConfigError("n_stays, T, m must be positive and u >= 3")
        if self.interval_hours <= 0:
            raise ConfigError("interval_hours must be positive")
        if not 0.0 < self.target_mortality_rate < 1.0:
            raise ConfigError("target_mortality_rate must lie in (0, 1)")
        if len(self.signal_frequencies) != self.m:
            raise ConfigError(f"{len(self.signal_frequencies)} signal frequencies for m={self.m}")
        if min(self.signal_frequencies) <= 0:
            raise ConfigError("signal frequencies must be positive")
        if not 0 < self.max_obs_prob <= 1:
            raise ConfigError("max_obs_prob must lie in (0, 1]")

    @property
    def observation_probs(self) -> np.ndarray:
        freq = np.asarray(self.signal_frequencies)
        return np.minimum(freq * (self.max_obs_prob / freq.max()), 1.0)

    @classmethod
    def from_dict(cls, d: Dict) -> "CohortConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown cohort config keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> Dict:
        d = asdict(self)
        d["signal_frequencies"] = list(self.signal_frequencies)
        return d


@dataclass
class GroundTruth:
    """Latent quantities retained from synthetic generation."""

    stay_ids: np.ndarray
    latents: np.ndarray        # (N, T) severity per interval
    mortality_prob: np.ndarray  # (N,) sigma(w * z_last + w0)
    signal_slopes: np.ndarray
    signal_offsets: np.ndarray
    label_slope: float
    label_bias: float

    def for_stays(self, stay_ids) -> "GroundTruth":
        pos = {int(s): k for k, s in enumerate(self.stay_ids)}
        idx = np.array([pos[int(s)] for s in stay_ids], dtype=np.int64)
        return GroundTruth(self.stay_ids[idx], self.latents[idx], self.mortality_prob[idx],
                           self.signal_slopes, self.signal_offsets, self.label_slope,
                           self.label_bias)


# --------------------------------------------------------------------------
# preprocessing
# --------------------------------------------------------------------------

def discretize(stay: RawStay, T: int, m: int, interval_hours: float
               ) -> Tuple[np.ndarray, np.ndarray]:
    """Bucket events into a (T, m) grid of per-interval means.

    Returns ``(values, mask)``; holes in ``values`` are NaN and have mask 0.
    Events at or beyond ``T * interval_hours`` fall outside the window.
    """
    stay.validate(m)
    bucket = np.floor(stay.event_times / interval_hours).astype(np.int64)
    keep = (bucket >= 0) & (bucket < T)
    flat = bucket[keep] * m + stay.event_signals[keep]
    sums = np.bincount(flat, weights=stay.event_values[keep], minlength=T * m)
    counts = np.bincount(flat, minlength=T * m)
    values = np.full(T * m, np.nan)
    seen = counts > 0
    values[seen] = sums[seen] / counts[seen]
    return values.reshape(T, m), seen.reshape(T, m).astype(np.uint8)


def compute_population_stats(values: np.ndarray, mask: np.ndarray) -> PopulationStats:
    """Per-signal mean/std over observed cells of (N, T, m) discretized values."""
    m = values.shape[-1]
    v = values.reshape(-1, m)
    obs = mask.reshape(-1, m).astype(bool)
    n = obs.sum(axis=0)
    filled = np.where(obs, v, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = filled.sum(axis=0) / n
        var = (np.where(obs, v - mean, 0.0) ** 2).sum(axis=0) / n
    std = np.sqrt(var)
    bad = [i for i in range(m) if n[i] == 0 or not np.isfinite(std[i]) or std[i] == 0.0]
    if bad:
        raise ConfigError(f"signals with zero or undefined std in the training split: {bad}")
    return PopulationStats(mean, std)


def forward_fill(values: np.ndarray, mask: np.ndarray, fill: float = 0.0) -> np.ndarray:
    """Forward-fill holes along the time axis (axis -2); leading holes get ``fill``."""
    obs = mask.astype(bool)
    T = values.shape[-2]
    t_idx = np.arange(T).reshape((T, 1))
    last = np.where(obs, t_idx, -1)
    last = np.maximum.accumulate(last, axis=-2)
    gathered = np.take_along_axis(np.where(obs, values, 0.0), np.maximum(last, 0), axis=-2)
    return np.where(last >= 0, gathered, fill)


def fill_and_normalize(values: np.ndarray, mask: np.ndarray, population_stats: PopulationStats
                       ) -> np.ndarray:
    """Z-score observed cells, forward-fill holes, then zero-fill leading holes."""
    std = np.asarray(population_stats.std, dtype=np.float64)
    zero = [int(i) for i in np.flatnonzero(~(std > 0))]
    if zero:
        raise ConfigError(f"population stats have zero std for signals {zero}")
    obs = mask.astype(bool)
    z = np.where(obs, (np.where(obs, values, 0.0) - population_stats.mean) / std, 0.0)
    return forward_fill(z, mask, 0.0)


def is_valid_stay(stay: RawStay, labeled: bool = True, min_hours: float = 12.0,
                  min_tests: int = 5) -> bool:
    if stay.duration_hours < min_hours or stay.n_events < min_tests:
        return False
    if labeled and stay.death_time_hours is not None and stay.duration_hours > stay.death_time_hours:
        return False
    return True


def filter_stays(stays: Iterable[RawStay], labeled: bool = True) -> List[RawStay]:
    """Keep stays lasting >= 12 h with >= 5 measurement events (and ending before death)."""
    return [s for s in stays if is_valid_stay(s, labeled)]


def split_stay_ids(stay_ids: Sequence[int], seed: int,
                   ratios: Tuple[float, float, float] = (0.7, 0.15, 0.15)) -> Dict[str, np.ndarray]:
    ids = np.sort(np.asarray(stay_ids, dtype=np.int64))
    perm = np.random.default_rng([seed, 2]).permutation(len(ids))
    n_train = int(round(ratios[0] * len(ids)))
    n_val = int(round(ratios[1] * len(ids)))
    return {
        "train": np.sort(ids[perm[:n_train]]),
        "val": np.sort(ids[perm[n_train:n_train + n_val]]),
        "test": np.sort(ids[perm[n_train + n_val:]]),
    }


def discretize_stays(stays: Sequence[RawStay], T: int, m: int, interval_hours: float
                     ) -> Tuple[np.ndarray, np.ndarray]:
    values = np.empty((len(stays), T, m))
    mask = np.empty((len(stays), T, m), dtype=np.uint8)
    for k, s in enumerate(stays):
        values[k], mask[k] = discretize(s, T, m, interval_hours)
    return values, mask


@dataclass
class Dataset:
    splits: Dict[str, EpisodeSet]
    stats: PopulationStats
    interval_hours: float = 1.0

    def __getitem__(self, split: str) -> EpisodeSet:
        return self.splits[split]


def build_dataset(stays: Sequence[RawStay], labels: Dict[int, int], T: int, m: int,
                  interval_hours: float, seed: int,
                  split_ids: Optional[Dict[str, np.ndarray]] = None,
                  stats: Optional[PopulationStats] = None) -> Dataset:
    """Filter, split, discretize and normalise raw stays into episode sets."""
    kept = filter_stays(stays)
    by_id = {s.stay_id: s for s in kept}
    if split_ids is None:
        split_ids = split_stay_ids(list(by_id), seed)
    raw = {}
    for name in SPLITS:
        ids = [int(i) for i in split_ids[name] if int(i) in by_id]
        raw[name] = (ids, *discretize_stays([by_id[i] for i in ids], T, m, interval_hours))
    if stats is None:
        _, v, msk = raw["train"]
        stats = compute_population_stats(v, msk)
    splits = {}
    for name, (ids, v, msk) in raw.items():
        sel = [by_id[i] for i in ids]
        x_inv = np.array([s.static_features for s in sel]).reshape(len(sel), -1)
        splits[name] = EpisodeSet(ids, x_inv, fill_and_normalize(v, msk, stats), msk,
                                  [labels[i] for i in ids])
    return Dataset(splits, stats, interval_hours)


# --------------------------------------------------------------------------
# synthetic generation
# --------------------------------------------------------------------------

def _global_params(cfg: CohortConfig):
    rng = np.random.default_rng([cfg.seed, 0])
    magnitude = rng.uniform(0.1, 1.5, size=cfg.m)
    slopes = magnitude * rng.choice([-1.0, 1.0], size=cfg.m)
    offsets = rng.normal(0.0, 2.0, size=cfg.m)
    prevalence = rng.uniform(0.02, 0.25, size=cfg.u - 3)
    weights = np.concatenate([[0.4, 0.1, 0.1], rng.normal(0.0, 0.3, size=cfg.u - 3)])
    return slopes, offsets, prevalence, weights


def _synth_stay(cfg: CohortConfig, stay_id: int, slopes, offsets, prevalence, weights, probs):
    rng = np.random.default_rng([cfg.seed, 1, stay_id])
    T, m, dt = cfg.T, cfg.m, cfg.interval_hours
    x_inv = np.concatenate([
        [rng.normal(), float(rng.random() < 0.5), float(rng.random() < 0.3)],
        (rng.random(cfg.u - 3) < prevalence).astype(np.float64),
    ])
    z = np.empty(T)
    z[0] = rng.normal() + x_inv @ weights
    eta = rng.normal(0.0, cfg.ar_noise_sd, size=T - 1)
    for t in range(1, T):
        z[t] = cfg.ar_coef * z[t - 1] + eta[t - 1]
    observed = rng.random((T, m)) < probs
    repeats = 1 + (rng.random((T, m)) < cfg.repeat_prob)
    counts = np.where(observed, repeats, 0).ravel()
    cell = np.repeat(np.arange(T * m), counts)
    t_of = cell // m
    sig = cell % m
    times = (t_of + rng.random(len(cell))) * dt
    values = slopes[sig] * z[t_of] + offsets[sig] + rng.normal(0.0, math.sqrt(cfg.obs_noise_var),
                                                               size=len(cell))
    order = np.argsort(times, kind="stable")
    u_label = rng.random()
    death_wait = rng.exponential(24.0)
    stay = RawStay(stay_id, x_inv, times[order], sig[order], values[order], T * dt, None)
    return stay, z, u_label, death_wait


def calibrate_label_bias(z_last: np.ndarray, uniforms: np.ndarray, slope: float, target: float,
                         max_steps: int = 50, tol: float = 0.02) -> float:
    """Bisection on the intercept so that mean(U < sigma(slope*z + b)) hits ``target``."""
    lo, hi = -40.0, 40.0
    best, best_err = None, np.inf
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        rate = float(np.mean(uniforms < expit(slope * z_last + mid)))
        err = abs(rate - target)
        if err < best_err:
            best, best_err = mid, err
        if err <= 0.25 / len(z_last) + 1e-12:
            break
        if rate < target:
            lo = mid
        else:
            hi = mid
    if best_err > tol:
        raise GenerationError(
            f"mortality calibration failed: best rate error {best_err:.4f} after {max_steps} steps"
        )
    return best


def synth_cohort(config: CohortConfig) -> Tuple[List[RawStay], GroundTruth, Dict[int, int]]:
    """Generate ``config.n_stays`` raw stays plus their latent ground truth and labels.

    Returns ``(stays, truth, labels)`` where ``labels`` maps stay_id to 0/1.
    Each stay draws from its own stream seeded by ``(seed, stay_id)``, so any
    subset of stays regenerates identically; only the label intercept is
    shared (calibrated over the whole cohort).
    """
    config.validate()
    slopes, offsets, prevalence, weights = _global_params(config)
    probs = config.observation_probs
    stays, latents, uniforms, waits = [], [], [], []
    for sid in range(config.n_stays):
        stay, z, u_label, wait = _synth_stay(config, sid, slopes, offsets, prevalence, weights,
                                             probs)
        stays.append(stay)
        latents.append(z)
        uniforms.append(u_label)
        waits.append(wait)
    latents = np.array(latents)
    uniforms = np.array(uniforms)
    w = config.label_slope
    w0 = calibrate_label_bias(latents[:, -1], uniforms, w, config.target_mortality_rate)
    p = expit(w * latents[:, -1] + w0)
    y = (uniforms < p).astype(np.int64)
    labels = {}
    for stay, yi, wait in zip(stays, y, waits):
        labels[stay.stay_id] = int(yi)
        if yi:
            stay.death_time_hours = stay.duration_hours + wait
    truth = GroundTruth(np.arange(config.n_stays), latents, p, slopes, offsets, w, w0)
    return stays, truth, labels


# --------------------------------------------------------------------------
# file formats
# --------------------------------------------------------------------------

def write_raw_stays(path, stays: Sequence[RawStay], labels: Dict[int, int]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in stays:
            fh.write(json.dumps({
                "stay_id": int(s.stay_id),
                "static_features": s.static_features.tolist(),
                "events": [[t, int(i), v] for t, i, v in s.events],
                "duration_hours": float(s.duration_hours),
                "death_time_hours": s.death_time_hours,
                "y": int(labels[s.stay_id]),
            }) + "\n")


def read_raw_stays(path) -> Tuple[List[RawStay], Dict[int, int]]:
    stays, labels = [], {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            ev = obj["events"]
            stays.append(RawStay(obj["stay_id"], obj["static_features"],
                                 [e[0] for e in ev], [e[1] for e in ev], [e[2] for e in ev],
                                 obj["duration_hours"], obj.get("death_time_hours")))
            labels[obj["stay_id"]] = int(obj["y"])
    return stays, labels


def episode_record(ep: Episode, split: Optional[str] = None) -> Dict:
    T, m = ep.X_tv.shape
    rec = {
        "stay_id": int(ep.stay_id),
        "X_inv": np.asarray(ep.X_inv).tolist(),
        "X_tv": {"rows": T, "cols": m, "values": ep.X_tv.ravel().tolist(),
                 "mask": ep.observed_mask.astype(int).ravel().tolist()},
        "y": int(ep.y),
    }
    if split is not None:
        rec["split"] = split
    return rec


def episode_from_record(rec: Dict) -> Episode:
    tv = rec["X_tv"]
    shape = (tv["rows"], tv["cols"])
    return Episode(int(rec["stay_id"]), np.array(rec["X_inv"], dtype=np.float64),
                   np.array(tv["values"], dtype=np.float64).reshape(shape),
                   np.array(tv["mask"], dtype=np.uint8).reshape(shape), int(rec["y"]))


def write_episodes(path, dataset: Dataset) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name in SPLITS:
            eps = dataset.splits[name]
            for i in range(len(eps)):
                fh.write(json.dumps(episode_record(eps.episode(i), name)) + "\n")


def read_episodes(path, stats: PopulationStats, interval_hours: float = 1.0) -> Dataset:
    groups: Dict[str, List[Episode]] = {name: [] for name in SPLITS}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                groups[rec.get("split", "train")].append(episode_from_record(rec))
    splits = {}
    for name, eps in groups.items():
        if eps:
            splits[name] = EpisodeSet.from_episodes(eps)
        else:
            raise DataError(f"episode file has no stays in split {name!r}")
    return Dataset(splits, stats, interval_hours)
