"""LSTM mortality-trajectory model.

The model reads a stay row by row (time-variant values followed by the
duplicated static block) and maps each hidden state ``h_t`` to a mortality
probability through an affine+sigmoid head. Training uses the stay's terminal
label at a uniformly sampled prefix length per batch element, so every
intermediate ``h_t`` is supervised.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
from sklearn.metrics import roc_auc_score

from .cohort import Episode, EpisodeSet
from .errors import DimensionError, TrainingError
from .numkernel import LSTM, Adam, Affine, Module, sigmoid, sigmoid_cross_entropy
from .numkernel.checkpoint import load_params, save_params


@dataclass
class TrajHParams:
    hidden: int = 256
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 64
    patience: int = 5
    seed: int = 0
    clip_norm: float = 5.0


class TrajectoryModel(Module):
    def __init__(self, n_in: int, hidden: int = 256, rng: Optional[np.random.Generator] = None):
        self.lstm = LSTM(n_in, hidden, rng, name="lstm")
        self.head = Affine(hidden, 1, rng, name="head")

    @property
    def n_in(self) -> int:
        return self.lstm.n_in

    @property
    def hidden(self) -> int:
        return self.lstm.hidden

    def named_parameters(self) -> Iterator:
        yield from self.lstm.named_parameters()
        yield from self.head.named_parameters()

    def save(self, path) -> None:
        save_params(path, self.state_dict())

    @classmethod
    def load(cls, path) -> "TrajectoryModel":
        return cls.from_state(load_params(path))

    @classmethod
    def from_state(cls, state: Dict[str, np.ndarray]) -> "TrajectoryModel":
        n_in, four_h = state["lstm.Wx"].shape
        model = cls(n_in, four_h // 4)
        model.load_state_dict(state)
        return model

    def head_prob(self, h: np.ndarray) -> np.ndarray:
        """Mortality probability for hidden states of shape (..., H)."""
        h = np.asarray(h)
        logits = h.reshape(-1, self.hidden) @ self.head.W.value + self.head.b.value
        return sigmoid(logits).reshape(h.shape[:-1])

    def _check_input(self, X: np.ndarray) -> None:
        if X.shape[-1] != self.n_in:
            raise DimensionError(
                f"input has {X.shape[-1]} columns but the model expects {self.n_in}"
            )


def build_input(episode: Episode) -> np.ndarray:
    """Row t is ``concat(X_tv[t], X_inv)``; shape (T, m + u)."""
    T = episode.X_tv.shape[0]
    inv = np.broadcast_to(np.asarray(episode.X_inv, dtype=np.float64), (T, len(episode.X_inv)))
    return np.concatenate([episode.X_tv, inv], axis=1)


def build_inputs(episodes: EpisodeSet) -> np.ndarray:
    N, T, _ = episodes.X_tv.shape
    inv = np.broadcast_to(episodes.X_inv[:, None, :], (N, T, episodes.u))
    return np.concatenate([episodes.X_tv, inv], axis=2)


def hidden_states(model: TrajectoryModel, X: np.ndarray, chunk: int = 512
                  ) -> Tuple[np.ndarray, np.ndarray]:
    """Hidden states and probabilities after each prefix.

    ``X`` is (T, n) or (N, T, n). Element ``t`` (0-based) of the result is
    the state after consuming rows ``0..t``.
    """
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[None]
    model._check_input(X)
    N, T, _ = X.shape
    hs = np.empty((N, T, model.hidden))
    for start in range(0, N, chunk):
        sl = slice(start, start + chunk)
        hs[sl] = _forward_nocache(model.lstm, X[sl])
    ps = model.head_prob(hs)
    if single:
        return hs[0], ps[0]
    return hs, ps


def _forward_nocache(lstm: LSTM, X: np.ndarray, h0=None, c0=None, return_cells: bool = False):
    B, T, _ = X.shape
    H = lstm.hidden
    h = np.zeros((B, H)) if h0 is None else h0
    c = np.zeros((B, H)) if c0 is None else c0
    hs = np.empty((B, T, H))
    cs = np.empty((B, T, H)) if return_cells else None
    for t in range(T):
        h, c = lstm.step(X[:, t], h, c)
        hs[:, t] = h
        if return_cells:
            cs[:, t] = c
    return (hs, cs) if return_cells else hs


def hidden_and_cells(model: TrajectoryModel, X: np.ndarray, chunk: int = 512
                     ) -> Tuple[np.ndarray, np.ndarray]:
    """Like :func:`hidden_states` but returns ``(hs, cs)`` for batched (N, T, n) input."""
    model._check_input(X)
    N, T, _ = X.shape
    hs = np.empty((N, T, model.hidden))
    cs = np.empty((N, T, model.hidden))
    for start in range(0, N, chunk):
        sl = slice(start, start + chunk)
        hs[sl], cs[sl] = _forward_nocache(model.lstm, X[sl], return_cells=True)
    return hs, cs


def predict(model: TrajectoryModel, X: np.ndarray) -> np.ndarray:
    """Probability after the full sequence, for (T, n) or (N, T, n) input."""
    _, ps = hidden_states(model, X)
    return ps[..., -1]


def predict_with_substitution(model: TrajectoryModel, X: np.ndarray, t: int, signal_index: int,
                              value: float) -> float:
    """Probability after rows ``0..t`` with cell ``(t, signal_index)`` replaced by ``value``.

    ``value`` is on the model's (normalised) input scale.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"expected a single (T, n) stay input, got shape {X.shape}")
    model._check_input(X)
    if not 0 <= t < X.shape[0]:
        raise DimensionError(f"row {t} outside 0..{X.shape[0] - 1}")
    if not 0 <= signal_index < X.shape[1]:
        raise DimensionError(f"column {signal_index} outside 0..{X.shape[1] - 1}")
    Xs = X[:t + 1].copy()
    Xs[t, signal_index] = value
    hs = _forward_nocache(model.lstm, Xs[None])
    return float(model.head_prob(hs[0, -1]))


def auc(y: np.ndarray, p: np.ndarray) -> float:
    return float(roc_auc_score(y, p))


def _check_labels(y: np.ndarray, name: str) -> None:
    if len(y) == 0:
        raise TrainingError(f"{name} split is empty")
    if len(np.unique(y)) < 2:
        raise TrainingError(f"{name} split contains a single class")


@dataclass
class TrajHistory:
    train_loss: List[float] = field(default_factory=list)
    val_auc: List[float] = field(default_factory=list)
    best_epoch: int = -1

    def write_csv(self, path, append: bool = True) -> None:
        path = Path(path)
        new = not path.exists() or not append
        with open(path, "a" if append else "w", newline="") as fh:
            w = csv.writer(fh)
            if new:
                w.writerow(["epoch", "train_loss", "val_auc"])
            for k, (loss, a) in enumerate(zip(self.train_loss, self.val_auc)):
                w.writerow([k, repr(loss), repr(a)])


def train_traj(train_split: EpisodeSet, val_split: EpisodeSet, hparams: TrajHParams = TrajHParams(),
               log=None) -> Tuple[TrajectoryModel, TrajHistory]:
    """Fit the mortality model; early-stops on validation AUC and returns the best epoch."""
    _check_labels(train_split.y, "train")
    _check_labels(val_split.y, "validation")
    rng = np.random.default_rng([hparams.seed, 7])
    X = build_inputs(train_split)
    Xv = build_inputs(val_split)
    y = train_split.y.astype(np.float64)
    N, T, n_in = X.shape
    model = TrajectoryModel(n_in, hparams.hidden, rng)
    opt = Adam(model.parameters(), lr=hparams.lr, clip_norm=hparams.clip_norm)
    hist = TrajHistory()
    best_auc, best_state, stale = -np.inf, model.state_dict(), 0
    H = hparams.hidden
    for epoch in range(hparams.epochs):
        order = rng.permutation(N)
        total, count = 0.0, 0
        for start in range(0, N, hparams.batch_size):
            idx = order[start:start + hparams.batch_size]
            B = len(idx)
            t_pick = rng.integers(0, T, size=B)
            horizon = int(t_pick.max()) + 1
            hs = model.lstm.forward(X[idx, :horizon])
            h_sel = hs[np.arange(B), t_pick]
            logits = model.head.forward(h_sel)
            loss, dlogit = sigmoid_cross_entropy(logits[:, 0], y[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite trajectory loss at epoch {epoch}")
            dh_sel = model.head.backward(dlogit[:, None])
            dhs = np.zeros((B, horizon, H))
            dhs[np.arange(B), t_pick] = dh_sel
            model.lstm.backward(dhs)
            opt.step()
            total += loss * B
            count += B
        val_p = predict(model, Xv)
        val_auc = auc(val_split.y, val_p)
        hist.train_loss.append(total / count)
        hist.val_auc.append(val_auc)
        if log is not None:
            log(f"epoch {epoch}: loss {total / count:.5f} val_auc {val_auc:.4f}")
        if val_auc > best_auc:
            best_auc, best_state, stale = val_auc, model.state_dict(), 0
            hist.best_epoch = epoch
        else:
            stale += 1
            if stale >= hparams.patience:
                break
    model.load_state_dict(best_state)
    return model, hist
