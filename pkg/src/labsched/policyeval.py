"""Policy execution, reference policies, the phi regression estimator and OPPE.

A policy only decides which tests to order at each step; the hidden states
``h_t`` it sees are those of the logged trajectory. The phi network maps
``[h_t, multihot(A_t + stop)]`` to the probability change that step produces,
and the gain ``G`` accumulates discounted phi outputs over every stay and step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .agents import DuelingQNet
from .cohort import EpisodeSet
from .errors import ConfigError, DimensionError, TrainingError
from .numkernel import Adam, Affine, Module, ReLU, mse
from .numkernel.checkpoint import load_params, save_params
from .trajectory import TrajectoryModel, build_inputs, hidden_states


# --------------------------------------------------------------------------
# policy execution
# --------------------------------------------------------------------------

def run_policy(qnet: DuelingQNet, h_t: np.ndarray, return_trace: bool = False):
    """Greedy ordering loop at one step: add the best untaken action until stop wins.

    Returns the set of ordered tests (and, with ``return_trace``, the full
    sequence of chosen actions including the final stop).
    """
    K = qnet.n_actions - 1
    h_t = np.asarray(h_t, dtype=np.float64).ravel()
    if len(h_t) + K != qnet.state_dim:
        raise DimensionError(f"hidden state of length {len(h_t)} with K={K} does not fit a "
                             f"network of input dimension {qnet.state_dim}")
    bits = np.zeros(K)
    trace = []
    ordered = set()
    for _ in range(K + 1):
        q = qnet.predict(np.concatenate([h_t, bits])[None])[0]
        q[:K][bits > 0] = -np.inf
        a = int(np.argmax(q))
        trace.append(a)
        if a == K:
            break
        ordered.add(a)
        bits[a] = 1.0
    return (ordered, trace) if return_trace else ordered


def run_policy_batch(qnet: DuelingQNet, H: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """Vectorised :func:`run_policy` over rows of ``H``; returns (N, K) uint8 multihot.

    The trunk pre-activation is updated incrementally as bits are added,
    which is exact up to floating-point summation order.
    """
    K = qnet.n_actions - 1
    H = np.asarray(H, dtype=np.float64)
    n_h = H.shape[1]
    if n_h + K != qnet.state_dim:
        raise DimensionError(f"hidden states of width {n_h} with K={K} do not fit a network of "
                             f"input dimension {qnet.state_dim}")
    W = qnet.trunk.W.value
    Wh, Wb = W[:n_h], W[n_h:]
    out = np.zeros((len(H), K), np.uint8)
    for start in range(0, len(H), chunk):
        sl = slice(start, start + chunk)
        pre = H[sl] @ Wh + qnet.trunk.b.value
        bits = np.zeros((pre.shape[0], K), np.uint8)
        active = np.arange(pre.shape[0])
        for _ in range(K + 1):
            if len(active) == 0:
                break
            z = np.maximum(pre[active], 0.0)
            V = z @ qnet.value.W.value + qnet.value.b.value
            A = z @ qnet.adv.W.value + qnet.adv.b.value
            q = DuelingQNet.aggregate(V, A)
            q[:, :K][bits[active] > 0] = -np.inf
            a = np.argmax(q, axis=1)
            go = a != K
            rows, acts = active[go], a[go]
            bits[rows, acts] = 1
            pre[rows] += Wb[acts]
            active = rows
        out[sl] = bits
    return out


# --------------------------------------------------------------------------
# policies
# --------------------------------------------------------------------------

@dataclass
class EvalContext:
    """Logged hidden states of an evaluation split, computed once and shared."""

    episodes: EpisodeSet
    H: np.ndarray  # (N, T, hidden): h_t before consuming row t
    p: np.ndarray  # (N, T + 1): p_t for t = 0..T
    orderable: Tuple[int, ...]

    @property
    def K(self) -> int:
        return len(self.orderable)

    @property
    def N(self) -> int:
        return self.H.shape[0]

    @property
    def T(self) -> int:
        return self.H.shape[1]

    @property
    def signs(self) -> np.ndarray:
        return np.where(self.episodes.y == 1, 1.0, -1.0)

    def logged_bits(self) -> np.ndarray:
        return self.episodes.mask[:, :, list(self.orderable)].astype(np.uint8)

    def delta_p(self, signed: bool = True) -> np.ndarray:
        """Per-step change ``p_{t+1} - p_t`` (N, T), outcome-signed if requested."""
        d = np.diff(self.p, axis=1)
        return d * self.signs[:, None] if signed else d


def eval_context(model: TrajectoryModel, episodes: EpisodeSet,
                 orderable: Optional[Sequence[int]] = None) -> EvalContext:
    if orderable is None:
        orderable = range(episodes.m)
    hs, ps = hidden_states(model, build_inputs(episodes))
    N, T, Hd = hs.shape
    H = np.concatenate([np.zeros((N, 1, Hd)), hs[:, :-1]], axis=1)
    p0 = np.full((N, 1), float(model.head_prob(np.zeros(Hd))))
    return EvalContext(episodes, H, np.concatenate([p0, ps], axis=1), tuple(orderable))


@dataclass
class QPolicy:
    net: DuelingQNet
    name: str = "policy"

    def action_bits(self, ctx: EvalContext) -> np.ndarray:
        flat = run_policy_batch(self.net, ctx.H.reshape(-1, ctx.H.shape[2]))
        return flat.reshape(ctx.N, ctx.T, ctx.K)


@dataclass
class ReferencePolicy:
    kind: str  # physician | random | always-stop
    p: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("physician", "random", "always-stop"):
            raise ConfigError(f"unknown reference policy {self.kind!r}")
        if self.kind == "random" and not 0 <= self.p <= 1:
            raise ConfigError(f"random policy probability must lie in [0, 1], got {self.p}")

    @property
    def name(self) -> str:
        return f"random(p={self.p:g})" if self.kind == "random" else self.kind

    def action_bits(self, ctx: EvalContext) -> np.ndarray:
        if self.kind == "physician":
            return ctx.logged_bits()
        if self.kind == "always-stop":
            return np.zeros((ctx.N, ctx.T, ctx.K), np.uint8)
        out = np.empty((ctx.N, ctx.T, ctx.K), np.uint8)
        for i, sid in enumerate(ctx.episodes.stay_ids):
            rng = np.random.default_rng([self.seed, 5, int(sid)])
            out[i] = rng.random((ctx.T, ctx.K)) < self.p
        return out


Policy = Union[QPolicy, ReferencePolicy]


def physician_policy() -> ReferencePolicy:
    return ReferencePolicy("physician")


def random_policy(p: float, seed: int = 0) -> ReferencePolicy:
    return ReferencePolicy("random", p, seed)


def always_stop() -> ReferencePolicy:
    return ReferencePolicy("always-stop")


def policy_cost_from_bits(bits: np.ndarray) -> float:
    return float(bits.reshape(bits.shape[0], -1).sum(axis=1).mean()) if len(bits) else 0.0


def policy_cost(policy: Policy, ctx: EvalContext) -> float:
    """Mean over stays of the total number of ordered tests."""
    return policy_cost_from_bits(policy.action_bits(ctx))


# --------------------------------------------------------------------------
# phi estimator
# --------------------------------------------------------------------------

class PhiEstimator(Module):
    """``[h, multihot(K+1)] -> 128 -> ReLU -> 1`` regression of the per-step change.

    ``signed_target`` records whether the net was fitted to outcome-signed
    changes (then it is used as is) or to raw changes (then OPPE multiplies
    by the outcome sign). The net itself regresses standardised targets;
    ``predict`` maps back through ``target_mean`` and ``target_std``.
    """

    def __init__(self, hidden_dim: int, K: int, width: int = 128,
                 rng: Optional[np.random.Generator] = None, signed_target: bool = True):
        self.hidden_dim = hidden_dim
        self.K = K
        self.l1 = Affine(hidden_dim + K + 1, width, rng, name="phi.l1")
        self.relu = ReLU()
        self.l2 = Affine(width, 1, rng, name="phi.l2")
        self.signed_target = signed_target
        self.target_mean = 0.0
        self.target_std = 1.0
        self.scale = 1.0

    @property
    def input_dim(self) -> int:
        return self.l1.n_in

    def named_parameters(self) -> Iterator:
        yield from self.l1.named_parameters()
        yield from self.l2.named_parameters()

    def _check(self, Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        if Z.shape[1] != self.input_dim:
            raise DimensionError(f"phi input has dimension {Z.shape[1]}, expected {self.input_dim}")
        return Z

    def forward(self, Z: np.ndarray) -> np.ndarray:
        return self.l2(self.relu(self.l1(self._check(Z))))[:, 0]

    def backward(self, d: np.ndarray) -> np.ndarray:
        return self.l1.backward(self.relu.backward(self.l2.backward(d[:, None])))

    def predict(self, Z: np.ndarray, chunk: int = 65536) -> np.ndarray:
        Z = self._check(Z)
        out = np.empty(len(Z))
        for s in range(0, len(Z), chunk):
            z = np.maximum(Z[s:s + chunk] @ self.l1.W.value + self.l1.b.value, 0.0)
            out[s:s + chunk] = (z @ self.l2.W.value + self.l2.b.value)[:, 0]
        return self.scale * (self.target_mean + self.target_std * out)

    def save(self, path) -> None:
        state = self.state_dict()
        state["meta.hidden_dim"] = np.array([[float(self.hidden_dim)]])
        state["meta.signed_target"] = np.array([[1.0 if self.signed_target else 0.0]])
        state["meta.scale"] = np.array([[self.scale]])
        state["meta.target"] = np.array([[self.target_mean, self.target_std]])
        save_params(path, state)

    @classmethod
    def load(cls, path) -> "PhiEstimator":
        state = load_params(path)
        hidden_dim = int(state.pop("meta.hidden_dim")[0, 0])
        signed = bool(state.pop("meta.signed_target")[0, 0])
        scale = float(state.pop("meta.scale")[0, 0])
        target = state.pop("meta.target")[0]
        n_in, width = state["phi.l1.W"].shape
        phi = cls(hidden_dim, n_in - hidden_dim - 1, width, signed_target=signed)
        phi.load_state_dict(state)
        phi.scale = scale
        phi.target_mean, phi.target_std = float(target[0]), float(target[1])
        return phi

    def scaled(self, alpha: float) -> "PhiEstimator":
        """Copy whose predictions are multiplied by ``alpha``."""
        other = PhiEstimator(self.hidden_dim, self.K, self.l1.n_out,
                             signed_target=self.signed_target)
        other.copy_from(self)
        other.target_mean, other.target_std = self.target_mean, self.target_std
        other.scale = self.scale * alpha
        return other


def phi_inputs(H: np.ndarray, bits: np.ndarray) -> np.ndarray:
    """``[h, bits, 1]``: stop is part of every executed set."""
    H = H.reshape(-1, H.shape[-1])
    bits = bits.reshape(len(H), -1).astype(np.float64)
    return np.concatenate([H, bits, np.ones((len(H), 1))], axis=1)


@dataclass
class PhiData:
    H: np.ndarray  # (n, hidden)
    bits: np.ndarray  # (n, K)
    target: np.ndarray  # (n,)
    stay_index: np.ndarray  # (n,)

    def __len__(self) -> int:
        return len(self.target)

    def inputs(self, idx=slice(None)) -> np.ndarray:
        return phi_inputs(self.H[idx], self.bits[idx])


def phi_dataset(ctx: EvalContext, signed: bool = True) -> PhiData:
    """Physician-logged pairs ``([h_t, A'_t], dp_t)`` for every stay and step of ``ctx``."""
    N, T, Hd = ctx.H.shape
    return PhiData(ctx.H.reshape(N * T, Hd), ctx.logged_bits().reshape(N * T, ctx.K),
                   ctx.delta_p(signed).reshape(N * T), np.repeat(np.arange(N), T))


@dataclass
class PhiHParams:
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 30
    patience: int = 4
    lr_decay: float = 0.5  # applied after every epoch without validation improvement
    seed: int = 0
    width: int = 128
    clip_norm: Optional[float] = 5.0


@dataclass
class PhiHistory:
    train_mse: List[float] = field(default_factory=list)
    val_mse: List[float] = field(default_factory=list)
    best_epoch: int = -1


def train_phi(train: PhiData, val: PhiData, hparams: PhiHParams = PhiHParams(),
              signed_target: bool = True) -> Tuple[PhiEstimator, PhiHistory]:
    """MSE regression with early stopping on validation MSE.

    The learning rate is multiplied by ``lr_decay`` after each epoch that
    fails to improve the validation error, which damps the optimiser noise
    in the output offset.
    """
    if len(train) == 0:
        raise TrainingError("phi training set is empty")
    if len(val) == 0:
        raise TrainingError("phi validation set is empty")
    rng = np.random.default_rng([hparams.seed, 13])
    Hd, K = train.H.shape[1], train.bits.shape[1]
    phi = PhiEstimator(Hd, K, hparams.width, rng, signed_target)
    mu, sd = float(np.mean(train.target)), float(np.std(train.target))
    phi.target_mean, phi.target_std = mu, sd if sd > 0 else 1.0
    z_target = (train.target - phi.target_mean) / phi.target_std
    opt = Adam(phi.parameters(), lr=hparams.lr, clip_norm=hparams.clip_norm)
    Zv = val.inputs()
    hist = PhiHistory()
    best, best_state, stale = np.inf, phi.state_dict(), 0
    n = len(train)
    for epoch in range(hparams.epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, hparams.batch_size):
            idx = order[s:s + hparams.batch_size]
            pred = phi.forward(train.inputs(idx))
            loss, d = mse(pred, z_target[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"phi: non-finite loss at epoch {epoch}")
            phi.backward(d)
            opt.step()
            total += loss * len(idx)
        v = float(np.mean((phi.predict(Zv) - val.target) ** 2))
        hist.train_mse.append(total / n * phi.target_std ** 2)
        hist.val_mse.append(v)
        if v < best:
            best, best_state, stale = v, phi.state_dict(), 0
            hist.best_epoch = epoch
        else:
            stale += 1
            if stale >= hparams.patience:
                break
            opt.set_lr(opt.lr * hparams.lr_decay)
    phi.load_state_dict(best_state)
    return phi, hist


def r_squared(pred: np.ndarray, target: np.ndarray) -> float:
    ss_res = float(np.sum((target - pred) ** 2))
    ss_tot = float(np.sum((target - target.mean()) ** 2))
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0


# --------------------------------------------------------------------------
# OPPE
# --------------------------------------------------------------------------

def discount_weights(T: int, gamma: float, literal_gamma: bool = False) -> np.ndarray:
    """``gamma**t`` per step, or the constant ``gamma`` when ``literal_gamma``."""
    if not 0 < gamma <= 1:
        raise ConfigError(f"gamma must lie in (0, 1], got {gamma}")
    return np.full(T, gamma) if literal_gamma else gamma ** np.arange(T)


@dataclass
class GainEstimate:
    G: float
    per_stay: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.per_stay.mean()) if len(self.per_stay) else 0.0

    @property
    def std(self) -> float:
        return float(self.per_stay.std(ddof=1)) if len(self.per_stay) > 1 else 0.0


def gain_from_bits(phi: PhiEstimator, ctx: EvalContext, bits: np.ndarray, gamma: float,
                   literal_gamma: bool = False) -> GainEstimate:
    if phi.input_dim != ctx.H.shape[2] + ctx.K + 1:
        raise DimensionError(f"phi expects input dimension {phi.input_dim}, evaluation context "
                             f"provides {ctx.H.shape[2] + ctx.K + 1}")
    est = phi.predict(phi_inputs(ctx.H, bits)).reshape(ctx.N, ctx.T)
    if not phi.signed_target:
        est = est * ctx.signs[:, None]
    per_stay = est @ discount_weights(ctx.T, gamma, literal_gamma)
    # fixed stay order keeps the reduction reproducible
    return GainEstimate(float(np.sum(per_stay)), per_stay)


def oppe(phi: PhiEstimator, ctx: EvalContext, policy: Policy, gamma: float = 0.99,
         literal_gamma: bool = False) -> GainEstimate:
    """Estimated cumulative information gain of ``policy`` over the stays of ``ctx``."""
    return gain_from_bits(phi, ctx, policy.action_bits(ctx), gamma, literal_gamma)


def direct_gain(ctx: EvalContext, gamma: float = 0.99, literal_gamma: bool = False
                ) -> GainEstimate:
    """Logged-data gain computed from the trajectory model's probabilities themselves."""
    per_stay = ctx.delta_p(signed=True) @ discount_weights(ctx.T, gamma, literal_gamma)
    return GainEstimate(float(np.sum(per_stay)), per_stay)


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

REPORT_COLUMNS = ("policy_id", "algo", "lr", "lambda", "seed", "C", "G", "G_mean", "G_std",
                  "G_literal_gamma")


@dataclass
class PolicyReport:
    policy_id: str
    algo: str
    C: float
    G: float
    lr: Optional[float] = None
    lam: Optional[float] = None
    seed: Optional[int] = None
    G_mean: float = 0.0
    G_std: float = 0.0
    G_literal_gamma: Optional[float] = None
    per_stay_cost: Optional[np.ndarray] = None
    per_stay_gain: Optional[np.ndarray] = None

    def row(self) -> Dict[str, str]:
        def fmt(x):
            return "" if x is None else repr(float(x)) if isinstance(x, float) else str(x)
        return {"policy_id": self.policy_id, "algo": self.algo, "lr": fmt(self.lr),
                "lambda": fmt(self.lam), "seed": fmt(self.seed), "C": fmt(self.C),
                "G": fmt(self.G), "G_mean": fmt(self.G_mean), "G_std": fmt(self.G_std),
                "G_literal_gamma": fmt(self.G_literal_gamma)}

    @classmethod
    def from_row(cls, row: Dict[str, str]) -> "PolicyReport":
        def opt(key, typ):
            v = row.get(key, "")
            return None if v in ("", None) else typ(v)
        return cls(row["policy_id"], row["algo"], float(row["C"]), float(row["G"]),
                   opt("lr", float), opt("lambda", float), opt("seed", int),
                   float(row.get("G_mean") or 0.0), float(row.get("G_std") or 0.0),
                   opt("G_literal_gamma", float))


def evaluate_policy(policy: Policy, phi: PhiEstimator, ctx: EvalContext, gamma: float = 0.99,
                    policy_id: str = "policy", algo: str = "", lr=None, lam=None, seed=None
                    ) -> PolicyReport:
    bits = policy.action_bits(ctx)
    est = gain_from_bits(phi, ctx, bits, gamma)
    lit = None
    if gamma != 1.0:
        lit = gain_from_bits(phi, ctx, bits, gamma, literal_gamma=True).G
    per_cost = bits.reshape(ctx.N, -1).sum(axis=1).astype(np.float64)
    return PolicyReport(policy_id, algo, policy_cost_from_bits(bits), est.G, lr, lam, seed,
                        est.mean, est.std, lit, per_cost, est.per_stay)


def write_reports(path, reports: Sequence[PolicyReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow(r.row())


def read_reports(path) -> List[PolicyReport]:
    with open(path, newline="") as fh:
        return [PolicyReport.from_row(row) for row in csv.DictReader(fh)]


def write_per_stay(path, stay_ids: Sequence[int], report: PolicyReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stay_id", "cost", "gain"])
        for sid, c, g in zip(stay_ids, report.per_stay_cost, report.per_stay_gain):
            w.writerow([int(sid), repr(float(c)), repr(float(g))])
