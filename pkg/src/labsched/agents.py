"""Offline trainers sharing one dueling Q-network: DDQN, behaviour cloning, CQL and IQL.

Every trainer samples uniform minibatches from an immutable
:class:`~labsched.experience.ReplayBuffer`; the sampling stream and the
network initialisation both derive from ``TrainConfig.seed``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .errors import ConfigError, DimensionError, TrainingError
from .experience import ExperienceTuple, ReplayBuffer, StateVec
from .numkernel import Adam, Affine, Module, ReLU, expectile_loss, logsumexp, softmax
from .numkernel.checkpoint import load_params, save_params
from .numkernel.losses import softmax_cross_entropy

ALGOS = ("bc", "ddqn", "cql", "iql")


class DuelingQNet(Module):
    """``Q(s, .) = V(s) + A(s, .) - mean_a A(s, a)`` on a one-layer ReLU trunk."""

    def __init__(self, state_dim: int, n_actions: int, hidden: int = 256,
                 rng: Optional[np.random.Generator] = None):
        self.trunk = Affine(state_dim, hidden, rng, name="q.trunk")
        self.relu = ReLU()
        self.value = Affine(hidden, 1, rng, name="q.value")
        self.adv = Affine(hidden, n_actions, rng, name="q.adv")

    @property
    def state_dim(self) -> int:
        return self.trunk.n_in

    @property
    def n_actions(self) -> int:
        return self.adv.n_out

    def named_parameters(self) -> Iterator:
        for layer in (self.trunk, self.value, self.adv):
            yield from layer.named_parameters()

    def _check(self, S: np.ndarray) -> np.ndarray:
        S = np.asarray(S, dtype=np.float64)
        if S.ndim == 1:
            S = S[None]
        if S.shape[1] != self.state_dim:
            raise DimensionError(f"state has dimension {S.shape[1]}, network expects "
                                 f"{self.state_dim}")
        return S

    def streams(self, S: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Raw (V, A) outputs without caching, shapes (B, 1) and (B, K+1)."""
        S = self._check(S)
        z = np.maximum(S @ self.trunk.W.value + self.trunk.b.value, 0.0)
        return z @ self.value.W.value + self.value.b.value, z @ self.adv.W.value + self.adv.b.value

    @staticmethod
    def aggregate(V: np.ndarray, A: np.ndarray) -> np.ndarray:
        return V + (A - A.mean(axis=1, keepdims=True))

    def predict(self, S: np.ndarray) -> np.ndarray:
        return self.aggregate(*self.streams(S))

    def forward(self, S: np.ndarray) -> np.ndarray:
        S = self._check(S)
        z = self.relu(self.trunk(S))
        return self.aggregate(self.value(z), self.adv(z))

    def backward(self, dQ: np.ndarray) -> np.ndarray:
        dV = dQ.sum(axis=1, keepdims=True)
        dA = dQ - dQ.mean(axis=1, keepdims=True)
        dz = self.value.backward(dV) + self.adv.backward(dA)
        return self.trunk.backward(self.relu.backward(dz))


class ValueNet(Module):
    """Scalar state-value head on the same trunk shape as :class:`DuelingQNet`."""

    def __init__(self, state_dim: int, hidden: int = 256,
                 rng: Optional[np.random.Generator] = None):
        self.trunk = Affine(state_dim, hidden, rng, name="v.trunk")
        self.relu = ReLU()
        self.out = Affine(hidden, 1, rng, name="v.out")

    @property
    def state_dim(self) -> int:
        return self.trunk.n_in

    def named_parameters(self) -> Iterator:
        yield from self.trunk.named_parameters()
        yield from self.out.named_parameters()

    def predict(self, S: np.ndarray) -> np.ndarray:
        S = np.atleast_2d(np.asarray(S, dtype=np.float64))
        if S.shape[1] != self.state_dim:
            raise DimensionError(f"state has dimension {S.shape[1]}, value net expects "
                                 f"{self.state_dim}")
        z = np.maximum(S @ self.trunk.W.value + self.trunk.b.value, 0.0)
        return (z @ self.out.W.value + self.out.b.value)[:, 0]

    def forward(self, S: np.ndarray) -> np.ndarray:
        return self.out(self.relu(self.trunk(S)))[:, 0]

    def backward(self, dv: np.ndarray) -> np.ndarray:
        return self.trunk.backward(self.relu.backward(self.out.backward(dv[:, None])))


def _state_matrix(s) -> np.ndarray:
    if isinstance(s, StateVec):
        return s.vector[None]
    return np.atleast_2d(np.asarray(s, dtype=np.float64))


def q_forward(net: DuelingQNet, s) -> np.ndarray:
    """Q values of one state (StateVec or vector) as a length K+1 vector."""
    return net.predict(_state_matrix(s))[0]


def admissible_mask(bits: np.ndarray) -> np.ndarray:
    """(B, K) multihot -> (B, K+1) boolean mask of actions not yet taken; stop always allowed."""
    bits = np.atleast_2d(bits)
    return np.concatenate([bits == 0, np.ones((bits.shape[0], 1), bool)], axis=1)


def masked_max(Q: np.ndarray, bits: np.ndarray) -> np.ndarray:
    return np.where(admissible_mask(bits), Q, -np.inf).max(axis=1)


def td_target(tup: ExperienceTuple, target_net: DuelingQNet, gamma: float) -> float:
    if tup.terminal:
        return float(tup.r)
    q = q_forward(target_net, tup.s_next)
    return float(tup.r + gamma * masked_max(q[None], tup.s_next.ordered[None])[0])


def td_targets(buffer: ReplayBuffer, idx: np.ndarray, target_net: DuelingQNet,
               gamma: float) -> np.ndarray:
    q_next = target_net.predict(buffer.next_states(idx))
    best = masked_max(q_next, buffer.sn_bits[idx])
    return buffer.r[idx] + np.where(buffer.terminal[idx], 0.0, gamma * best)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    gamma: float = 0.99
    batch_size: int = 256
    steps: int = 2000
    target_sync: int = 1000
    soft_target: bool = False
    tau_soft: float = 0.005
    cql_alpha: float = 1.0
    iql_tau: float = 0.7
    seed: int = 0
    hidden: int = 256
    clip_norm: Optional[float] = 5.0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0.5 < self.iql_tau < 1:
            raise ConfigError(f"iql_tau must lie in (0.5, 1), got {self.iql_tau}")
        if self.lr <= 0 or self.batch_size <= 0 or self.steps < 0 or self.target_sync <= 0:
            raise ConfigError("lr, batch_size and target_sync must be positive, steps nonnegative")
        if not 0 < self.tau_soft <= 1:
            raise ConfigError(f"tau_soft must lie in (0, 1], got {self.tau_soft}")
        if self.cql_alpha < 0:
            raise ConfigError(f"cql_alpha must be nonnegative, got {self.cql_alpha}")

    @classmethod
    def from_dict(cls, d: Dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainResult:
    algo: str
    net: DuelingQNet
    losses: List[float] = field(default_factory=list)
    vnet: Optional[ValueNet] = None
    config: Optional[TrainConfig] = None

    def write_losses(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loss"])
            for k, loss in enumerate(self.losses):
                w.writerow([k, repr(loss)])


def _check_buffer(buffer: ReplayBuffer) -> None:
    if len(buffer) == 0:
        raise TrainingError("replay buffer is empty")


def _init(buffer: ReplayBuffer, cfg: TrainConfig):
    _check_buffer(buffer)
    rng = np.random.default_rng([cfg.seed, 11])
    net = DuelingQNet(buffer.state_dim, buffer.n_actions, cfg.hidden, rng)
    return rng, net


def _finite(loss: float, step: int, algo: str) -> None:
    if not np.isfinite(loss):
        raise TrainingError(f"{algo}: non-finite loss at step {step}")


def _q_learning(buffer: ReplayBuffer, cfg: TrainConfig, alpha: float, soft: bool,
                algo: str) -> TrainResult:
    rng, net = _init(buffer, cfg)
    target = DuelingQNet(buffer.state_dim, buffer.n_actions, cfg.hidden)
    target.copy_from(net)
    opt = Adam(net.parameters(), lr=cfg.lr, clip_norm=cfg.clip_norm)
    n = len(buffer)
    losses = []
    for step in range(cfg.steps):
        idx = rng.integers(0, n, size=cfg.batch_size)
        a = buffer.a[idx]
        rows = np.arange(len(idx))
        y = td_targets(buffer, idx, target, cfg.gamma)
        Q = net.forward(buffer.states(idx))
        diff = Q[rows, a] - y
        B = len(idx)
        loss = float(np.mean(diff * diff))
        dQ = np.zeros_like(Q)
        dQ[rows, a] = 2.0 * diff / B
        if alpha > 0:
            loss += alpha * float(np.mean(logsumexp(Q, axis=1) - Q[rows, a]))
            pen = softmax(Q)
            pen[rows, a] -= 1.0
            dQ += (alpha / B) * pen
        _finite(loss, step, algo)
        losses.append(loss)
        net.backward(dQ)
        opt.step()
        if soft:
            target.soft_update_from(net, cfg.tau_soft)
        elif (step + 1) % cfg.target_sync == 0:
            target.copy_from(net)
    return TrainResult(algo, net, losses, config=cfg)


def train_ddqn(buffer: ReplayBuffer, cfg: TrainConfig) -> TrainResult:
    """Dueling DQN with masked max targets; hard target copies unless ``cfg.soft_target``."""
    return _q_learning(buffer, cfg, 0.0, cfg.soft_target, "ddqn")


def train_cql(buffer: ReplayBuffer, cfg: TrainConfig) -> TrainResult:
    """DDQN loss plus ``cql_alpha * mean(logsumexp Q - Q(s, a_logged))``, soft targets."""
    return _q_learning(buffer, cfg, cfg.cql_alpha, True, "cql")


def cql_penalty(Q: np.ndarray, a: np.ndarray) -> np.ndarray:
    Q = np.atleast_2d(Q)
    return logsumexp(Q, axis=1) - Q[np.arange(len(Q)), np.asarray(a)]


def train_bc(buffer: ReplayBuffer, cfg: TrainConfig) -> TrainResult:
    """Cross-entropy between softmax(Q) and the logged action, stop included."""
    rng, net = _init(buffer, cfg)
    opt = Adam(net.parameters(), lr=cfg.lr, clip_norm=cfg.clip_norm)
    n = len(buffer)
    losses = []
    for step in range(cfg.steps):
        idx = rng.integers(0, n, size=cfg.batch_size)
        Q = net.forward(buffer.states(idx))
        loss, dQ = softmax_cross_entropy(Q, buffer.a[idx])
        _finite(loss, step, "bc")
        losses.append(loss)
        net.backward(dQ)
        opt.step()
    return TrainResult("bc", net, losses, config=cfg)


def train_iql(buffer: ReplayBuffer, cfg: TrainConfig) -> TrainResult:
    """Expectile value fit on target-Q of logged actions, then Q regression onto ``r + gamma V(s')``."""
    rng, net = _init(buffer, cfg)
    vnet = ValueNet(buffer.state_dim, cfg.hidden, rng)
    target = DuelingQNet(buffer.state_dim, buffer.n_actions, cfg.hidden)
    target.copy_from(net)
    q_opt = Adam(net.parameters(), lr=cfg.lr, clip_norm=cfg.clip_norm)
    v_opt = Adam(vnet.parameters(), lr=cfg.lr, clip_norm=cfg.clip_norm)
    n = len(buffer)
    losses = []
    for step in range(cfg.steps):
        idx = rng.integers(0, n, size=cfg.batch_size)
        a = buffer.a[idx]
        rows = np.arange(len(idx))
        S = buffer.states(idx)
        q_logged = target.predict(S)[rows, a]
        v = vnet.forward(S)
        v_loss, du = expectile_loss(q_logged - v, cfg.iql_tau)
        vnet.backward(-du)
        v_opt.step()

        v_next = vnet.predict(buffer.next_states(idx))
        y = buffer.r[idx] + np.where(buffer.terminal[idx], 0.0, cfg.gamma * v_next)
        Q = net.forward(S)
        diff = Q[rows, a] - y
        q_loss = float(np.mean(diff * diff))
        dQ = np.zeros_like(Q)
        dQ[rows, a] = 2.0 * diff / len(idx)
        loss = q_loss + v_loss
        _finite(loss, step, "iql")
        losses.append(loss)
        net.backward(dQ)
        q_opt.step()
        target.soft_update_from(net, cfg.tau_soft)
    return TrainResult("iql", net, losses, vnet, cfg)


TRAINERS = {"bc": train_bc, "ddqn": train_ddqn, "cql": train_cql, "iql": train_iql}


def train(algo: str, buffer: ReplayBuffer, cfg: TrainConfig) -> TrainResult:
    if algo not in TRAINERS:
        raise ConfigError(f"unknown algorithm {algo!r}; choose from {', '.join(ALGOS)}")
    return TRAINERS[algo](buffer, cfg)


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def save_policy(path, result: TrainResult, meta: Optional[Dict] = None) -> None:
    """Write the Q-net (and value net) parameters plus a ``.json`` sidecar with metadata."""
    params = result.net.state_dict()
    if result.vnet is not None:
        params.update(result.vnet.state_dict())
    save_params(path, params)
    info = {"algo": result.algo, "state_dim": result.net.state_dim,
            "n_actions": result.net.n_actions, "hidden": result.net.trunk.n_out}
    if result.config is not None:
        info["config"] = asdict(result.config)
    info.update(meta or {})
    Path(str(path) + ".json").write_text(json.dumps(info, sort_keys=True, indent=1))


def load_policy(path) -> Tuple[DuelingQNet, Dict]:
    params = load_params(path)
    d, hidden = params["q.trunk.W"].shape
    net = DuelingQNet(d, params["q.adv.W"].shape[1], hidden)
    net.load_state_dict({k: v for k, v in params.items() if k.startswith("q.")})
    side = Path(str(path) + ".json")
    meta = json.loads(side.read_text()) if side.exists() else {}
    return net, meta
