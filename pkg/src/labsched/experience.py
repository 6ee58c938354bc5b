"""MDP encoding and experience generation for measurement scheduling.

Time convention: decision step ``t`` (0-based, ``t < T``) sees the hidden
state ``h_t`` after consuming rows ``0..t-1`` (``h_0`` is the zero initial
state) and decides which tests to take in row ``t``. ``p_t`` is the trajectory
model's probability at ``h_t``.

For every step the generator emits one time-passing tuple::

    ([h_t, multihot(A'_t)], STOP, p_{t+1} - p_t, [h_{t+1}, {}])

and, for each logged test in a random order, one per-step tuple whose
reward is the outcome-signed change of the model's probability when that
test's value is written into row ``t`` minus the cost coefficient. Tests not
yet added in the sub-step chain hold their forward-fill value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .cohort import Episode, EpisodeSet
from .errors import ContractError, DataError, DimensionError
from .trajectory import TrajectoryModel, build_input, build_inputs, hidden_and_cells, predict

PER_STEP = 0
TIME_PASSING = 1
KIND_NAMES = {PER_STEP: "per-step", TIME_PASSING: "time-passing"}
KIND_CODES = {v: k for k, v in KIND_NAMES.items()}


def stop_action(K: int) -> int:
    """Index of the stop action when there are ``K`` orderable tests."""
    return K


def action_cost(a: int, K: int) -> float:
    return 0.0 if a == stop_action(K) else 1.0


@dataclass
class RewardParams:
    lam: float = 0.0
    gamma: float = 0.99
    sign_flip_time_passing: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ContractError(f"cost coefficient must be nonnegative, got {self.lam}")
        if not 0 < self.gamma <= 1:
            raise ContractError(f"gamma must lie in (0, 1], got {self.gamma}")


def outcome_sign(y: int) -> float:
    """``(-1)**(y + 1)``: +1 for deaths, -1 for survivors."""
    return 1.0 if int(y) == 1 else -1.0


def signed_change(p_before: float, p_after: float, y: int) -> float:
    return outcome_sign(y) * (p_after - p_before)


def delta_p(model: TrajectoryModel, X_before: np.ndarray, X_after: np.ndarray, y: int) -> float:
    """Outcome-signed probability change between two stay inputs."""
    return signed_change(float(predict(model, X_before)), float(predict(model, X_after)), y)


def reward(delta_p: float, a: int, params: RewardParams, K: int = 38) -> float:
    return delta_p - params.lam * action_cost(a, K)


@dataclass(frozen=True)
class StateVec:
    h: np.ndarray
    ordered: np.ndarray  # uint8 multihot of length K

    @property
    def K(self) -> int:
        return len(self.ordered)

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.h, self.ordered.astype(np.float64)])

    @property
    def ordered_set(self) -> frozenset:
        return frozenset(int(i) for i in np.flatnonzero(self.ordered))

    def __len__(self) -> int:
        return len(self.h) + len(self.ordered)


def multihot(ordered, K: int) -> np.ndarray:
    bits = np.zeros(K, dtype=np.uint8)
    for a in ordered:
        a = int(a)
        if a == K:
            raise ContractError("the stop action cannot be part of an ordered-test set")
        if not 0 <= a < K:
            raise ContractError(f"test index {a} outside 0..{K - 1}")
        bits[a] = 1
    return bits


def build_state(h: np.ndarray, ordered, K: int = 38) -> StateVec:
    return StateVec(np.asarray(h, dtype=np.float64), multihot(ordered, K))


@dataclass
class ExperienceTuple:
    s: StateVec
    a: int
    r: float
    s_next: StateVec
    terminal: bool
    kind: str
    stay_id: int = -1
    t: int = -1


@dataclass
class StayExperience:
    """Column-oriented tuples of one stay; states reference ``t`` rows of the stay's h table."""

    stay_id: int
    s_t: np.ndarray
    s_bits: np.ndarray
    a: np.ndarray
    dp: np.ndarray
    cost: np.ndarray
    sn_t: np.ndarray
    sn_bits: np.ndarray
    terminal: np.ndarray
    kind: np.ndarray
    t: np.ndarray

    def __len__(self) -> int:
        return len(self.a)


def physician_log(episode: Episode, orderable: Sequence[int]) -> List[List[int]]:
    """Per-step logged test sets: every orderable signal observed in that row."""
    mask = episode.observed_mask[:, list(orderable)]
    return [np.flatnonzero(row).tolist() for row in mask]


def stay_rng(seed: int, stay_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, 3, int(stay_id)])


def _initial_padded(hs: np.ndarray) -> np.ndarray:
    """Prepend the zero initial state to per-prefix states (T, H) -> (T+1, H)."""
    return np.concatenate([np.zeros((1,) + hs.shape[1:]), hs], axis=0)


def _validate_log(episode: Episode, log: Sequence[Sequence[int]], orderable: Sequence[int]):
    T = episode.X_tv.shape[0]
    if len(log) != T:
        raise DataError(f"stay {episode.stay_id}: ordered log has {len(log)} steps, expected {T}")
    K = len(orderable)
    for t, tests in enumerate(log):
        if len(set(tests)) != len(tests):
            raise DataError(f"stay {episode.stay_id}, t={t}: duplicate tests in the ordered log")
        for a in tests:
            if not 0 <= a < K or not episode.observed_mask[t, orderable[a]]:
                raise DataError(
                    f"ordered log references an unobserved test: stay {episode.stay_id}, "
                    f"t={t}, test {a}"
                )


def stay_experience(model: TrajectoryModel, episode: Episode, hs: np.ndarray, cs: np.ndarray,
                    ordered_log: Sequence[Sequence[int]], rng: np.random.Generator,
                    orderable: Sequence[int], sign_flip_time_passing: bool = False
                    ) -> StayExperience:
    """Core of experience generation for one stay.

    ``hs``/``cs`` are the model's hidden/cell states after each prefix, shape
    (T, H), as returned by :func:`hidden_and_cells` for this stay.
    """
    _validate_log(episode, ordered_log, orderable)
    X = build_input(episode)
    T = X.shape[0]
    K = len(orderable)
    orderable = np.asarray(orderable, dtype=np.int64)
    H_all = _initial_padded(hs)
    C_all = _initial_padded(cs)
    p_all = model.head_prob(H_all)
    sgn = outcome_sign(episode.y)

    shuffled = [list(rng.permutation(np.asarray(sorted(tests), dtype=np.int64)))
                for tests in ordered_log]

    # one LSTM step per (t, v) substitution variant, batched over the stay
    rows, prev_t = [], []
    for t, seq in enumerate(shuffled):
        if not seq:
            continue
        row = X[t].copy()
        cols = orderable[np.asarray(seq)]
        row[cols] = X[t - 1, cols] if t > 0 else 0.0
        rows.append(row.copy())
        for k, col in enumerate(cols):
            row[col] = X[t, col]
            rows.append(row.copy())
        prev_t.extend([t] * (len(seq) + 1))
    if rows:
        idx = np.asarray(prev_t)
        h_var, _ = model.lstm.step(np.asarray(rows), H_all[idx], C_all[idx])
        p_var = model.head_prob(h_var)
    else:
        p_var = np.empty(0)

    n = sum(len(s) + 1 for s in shuffled)
    out = dict(
        s_t=np.empty(n, np.int64), s_bits=np.zeros((n, K), np.uint8), a=np.empty(n, np.int64),
        dp=np.empty(n), cost=np.empty(n), sn_t=np.empty(n, np.int64),
        sn_bits=np.zeros((n, K), np.uint8), terminal=np.zeros(n, bool),
        kind=np.empty(n, np.int8), t=np.empty(n, np.int64),
    )
    k = 0
    var_pos = 0
    for t, seq in enumerate(shuffled):
        # time-passing
        tp = p_all[t + 1] - p_all[t]
        out["s_t"][k] = t
        out["s_bits"][k, seq] = 1
        out["a"][k] = K
        out["dp"][k] = sgn * tp if sign_flip_time_passing else tp
        out["cost"][k] = 0.0
        out["sn_t"][k] = t + 1
        out["terminal"][k] = t == T - 1
        out["kind"][k] = TIME_PASSING
        out["t"][k] = t
        k += 1
        if not seq:
            continue
        p_chain = p_var[var_pos:var_pos + len(seq) + 1]
        var_pos += len(seq) + 1
        for v, a in enumerate(seq):
            out["s_t"][k] = t
            out["s_bits"][k, seq[:v]] = 1
            out["a"][k] = a
            out["dp"][k] = sgn * (p_chain[v + 1] - p_chain[v])
            out["cost"][k] = 1.0
            out["sn_t"][k] = t
            out["sn_bits"][k, seq[:v + 1]] = 1
            out["kind"][k] = PER_STEP
            out["t"][k] = t
            k += 1
    return StayExperience(episode.stay_id, **out)


def gen_experience(model: TrajectoryModel, episode: Episode,
                   ordered_log: Optional[Sequence[Sequence[int]]], params: RewardParams,
                   rng: np.random.Generator, orderable: Optional[Sequence[int]] = None
                   ) -> List[ExperienceTuple]:
    """Experience tuples of one stay, time-passing tuple first within each step."""
    if orderable is None:
        orderable = range(episode.X_tv.shape[1])
    orderable = list(orderable)
    if ordered_log is None:
        ordered_log = physician_log(episode, orderable)
    X = build_input(episode)
    hs, cs = hidden_and_cells(model, X[None])
    ex = stay_experience(model, episode, hs[0], cs[0], ordered_log, rng, orderable,
                         params.sign_flip_time_passing)
    H_all = _initial_padded(hs[0])
    K = len(orderable)
    tuples = []
    for i in range(len(ex)):
        r = ex.dp[i] - params.lam * ex.cost[i]
        tuples.append(ExperienceTuple(
            StateVec(H_all[ex.s_t[i]], ex.s_bits[i]), int(ex.a[i]), float(r),
            StateVec(H_all[ex.sn_t[i]], ex.sn_bits[i]), bool(ex.terminal[i]),
            KIND_NAMES[int(ex.kind[i])], episode.stay_id, int(ex.t[i]),
        ))
    assert all(len(tp.s) == hs.shape[-1] + K for tp in tuples)
    return tuples


# --------------------------------------------------------------------------
# replay buffer
# --------------------------------------------------------------------------

def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass
class ReplayBuffer:
    """Immutable struct-of-arrays experience store.

    States are stored as an index into ``h_table`` plus a multihot block, so
    each materialised state is ``concat(h_table[idx], bits)``. ``dp`` is the
    benefit part of the reward; ``r = dp - lam * cost``.
    """

    h_table: np.ndarray
    s_h: np.ndarray
    s_bits: np.ndarray
    a: np.ndarray
    dp: np.ndarray
    cost: np.ndarray
    sn_h: np.ndarray
    sn_bits: np.ndarray
    terminal: np.ndarray
    kind: np.ndarray
    stay_id: np.ndarray
    t: np.ndarray
    lam: float = 0.0
    r: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.h_table = np.asarray(self.h_table, dtype=np.float64)
        self.s_h = np.asarray(self.s_h, dtype=np.int64)
        self.sn_h = np.asarray(self.sn_h, dtype=np.int64)
        self.s_bits = np.asarray(self.s_bits, dtype=np.uint8)
        self.sn_bits = np.asarray(self.sn_bits, dtype=np.uint8)
        self.a = np.asarray(self.a, dtype=np.int64)
        self.dp = np.asarray(self.dp, dtype=np.float64)
        self.cost = np.asarray(self.cost, dtype=np.float64)
        self.terminal = np.asarray(self.terminal, dtype=bool)
        self.kind = np.asarray(self.kind, dtype=np.int8)
        self.stay_id = np.asarray(self.stay_id, dtype=np.int64)
        self.t = np.asarray(self.t, dtype=np.int64)
        n = len(self.a)
        for name in ("s_h", "s_bits", "dp", "cost", "sn_h", "sn_bits", "terminal", "kind",
                     "stay_id", "t"):
            if len(getattr(self, name)) != n:
                raise DimensionError(f"buffer column {name} has length {len(getattr(self, name))}, "
                                     f"expected {n}")
        if self.s_bits.shape[1] != self.sn_bits.shape[1]:
            raise DimensionError("s and s' multihot blocks differ in width")
        if self.r is None:
            self.r = self.dp - self.lam * self.cost
        for name in ("h_table", "s_h", "s_bits", "a", "dp", "cost", "sn_h", "sn_bits",
                     "terminal", "kind", "stay_id", "t", "r"):
            setattr(self, name, _freeze(getattr(self, name)))

    def __len__(self) -> int:
        return len(self.a)

    @property
    def K(self) -> int:
        return self.s_bits.shape[1]

    @property
    def H(self) -> int:
        return self.h_table.shape[1]

    @property
    def state_dim(self) -> int:
        return self.H + self.K

    @property
    def n_actions(self) -> int:
        return self.K + 1

    def states(self, idx) -> np.ndarray:
        return np.concatenate([self.h_table[self.s_h[idx]], self.s_bits[idx]], axis=1)

    def next_states(self, idx) -> np.ndarray:
        return np.concatenate([self.h_table[self.sn_h[idx]], self.sn_bits[idx]], axis=1)

    def with_lambda(self, lam: float) -> "ReplayBuffer":
        """Same tuples with rewards recomputed for cost coefficient ``lam`` (arrays shared)."""
        if lam < 0:
            raise ContractError(f"cost coefficient must be nonnegative, got {lam}")
        return ReplayBuffer(self.h_table, self.s_h, self.s_bits, self.a, self.dp, self.cost,
                            self.sn_h, self.sn_bits, self.terminal, self.kind, self.stay_id,
                            self.t, lam)

    def index_by_kind(self, kind: str) -> np.ndarray:
        return np.flatnonzero(self.kind == KIND_CODES[kind])

    def index_by_stay(self) -> Dict[int, np.ndarray]:
        order = np.argsort(self.stay_id, kind="stable")
        ids, starts = np.unique(self.stay_id[order], return_index=True)
        return {int(i): order[s:e] for i, s, e in
                zip(ids, starts, list(starts[1:]) + [len(order)])}

    def tuple(self, i: int) -> ExperienceTuple:
        return ExperienceTuple(
            StateVec(self.h_table[self.s_h[i]], self.s_bits[i]), int(self.a[i]), float(self.r[i]),
            StateVec(self.h_table[self.sn_h[i]], self.sn_bits[i]), bool(self.terminal[i]),
            KIND_NAMES[int(self.kind[i])], int(self.stay_id[i]), int(self.t[i]),
        )

    def fingerprint(self) -> str:
        import hashlib
        hsh = hashlib.sha256()
        for name in ("h_table", "s_h", "s_bits", "a", "r", "sn_h", "sn_bits", "terminal", "kind",
                     "stay_id", "t"):
            hsh.update(np.ascontiguousarray(getattr(self, name)).tobytes())
        return hsh.hexdigest()

    @classmethod
    def from_arrays(cls, states: np.ndarray, actions, rewards, next_states, terminal, K: int,
                    kind=None) -> "ReplayBuffer":
        """Build a buffer from dense states whose last ``K`` columns are the multihot block."""
        states = np.asarray(states, dtype=np.float64)
        next_states = np.asarray(next_states, dtype=np.float64)
        n = len(states)
        H = states.shape[1] - K
        table = np.concatenate([states[:, :H], next_states[:, :H]], axis=0)
        table, inv = np.unique(table, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        actions = np.asarray(actions, dtype=np.int64)
        if kind is None:
            kind = np.where(actions == K, TIME_PASSING, PER_STEP)
        rewards = np.asarray(rewards, dtype=np.float64)
        return cls(table, inv[:n], states[:, H:].astype(np.uint8), actions, rewards,
                   np.zeros(n), inv[n:], next_states[:, H:].astype(np.uint8), terminal, kind,
                   np.zeros(n, np.int64), np.zeros(n, np.int64), 0.0)


def concat_stays(parts: Sequence[StayExperience], h_blocks: Sequence[np.ndarray], lam: float
                 ) -> ReplayBuffer:
    """Assemble per-stay experience (with their (T+1, H) state tables) into one buffer."""
    offsets = np.cumsum([0] + [len(b) for b in h_blocks[:-1]])
    h_table = np.concatenate(h_blocks, axis=0) if h_blocks else np.zeros((0, 0))

    def cat(name, off=False):
        cols = [getattr(p, name) + (o if off else 0) for p, o in zip(parts, offsets)]
        return np.concatenate(cols) if cols else np.zeros(0)

    stay = np.concatenate([np.full(len(p), p.stay_id, np.int64) for p in parts])
    return ReplayBuffer(h_table, cat("s_t", True), np.concatenate([p.s_bits for p in parts]),
                        cat("a"), cat("dp"), cat("cost"), cat("sn_t", True),
                        np.concatenate([p.sn_bits for p in parts]), cat("terminal"),
                        cat("kind"), stay, cat("t"), lam)


def build_buffer(model: TrajectoryModel, episodes: EpisodeSet, params: RewardParams, seed: int,
                 orderable: Optional[Sequence[int]] = None,
                 logs: Optional[Sequence[Sequence[Sequence[int]]]] = None,
                 chunk: int = 256) -> ReplayBuffer:
    """Experience for every stay of ``episodes``; per-stay shuffles seeded by (seed, stay_id)."""
    if orderable is None:
        orderable = list(range(episodes.m))
    orderable = list(orderable)
    parts, blocks = [], []
    X_all = build_inputs(episodes)
    for start in range(0, len(episodes), chunk):
        sl = slice(start, start + chunk)
        hs, cs = hidden_and_cells(model, X_all[sl])
        for j in range(hs.shape[0]):
            i = start + j
            ep = episodes.episode(i)
            log = physician_log(ep, orderable) if logs is None else logs[i]
            parts.append(stay_experience(model, ep, hs[j], cs[j], log,
                                         stay_rng(seed, ep.stay_id), orderable,
                                         params.sign_flip_time_passing))
            blocks.append(_initial_padded(hs[j]))
    return concat_stays(parts, blocks, params.lam)


# --------------------------------------------------------------------------
# buffer directory format
# --------------------------------------------------------------------------

def save_buffer(buffer: ReplayBuffer, out_dir) -> None:
    """Write ``hidden.npy``, ``tuples.jsonl`` and ``meta.json`` into ``out_dir``.

    Each line of ``tuples.jsonl`` is one experience record; states are given
    as ``{"h": row of hidden.npy, "tests": [...]}``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "hidden.npy", np.asarray(buffer.h_table, dtype="<f8"))
    s_tests = [np.flatnonzero(b).tolist() for b in buffer.s_bits]
    sn_tests = [np.flatnonzero(b).tolist() for b in buffer.sn_bits]
    with open(out / "tuples.jsonl", "w", encoding="utf-8") as fh:
        for i in range(len(buffer)):
            fh.write(json.dumps({
                "s": {"h": int(buffer.s_h[i]), "tests": s_tests[i]},
                "a": int(buffer.a[i]),
                "r": float(buffer.r[i]),
                "dp": float(buffer.dp[i]),
                "s_next": {"h": int(buffer.sn_h[i]), "tests": sn_tests[i]},
                "terminal": bool(buffer.terminal[i]),
                "kind": KIND_NAMES[int(buffer.kind[i])],
                "stay_id": int(buffer.stay_id[i]),
                "t": int(buffer.t[i]),
            }) + "\n")
    (out / "meta.json").write_text(json.dumps({"version": 1, "K": buffer.K, "H": buffer.H,
                                               "lambda": buffer.lam, "n": len(buffer)}))


def load_buffer(in_dir) -> ReplayBuffer:
    d = Path(in_dir)
    meta = json.loads((d / "meta.json").read_text())
    K = int(meta["K"])
    h_table = np.load(d / "hidden.npy")
    cols = {k: [] for k in ("s_h", "a", "r", "dp", "sn_h", "terminal", "kind", "stay_id", "t")}
    s_tests, sn_tests = [], []
    with open(d / "tuples.jsonl", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            cols["s_h"].append(rec["s"]["h"])
            cols["sn_h"].append(rec["s_next"]["h"])
            s_tests.append(rec["s"]["tests"])
            sn_tests.append(rec["s_next"]["tests"])
            for k in ("a", "r", "dp", "terminal", "stay_id", "t"):
                cols[k].append(rec[k])
            cols["kind"].append(KIND_CODES[rec["kind"]])
    n = len(cols["a"])
    s_bits = np.zeros((n, K), np.uint8)
    sn_bits = np.zeros((n, K), np.uint8)
    for i, (a, b) in enumerate(zip(s_tests, sn_tests)):
        s_bits[i, a] = 1
        sn_bits[i, b] = 1
    a = np.asarray(cols["a"], dtype=np.int64)
    cost = np.where(a == K, 0.0, 1.0)
    return ReplayBuffer(h_table, cols["s_h"], s_bits, a, cols["dp"], cost, cols["sn_h"], sn_bits,
                        cols["terminal"], cols["kind"], cols["stay_id"], cols["t"],
                        float(meta["lambda"]), np.asarray(cols["r"], dtype=np.float64))
