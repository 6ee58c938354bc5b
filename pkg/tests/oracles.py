"""Independent reference implementations used as test oracles.

Everything here is written with plain loops or closed forms and shares no
code with the package besides the objects being probed.
"""

from __future__ import annotations

import math

import numpy as np


def naive_matmul(a, b):
    n, k = len(a), len(a[0])
    m = len(b[0])
    out = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            s = 0.0
            for r in range(k):
                s += a[i][r] * b[r][j]
            out[i][j] = s
    return np.array(out)


def central_diff(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Gradient of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def lstm_reference(X, Wx, Wh, b, h0=None, c0=None):
    """Scalar-loop LSTM, gate blocks (input, forget, cell, output)."""
    T, n = X.shape
    H = Wh.shape[0]
    h = np.zeros(H) if h0 is None else np.array(h0, float)
    c = np.zeros(H) if c0 is None else np.array(c0, float)
    hs, cs = [], []
    for t in range(T):
        z = [b[0, j] + sum(X[t, r] * Wx[r, j] for r in range(n))
             + sum(h[r] * Wh[r, j] for r in range(H)) for j in range(4 * H)]
        hn, cn = np.zeros(H), np.zeros(H)
        for k in range(H):
            i_g = sigmoid(z[k])
            f_g = sigmoid(z[H + k])
            g_g = math.tanh(z[2 * H + k])
            o_g = sigmoid(z[3 * H + k])
            cn[k] = f_g * c[k] + i_g * g_g
            hn[k] = o_g * math.tanh(cn[k])
        h, c = hn, cn
        hs.append(h.copy())
        cs.append(c.copy())
    return np.array(hs), np.array(cs)


def bucket_means(events, T, m, interval):
    """Brute-force per-cell means over (time, signal, value) events."""
    values = np.full((T, m), np.nan)
    mask = np.zeros((T, m), np.uint8)
    for t in range(T):
        for i in range(m):
            got = [v for (tt, s, v) in events
                   if s == i and t * interval <= tt < (t + 1) * interval]
            if got:
                values[t, i] = sum(got) / len(got)
                mask[t, i] = 1
    return values, mask


def scan_fill(values, mask, mean, std):
    """Single pass normalise-then-forward-fill reference."""
    T, m = values.shape
    out = np.zeros((T, m))
    for i in range(m):
        last = 0.0
        for t in range(T):
            if mask[t, i]:
                last = (values[t, i] - mean[i]) / std[i]
            out[t, i] = last
    return out


def expectile_bisection(sample, tau, lo=None, hi=None, iters=200):
    """Root of tau*E[(x-e)+] = (1-tau)*E[(e-x)+] by bisection."""
    xs = list(sample)
    lo = min(xs) if lo is None else lo
    hi = max(xs) if hi is None else hi

    def foc(e):
        up = sum(x - e for x in xs if x > e)
        down = sum(e - x for x in xs if x < e)
        return tau * up - (1 - tau) * down

    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if foc(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def value_iteration(R, P, terminal, gamma, iters=2000):
    """Tabular Q* for deterministic next-state table ``P`` (S x A)."""
    S, A = R.shape
    Q = np.zeros((S, A))
    for _ in range(iters):
        V = Q.max(axis=1)
        Q = R + gamma * np.where(terminal, 0.0, V[P])
    return Q


def is_dominated(i, pts):
    ci, gi = pts[i]
    for j, (cj, gj) in enumerate(pts):
        if j != i and cj <= ci and gj >= gi and (cj < ci or gj > gi):
            return True
    return False
