"""Layers with explicit forward/backward passes.

Each layer instance caches the activations of its most recent ``forward``
call; ``backward`` consumes that cache and accumulates parameter gradients
into the owning :class:`ParamTensor` objects.
"""

from __future__ import annotations

from typing import Iterator, Optional, Tuple

import numpy as np
from scipy.special import expit

from ..errors import DimensionError, NumericError, StateError
from .tensor import DTYPE, Module, ParamTensor, as_matrix, glorot_uniform

GATES = ("input", "forget", "cell", "output")


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


class Affine(Module):
    """``y = x W + b`` with ``W`` of shape (n_in, n_out) and ``b`` of shape (1, n_out)."""

    def __init__(self, n_in: int, n_out: int, rng: Optional[np.random.Generator] = None,
                 name: str = "affine"):
        self.name = name
        if rng is None:
            w = np.zeros((n_in, n_out))
        else:
            w = glorot_uniform(rng, n_in, n_out)
        self.W = ParamTensor(w)
        self.b = ParamTensor(np.zeros((1, n_out)))
        self._x: Optional[np.ndarray] = None

    @property
    def n_in(self) -> int:
        return self.W.shape[0]

    @property
    def n_out(self) -> int:
        return self.W.shape[1]

    def named_parameters(self) -> Iterator[Tuple[str, ParamTensor]]:
        yield f"{self.name}.W", self.W
        yield f"{self.name}.b", self.b

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = as_matrix(x)
        if x.shape[1] != self.W.shape[0]:
            raise DimensionError(
                f"{self.name}: input shape {x.shape} does not conform to weight shape {self.W.shape}"
            )
        self._x = x
        return x @ self.W.value + self.b.value

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise StateError(f"{self.name}: backward called without a cached forward pass")
        grad_out = as_matrix(grad_out, "grad_out")
        if grad_out.shape != (self._x.shape[0], self.W.shape[1]):
            raise DimensionError(
                f"{self.name}: grad_out shape {grad_out.shape} does not match output shape "
                f"{(self._x.shape[0], self.W.shape[1])}"
            )
        self.W.grad += self._x.T @ grad_out
        self.b.grad += grad_out.sum(axis=0, keepdims=True)
        return grad_out @ self.W.value.T


class ReLU:
    def __init__(self):
        self._mask: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._mask is None:
            raise StateError("relu: backward called without a cached forward pass")
        return np.where(self._mask, grad_out, 0.0)


class LSTM(Module):
    """Single-layer LSTM with gate blocks ordered (input, forget, cell, output).

    Weights: ``Wx`` (n_in, 4H), ``Wh`` (H, 4H), ``b`` (1, 4H).
    """

    def __init__(self, n_in: int, hidden: int, rng: Optional[np.random.Generator] = None,
                 name: str = "lstm", forget_bias: float = 1.0):
        self.name = name
        self.hidden = hidden
        H = hidden
        if rng is None:
            wx = np.zeros((n_in, 4 * H))
            wh = np.zeros((H, 4 * H))
            b = np.zeros((1, 4 * H))
        else:
            wx = glorot_uniform(rng, n_in, 4 * H)
            wh = glorot_uniform(rng, H, 4 * H)
            b = np.zeros((1, 4 * H))
            b[0, H:2 * H] = forget_bias
        self.Wx = ParamTensor(wx)
        self.Wh = ParamTensor(wh)
        self.b = ParamTensor(b)
        self._cache = None

    @property
    def n_in(self) -> int:
        return self.Wx.shape[0]

    def named_parameters(self) -> Iterator[Tuple[str, ParamTensor]]:
        yield f"{self.name}.Wx", self.Wx
        yield f"{self.name}.Wh", self.Wh
        yield f"{self.name}.b", self.b

    def _check_gates(self, z: np.ndarray) -> None:
        if np.all(np.isfinite(z)):
            return
        H = self.hidden
        for k, gate in enumerate(GATES):
            if not np.all(np.isfinite(z[..., k * H:(k + 1) * H])):
                raise NumericError(f"{self.name}: non-finite pre-activation in the {gate} gate")

    def _gates(self, z: np.ndarray):
        H = self.hidden
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = sigmoid(z[:, 3 * H:])
        return i, f, g, o

    def step(self, x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray
             ) -> Tuple[np.ndarray, np.ndarray]:
        """One cell update on a batch of rows; nothing is cached."""
        x_t = as_matrix(x_t, "x_t")
        if x_t.shape[1] != self.n_in:
            raise DimensionError(
                f"{self.name}: input shape {x_t.shape} does not conform to weight shape {self.Wx.shape}"
            )
        z = x_t @ self.Wx.value + h_prev @ self.Wh.value + self.b.value
        self._check_gates(z)
        i, f, g, o = self._gates(z)
        c = f * c_prev + i * g
        h = o * np.tanh(c)
        return h, c

    def forward(self, X: np.ndarray, h0: Optional[np.ndarray] = None,
                c0: Optional[np.ndarray] = None) -> np.ndarray:
        """Run a batch of sequences ``X`` of shape (B, T, n_in); returns hidden states (B, T, H)."""
        X = np.asarray(X, dtype=DTYPE)
        if X.ndim == 2:
            X = X[None]
        if X.ndim != 3 or X.shape[2] != self.n_in:
            raise DimensionError(
                f"{self.name}: input shape {X.shape} does not conform to weight shape {self.Wx.shape}"
            )
        B, T, _ = X.shape
        H = self.hidden
        h = np.zeros((B, H)) if h0 is None else np.array(h0, dtype=DTYPE)
        c = np.zeros((B, H)) if c0 is None else np.array(c0, dtype=DTYPE)
        zx = (X.reshape(B * T, -1) @ self.Wx.value).reshape(B, T, 4 * H) + self.b.value
        hs = np.empty((B, T, H))
        h_prev = np.empty((B, T, H))
        cs = np.empty((B, T, H))
        c_prev = np.empty((B, T, H))
        acts = np.empty((B, T, 4 * H))
        for t in range(T):
            z = zx[:, t] + h @ self.Wh.value
            self._check_gates(z)
            i, f, g, o = self._gates(z)
            h_prev[:, t] = h
            c_prev[:, t] = c
            c = f * c + i * g
            h = o * np.tanh(c)
            acts[:, t, :H] = i
            acts[:, t, H:2 * H] = f
            acts[:, t, 2 * H:3 * H] = g
            acts[:, t, 3 * H:] = o
            hs[:, t] = h
            cs[:, t] = c
        self._cache = (X, h_prev, c_prev, cs, acts)
        return hs

    def backward(self, dhs: np.ndarray, dc_last: Optional[np.ndarray] = None) -> np.ndarray:
        """Backpropagate through time given dL/dh_t for every step; returns dL/dX."""
        if self._cache is None:
            raise StateError(f"{self.name}: backward called without a cached forward pass")
        X, h_prev, c_prev, cs, acts = self._cache
        B, T, _ = X.shape
        H = self.hidden
        if dhs.shape != (B, T, H):
            raise DimensionError(f"{self.name}: dhs shape {dhs.shape} does not match {(B, T, H)}")
        dz = np.empty((B, T, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H)) if dc_last is None else np.array(dc_last, dtype=DTYPE)
        Wh_T = self.Wh.value.T
        for t in range(T - 1, -1, -1):
            i = acts[:, t, :H]
            f = acts[:, t, H:2 * H]
            g = acts[:, t, 2 * H:3 * H]
            o = acts[:, t, 3 * H:]
            tc = np.tanh(cs[:, t])
            dh = dhs[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz[:, t, :H] = dc * g * i * (1.0 - i)
            dz[:, t, H:2 * H] = dc * c_prev[:, t] * f * (1.0 - f)
            dz[:, t, 2 * H:3 * H] = dc * i * (1.0 - g * g)
            dz[:, t, 3 * H:] = dh * tc * o * (1.0 - o)
            dh_next = dz[:, t] @ Wh_T
            dc_next = dc * f
        dz2 = dz.reshape(B * T, 4 * H)
        self.Wx.grad += X.reshape(B * T, -1).T @ dz2
        self.Wh.grad += h_prev.reshape(B * T, H).T @ dz2
        self.b.grad += dz2.sum(axis=0, keepdims=True)
        return (dz2 @ self.Wx.value.T).reshape(B, T, -1)


def lstm_cell_step(x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray, params: LSTM
                   ) -> Tuple[np.ndarray, np.ndarray]:
    """Functional form of a single LSTM step for vectors or row batches."""
    squeeze = np.ndim(x_t) == 1
    h, c = params.step(as_matrix(x_t), as_matrix(h_prev), as_matrix(c_prev))
    if squeeze:
        return h[0], c[0]
    return h, c
