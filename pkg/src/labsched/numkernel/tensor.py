"""Parameter containers and small array helpers.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 and rank 2.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Iterator, Tuple

import numpy as np

from ..errors import DimensionError, NumericError

DTYPE = np.float64


def as_matrix(x, name: str = "input") -> np.ndarray:
    """Coerce ``x`` to a 2-D float64 array (vectors become one row)."""
    arr = np.asarray(x, dtype=DTYPE)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")


@dataclass
class ParamTensor:
    """A trainable matrix with its accumulated gradient."""

    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.value = np.array(self.value, dtype=DTYPE)
        if self.value.ndim != 2:
            raise DimensionError(f"parameter must be 2-D, got shape {self.value.shape}")
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise DimensionError(
                f"grad shape {self.grad.shape} does not match value shape {self.value.shape}"
            )

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


def glorot_uniform(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


class Module:
    """Mixin for anything owning named parameters.

    Subclasses implement ``named_parameters`` yielding ``(name, ParamTensor)``
    pairs in a stable order; everything else (state dicts, copying, soft
    updates, gradient zeroing) is derived from that.
    """

    def named_parameters(self) -> Iterator[Tuple[str, ParamTensor]]:
        raise NotImplementedError

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return OrderedDict((n, p.value.copy()) for n, p in self.named_parameters())

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise DimensionError(f"state dict is missing parameters {sorted(missing)}")
        for name, p in own.items():
            v = np.asarray(state[name], dtype=DTYPE)
            if v.shape != p.value.shape:
                raise DimensionError(
                    f"parameter {name}: checkpoint shape {v.shape} vs model shape {p.value.shape}"
                )
            p.value[...] = v

    def copy_from(self, other: "Module") -> None:
        for (_, dst), (_, src) in zip(self.named_parameters(), other.named_parameters()):
            dst.value[...] = src.value

    def soft_update_from(self, other: "Module", tau: float) -> None:
        """Polyak averaging: ``self <- (1 - tau) * self + tau * other``."""
        for (_, dst), (_, src) in zip(self.named_parameters(), other.named_parameters()):
            dst.value *= 1.0 - tau
            dst.value += tau * src.value
