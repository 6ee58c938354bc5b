"""Adam with bias correction and global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Optional

import numpy as np

from ..errors import ConfigError, NumericError
from .tensor import ParamTensor


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param: ParamTensor, lr: float = 1e-3, beta1: float = 0.9,
                  beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        if not (0 < beta1 < 1 and 0 < beta2 < 1):
            raise ConfigError(f"Adam betas must lie in (0, 1), got {(beta1, beta2)}")
        return cls(np.zeros_like(param.value), np.zeros_like(param.value), 0, lr, beta1, beta2, eps)


def adam_update(param: ParamTensor, state: AdamState) -> ParamTensor:
    """Apply one bias-corrected Adam step in place, then zero the gradient."""
    g = param.grad
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite gradient passed to adam_update")
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * (g * g)
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    param.value -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    param.zero_grad()
    return param


def global_grad_norm(params: Iterable[ParamTensor]) -> float:
    return float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params)))


def clip_grad_norm(params: List[ParamTensor], max_norm: float) -> float:
    norm = global_grad_norm(params)
    if not np.isfinite(norm):
        raise NumericError("non-finite gradient norm")
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            p.grad *= scale
    return norm


class Adam:
    """Adam over a fixed list of parameters with clipping before every step."""

    def __init__(self, params: List[ParamTensor], lr: float = 1e-3,
                 clip_norm: Optional[float] = 5.0, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.clip_norm = clip_norm
        self.states = [AdamState.for_param(p, lr, beta1, beta2, eps) for p in self.params]

    @property
    def lr(self) -> float:
        return self.states[0].lr if self.states else 0.0

    def set_lr(self, lr: float) -> None:
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        for s in self.states:
            s.lr = lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> float:
        norm = (clip_grad_norm(self.params, self.clip_norm) if self.clip_norm is not None
                else global_grad_norm(self.params))
        for p, s in zip(self.params, self.states):
            adam_update(p, s)
        return norm
