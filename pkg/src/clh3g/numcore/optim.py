"""Gradient-based optimisers."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from ..errors import ConfigError
from .tensor import Parameter


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray | None],
    state: dict,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update applied in place to ``params``.

    ``state`` holds per-parameter first/second moments and step counts and is
    created lazily; parameters whose gradient is None are left untouched.
    """
    if not lr > 0:
        raise ConfigError(f"lr must be > 0, got {lr}")
    m_all = state.setdefault("m", {})
    v_all = state.setdefault("v", {})
    t_all = state.setdefault("t", {})
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = m_all.get(name)
        if m is None:
            m = m_all[name] = np.zeros_like(p)
            v_all[name] = np.zeros_like(p)
            t_all[name] = 0
        v = v_all[name]
        t = t_all[name] = t_all[name] + 1
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Optimizer:
    """Interface: subclasses implement ``step(lr)`` and state (de)serialisation."""

    def __init__(self, named_params: list[tuple[str, Parameter]]):
        self.named_params = list(named_params)

    def step(self, lr: float) -> None:
        raise NotImplementedError

    def state_arrays(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        raise NotImplementedError


class Adam(Optimizer):
    def __init__(self, named_params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(named_params)
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ConfigError(f"adam betas must lie in [0, 1), got ({beta1}, {beta2})")
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state: dict = {}

    def step(self, lr: float) -> None:
        params = {name: p.data for name, p in self.named_params}
        grads = {name: p.grad for name, p in self.named_params}
        adam_step(params, grads, self.state, lr, self.beta1, self.beta2, self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, m in self.state.get("m", {}).items():
            out[f"m/{name}"] = m
            out[f"v/{name}"] = self.state["v"][name]
            out[f"t/{name}"] = np.array([float(self.state["t"][name])])
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.state = {"m": {}, "v": {}, "t": {}}
        for key, value in arrays.items():
            kind, name = key.split("/", 1)
            if kind == "t":
                self.state["t"][name] = int(value[0])
            else:
                self.state[kind][name] = np.array(value, dtype=np.float64)
