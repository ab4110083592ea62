"""Adam with bias correction, cosine-annealed learning rate, bound clamping.

:meth:`Adam.step` returns the deltas instead of applying them, so the same
update can either be written straight into the weights (software mode) or
fed to a device accumulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in {name!r}")
        self.name = name


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8


class Adam:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps_hat: float = 1e-8):
        self.state = AdamState(beta1=beta1, beta2=beta2, eps_hat=eps_hat)

    def step(self, grads: Mapping[str, np.ndarray], lr: float) -> dict[str, np.ndarray]:
        """One Adam update; returns ``-lr * m_hat / (sqrt(v_hat) + eps)`` per parameter."""
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(name)
        st = self.state
        st.t += 1
        b1, b2 = st.beta1, st.beta2
        c1 = 1.0 - b1 ** st.t
        c2 = 1.0 - b2 ** st.t
        deltas = {}
        for name, g in grads.items():
            g = np.asarray(g, dtype=float)
            m = st.m.get(name)
            if m is None:
                m = st.m[name] = np.zeros_like(g)
                st.v[name] = np.zeros_like(g)
            v = st.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            deltas[name] = -lr * (m / c1) / (np.sqrt(v / c2) + st.eps_hat)
        return deltas

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.state.m:
            out[f"m/{name}"] = self.state.m[name]
            out[f"v/{name}"] = self.state.v[name]
        return out

    def load_arrays(self, arrays: Mapping[str, np.ndarray], t: int) -> None:
        self.state.t = t
        for key, arr in arrays.items():
            kind, name = key.split("/", 1)
            getattr(self.state, kind)[name] = np.array(arr, dtype=float)


@dataclass(frozen=True)
class LrSchedule:
    lr_initial: float = 1e-4
    lr_final: float = 1e-5
    total_epochs: int = 20


def cosine_lr(epoch: int, schedule: LrSchedule) -> float:
    """Per-epoch cosine annealing from ``lr_initial`` to ``lr_final``."""
    if not 0 <= epoch <= schedule.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {schedule.total_epochs}]")
    if schedule.total_epochs == 0:
        return schedule.lr_initial
    cos = math.cos(math.pi * epoch / schedule.total_epochs)
    return schedule.lr_final + 0.5 * (schedule.lr_initial - schedule.lr_final) * (1.0 + cos)


def apply_software(
    weights: dict[str, np.ndarray],
    deltas: Mapping[str, np.ndarray],
    bounds: Mapping[str, float],
) -> dict[str, np.ndarray]:
    """``w <- clip(w + delta, -bound, bound)`` in place; unbounded names are not clipped."""
    for name, d in deltas.items():
        w = weights[name]
        w += d
        if name in bounds:
            b = float(bounds[name])
            np.clip(w, -b, b, out=w)
    return weights
