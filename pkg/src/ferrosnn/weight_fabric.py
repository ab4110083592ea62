"""Mapping between network weights and modeled ferroelectric devices.

A signed weight in ``[-bound, bound]`` is carried by one active device of
normalized conductance ``w_plus = 0.5 * w / bound + 0.5`` read against a
fixed mid-level reference device (0.5). Training deltas pile up in a
digital accumulator per synapse; a programming pulse is only issued when
the accumulator crosses an (asymmetric) threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .device_model import REFERENCE_PARAMS, FerroKernelParams, Polarity, apply_pulse

W_MINUS_REF = 0.5

# Threshold is a fraction of this many bounds; 2.0 means the full span [-bound, +bound].
RANGE_SPAN = 2.0


@dataclass(frozen=True)
class LayerBound:
    fan_in: int

    def __post_init__(self):
        if int(self.fan_in) != self.fan_in or self.fan_in < 1:
            raise ValueError(f"fan_in must be a positive integer, got {self.fan_in}")

    @property
    def bound(self) -> float:
        return 1.0 / math.sqrt(self.fan_in)


def _b(bound: LayerBound | float) -> float:
    return bound.bound if isinstance(bound, LayerBound) else float(bound)


def clamp_weights(w, bound: LayerBound | float):
    b = _b(bound)
    return np.clip(w, -b, b)


def map_to_device(w_snn, bound: LayerBound | float):
    """Network weight to active-device conductance (clamps to the bound first)."""
    b = _b(bound)
    w = np.clip(np.asarray(w_snn, dtype=float), -b, b)
    out = 0.5 * w / b + 0.5
    return float(out) if np.ndim(w_snn) == 0 else out


def map_from_device(w_plus, bound: LayerBound | float):
    """Inverse of :func:`map_to_device`."""
    b = _b(bound)
    out = (np.asarray(w_plus, dtype=float) - W_MINUS_REF) * 2.0 * b
    return float(out) if np.ndim(w_plus) == 0 else out


@dataclass(frozen=True)
class ProgrammingPolicy:
    epsilon: float = 0.025
    epsilon_asym: float = 1.0
    max_events_per_batch_per_weight: int = 1
    range_span: float = RANGE_SPAN

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not self.epsilon_asym > 0:
            raise ValueError("epsilon_asym must be > 0")
        if self.max_events_per_batch_per_weight < 1:
            raise ValueError("max_events_per_batch_per_weight must be >= 1")

    def thresholds(self, bound: LayerBound | float) -> tuple[float, float]:
        """``(ltp_threshold, ltd_threshold)`` in weight units, both positive."""
        eps_w = self.epsilon * self.range_span * _b(bound)
        return eps_w, eps_w * self.epsilon_asym


@dataclass
class CommitEvents:
    """Flat synapse indices programmed by one commit, in ascending order."""

    ltp: np.ndarray
    ltd: np.ndarray

    def __len__(self) -> int:
        return int(self.ltp.size + self.ltd.size)

    def as_tuples(self) -> list[tuple[int, str]]:
        ev = [(int(i), "LTP") for i in self.ltp] + [(int(i), "LTD") for i in self.ltd]
        return sorted(ev)


@dataclass
class DifferentialSynapseArray:
    """Device state of one layer plus its digital update accumulator."""

    name: str
    bound: LayerBound
    w_plus: np.ndarray
    acc: np.ndarray = None
    event_count_ltp: int = 0
    event_count_ltd: int = 0

    def __post_init__(self):
        self.w_plus = np.asarray(self.w_plus, dtype=float)
        if self.acc is None:
            self.acc = np.zeros_like(self.w_plus)
        if self.acc.shape != self.w_plus.shape:
            raise ValueError("acc and w_plus shapes differ")
        if self.w_plus.size and (self.w_plus.min() < 0 or self.w_plus.max() > 1):
            raise ValueError("w_plus must lie in [0, 1]")

    @classmethod
    def from_weights(cls, name: str, weights: np.ndarray, bound: LayerBound) -> "DifferentialSynapseArray":
        return cls(name, bound, map_to_device(np.asarray(weights, dtype=float), bound))

    @property
    def w_minus_ref(self) -> float:
        return W_MINUS_REF

    @property
    def shape(self) -> tuple[int, ...]:
        return self.w_plus.shape

    def weights(self) -> np.ndarray:
        return map_from_device(self.w_plus, self.bound)

    def accumulate(self, updates: np.ndarray) -> None:
        updates = np.asarray(updates, dtype=float)
        if updates.shape != self.acc.shape:
            raise ValueError(f"{self.name}: update shape {updates.shape} != {self.acc.shape}")
        self.acc += updates

    def commit(
        self,
        policy: ProgrammingPolicy,
        params: FerroKernelParams = REFERENCE_PARAMS,
        rng: np.random.Generator | None = None,
        write_noise_std: float = 0.0,
    ) -> CommitEvents:
        """Fire pulses where the accumulator crossed its threshold."""
        th_ltp, th_ltd = policy.thresholds(self.bound)
        flat_acc = self.acc.reshape(-1)
        flat_w = self.w_plus.reshape(-1)
        ltp = np.flatnonzero(flat_acc >= th_ltp)
        ltd = np.flatnonzero(flat_acc <= -th_ltd)
        kmax = policy.max_events_per_batch_per_weight
        for idx, pol, th in ((ltp, Polarity.LTP, th_ltp), (ltd, Polarity.LTD, th_ltd)):
            if idx.size == 0:
                continue
            if kmax == 1:
                n_pulses = np.ones(idx.size, dtype=np.int64)
            else:
                n_pulses = np.minimum(np.floor(np.abs(flat_acc[idx]) / th), kmax).astype(np.int64)
            w = flat_w[idx]
            for k in range(int(n_pulses.max())):
                live = n_pulses > k
                w[live] = apply_pulse(w[live], pol, params, write_noise_std, rng)
            flat_w[idx] = w
            flat_acc[idx] = 0.0
            if pol is Polarity.LTP:
                self.event_count_ltp += int(n_pulses.sum())
            else:
                self.event_count_ltd += int(n_pulses.sum())
        return CommitEvents(ltp, ltd)

    def reset_counters(self) -> None:
        self.event_count_ltp = 0
        self.event_count_ltd = 0


def event_report(arrays: Iterable[DifferentialSynapseArray]) -> dict:
    """Per-layer and total LTP/LTD event counts."""
    layers = {}
    tot_ltp = tot_ltd = 0
    for a in arrays:
        layers[a.name] = {"ltp": a.event_count_ltp, "ltd": a.event_count_ltd,
                          "total": a.event_count_ltp + a.event_count_ltd}
        tot_ltp += a.event_count_ltp
        tot_ltd += a.event_count_ltd
    return {"layers": layers, "ltp": tot_ltp, "ltd": tot_ltd, "total": tot_ltp + tot_ltd}


def quantize(weights, levels: int | None, bound: LayerBound | float):
    """Snap weights to ``levels`` uniformly spaced values over ``[-bound, bound]``.

    Ties at bin midpoints go to the level farther from zero (to ``+bound``
    for the symmetric two-level case). ``levels=None`` is a no-op.
    """
    w = np.asarray(weights, dtype=float)
    if levels is None:
        return w.copy()
    if int(levels) != levels or levels < 2:
        raise ValueError(f"levels must be an integer >= 2, got {levels}")
    b = _b(bound)
    w = np.clip(w, -b, b)
    step = 2.0 * b / (levels - 1)
    # work on magnitudes so the grid is exactly symmetric; rounding half up
    # on |w| is rounding away from zero, and zero counts as positive
    sign = np.where(w < 0, -1.0, 1.0)
    m = np.abs(w) / step
    fuzz = 1e-12  # midpoints computed in floating point still count as ties
    top = (levels - 1) / 2
    if levels % 2:
        pos = np.minimum(np.floor(m + 0.5 + fuzz), top)
    else:
        pos = np.minimum(np.floor(m + fuzz), top - 0.5) + 0.5
    mag = np.where(pos == top, b, pos * step)  # outermost level is exactly the bound
    return sign * mag + 0.0


class NoiseScaleError(ValueError):
    """Noise scale undefined because no non-zero weight level exists."""


def program_noise_sigma(weights, eta: float) -> float:
    w = np.asarray(weights, dtype=float)
    levels = np.unique(w[w != 0])
    if levels.size == 0:
        raise NoiseScaleError("all weights are zero; programming-noise scale is undefined")
    return float(eta * np.mean(np.abs(levels)))


def add_program_noise(weights, eta: float, rng: np.random.Generator, bound: LayerBound | float):
    """Gaussian programming noise scaled by the mean |non-zero level|, re-clamped."""
    if eta < 0:
        raise ValueError("eta must be >= 0")
    w = np.asarray(weights, dtype=float)
    if eta == 0:
        return w.copy()
    sigma = program_noise_sigma(w, eta)
    return clamp_weights(w + rng.normal(0.0, sigma, size=w.shape), bound)
