"""Leaky integrate-and-fire dynamics with a rectangular surrogate derivative.

Per neuron and timestep::

    i_t = beta * i_{t-1} + I_t
    v_t = gamma * v_{t-1} * (1 - s_{t-1}) + i_t
    s_t = H(v_t - v_th)

Sequence helpers work time-major: arrays are ``(T, ...)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SurrogateParams:
    amplitude: float = 1.0
    window: float = 0.25

    def __post_init__(self):
        if not (self.amplitude > 0 and self.window > 0):
            raise ValueError("surrogate amplitude and window must be > 0")


@dataclass(frozen=True)
class NeuronConfig:
    """Constants shared by every spiking layer.

    ``relaxed=True`` swaps the Heaviside for the clipped ramp whose
    derivative is exactly the rectangular surrogate; only meant for
    finite-difference checks.
    """

    v_th: float = 0.3
    surrogate: SurrogateParams = SurrogateParams()
    beta_init: float = 0.5
    gamma_init: float = 0.5
    relaxed: bool = False


@dataclass
class LifParams:
    beta: float
    gamma: float
    v_th: float


@dataclass
class LifState:
    i: np.ndarray
    v: np.ndarray
    s: np.ndarray

    @classmethod
    def zeros(cls, shape) -> "LifState":
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape))


def surrogate_grad(v, sp: SurrogateParams, v_th: float):
    """``A`` where ``|v - v_th| < g``, else 0 (boundary excluded)."""
    inside = np.abs(np.asarray(v, dtype=float) - v_th) < sp.window
    out = np.where(inside, sp.amplitude, 0.0)
    return float(out) if np.ndim(v) == 0 else out


def spike(v, cfg: NeuronConfig):
    if cfg.relaxed:
        g = cfg.surrogate.window
        return cfg.surrogate.amplitude * np.clip(v - cfg.v_th + g, 0.0, 2.0 * g)
    return (v >= cfg.v_th).astype(float)


def lif_step(state: LifState, syn_input, params: LifParams) -> LifState:
    """Advance one timestep (Heaviside spikes, inclusive threshold)."""
    i = params.beta * state.i + syn_input
    v = params.gamma * state.v * (1.0 - state.s) + i
    s = (v >= params.v_th).astype(float)
    return LifState(i, v, s)


def lif_sequence(current: np.ndarray, beta: float, gamma: float, cfg: NeuronConfig):
    """Run a layer over time from rest; returns ``(i, v, s)`` each shaped like ``current``."""
    i = np.empty_like(current)
    v = np.empty_like(current)
    s = np.empty_like(current)
    i_prev = np.zeros_like(current[0])
    v_prev = np.zeros_like(current[0])
    s_prev = np.zeros_like(current[0])
    for t in range(current.shape[0]):
        i_prev = beta * i_prev + current[t]
        v_prev = gamma * v_prev * (1.0 - s_prev) + i_prev
        s_prev = spike(v_prev, cfg)
        i[t], v[t], s[t] = i_prev, v_prev, s_prev
    return i, v, s


def lif_sequence_backward(
    grad_s: np.ndarray | None,
    grad_v: np.ndarray | None,
    i: np.ndarray,
    v: np.ndarray,
    s: np.ndarray,
    beta: float,
    gamma: float,
    cfg: NeuronConfig,
):
    """BPTT through :func:`lif_sequence`.

    ``grad_s``/``grad_v`` are the loss gradients arriving directly on the
    spikes / membrane potentials (either may be None). Returns
    ``(grad_current, grad_beta, grad_gamma)``.
    """
    T = v.shape[0]
    sp = cfg.surrogate
    grad_cur = np.empty_like(v)
    gv_next = np.zeros_like(v[0])
    gi_next = np.zeros_like(v[0])
    g_beta = 0.0
    g_gamma = 0.0
    for t in range(T - 1, -1, -1):
        gs = -gamma * v[t] * gv_next
        if grad_s is not None:
            gs = gs + grad_s[t]
        gv = gs * surrogate_grad(v[t], sp, cfg.v_th) + gamma * (1.0 - s[t]) * gv_next
        if grad_v is not None:
            gv = gv + grad_v[t]
        gi = gv + beta * gi_next
        grad_cur[t] = gi
        if t > 0:
            g_beta += float(np.sum(gi * i[t - 1]))
            g_gamma += float(np.sum(gv * v[t - 1] * (1.0 - s[t - 1])))
        gv_next, gi_next = gv, gi
    return grad_cur, g_beta, g_gamma


def recurrent_sequence(feed: np.ndarray, w_rec: np.ndarray, beta: float, gamma: float, cfg: NeuronConfig):
    """LIF layer whose input is ``feed_t + s_{t-1} @ w_rec.T``; ``feed`` is ``(T, B, H)``."""
    i = np.empty_like(feed)
    v = np.empty_like(feed)
    s = np.empty_like(feed)
    i_prev = np.zeros_like(feed[0])
    v_prev = np.zeros_like(feed[0])
    s_prev = np.zeros_like(feed[0])
    for t in range(feed.shape[0]):
        i_prev = beta * i_prev + feed[t] + s_prev @ w_rec.T
        v_prev = gamma * v_prev * (1.0 - s_prev) + i_prev
        s_prev = spike(v_prev, cfg)
        i[t], v[t], s[t] = i_prev, v_prev, s_prev
    return i, v, s


def recurrent_sequence_backward(grad_s, i, v, s, w_rec, beta, gamma, cfg: NeuronConfig):
    """BPTT for :func:`recurrent_sequence`; returns ``(grad_feed, grad_w_rec, grad_beta, grad_gamma)``."""
    T = v.shape[0]
    sp = cfg.surrogate
    grad_feed = np.empty_like(v)
    grad_w = np.zeros_like(w_rec)
    gv_next = np.zeros_like(v[0])
    gi_next = np.zeros_like(v[0])
    g_beta = 0.0
    g_gamma = 0.0
    for t in range(T - 1, -1, -1):
        gs = grad_s[t] - gamma * v[t] * gv_next + gi_next @ w_rec
        gv = gs * surrogate_grad(v[t], sp, cfg.v_th) + gamma * (1.0 - s[t]) * gv_next
        gi = gv + beta * gi_next
        grad_feed[t] = gi
        if t > 0:
            grad_w += gi.T @ s[t - 1]
            g_beta += float(np.sum(gi * i[t - 1]))
            g_gamma += float(np.sum(gv * v[t - 1] * (1.0 - s[t - 1])))
        gv_next, gi_next = gv, gi
    return grad_feed, grad_w, g_beta, g_gamma
