"""Convolutional-recurrent spiking network with hand-derived BPTT.

Topology (full-scale sizes)::

    input 1x10x11 -> CONV1 3x3x64 -> CONV2 3x3x128 -> AvgPool 2x2
      -> CONV3 3x3x256 -> TC1 (3 taps, 256) -> R1 (256, recurrent)
      -> FC1 256 -> FC2 2 -> temporal weighting -> class scores

Every layer except the pool is a LIF population with its own scalar
``beta``/``gamma``. Convolutions are valid (no padding) and bias-free.
The readout ``o(t)`` is the membrane potential of FC2.

Activations are time-major and channels-last internally:
``(T, B, H, W, C)`` for the conv stack and ``(T, B, N)`` afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..tensorio import load_tensors, save_tensors
from ..weight_fabric import LayerBound
from .lif import (
    NeuronConfig,
    SurrogateParams,
    lif_sequence,
    lif_sequence_backward,
    recurrent_sequence,
    recurrent_sequence_backward,
)

SYNAPTIC_LAYERS = ("conv1", "conv2", "conv3", "tc1", "r1", "fc1", "fc2")
SPIKING_LAYERS = SYNAPTIC_LAYERS


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple[int, int, int] = (1, 10, 11)
    conv_channels: tuple[int, int, int] = (64, 128, 256)
    conv_kernels: tuple[int, int, int] = (3, 3, 3)
    pool: int = 2
    tc_taps: int = 3
    hidden: int = 256
    n_classes: int = 2
    timesteps: int = 160

    @classmethod
    def full(cls, timesteps: int = 160) -> "NetworkSpec":
        return cls(timesteps=timesteps)

    @classmethod
    def scaled(cls, width_divisor: int = 8, timesteps: int = 160, **kw) -> "NetworkSpec":
        """Same topology with every width divided by ``width_divisor``."""
        base = cls()
        chans = tuple(max(1, c // width_divisor) for c in base.conv_channels)
        return cls(conv_channels=chans, hidden=max(1, base.hidden // width_divisor),
                   timesteps=timesteps, **kw)

    # -- derived geometry -------------------------------------------------
    def feature_shapes(self) -> dict[str, tuple[int, ...]]:
        """Output size per layer in (C, H, W) / (N,) order."""
        c0, h, w = self.input_shape
        k1, k2, k3 = self.conv_kernels
        c1, c2, c3 = self.conv_channels
        h1, w1 = h - k1 + 1, w - k1 + 1
        h2, w2 = h1 - k2 + 1, w1 - k2 + 1
        hp, wp = h2 // self.pool, w2 // self.pool
        h3, w3 = hp - k3 + 1, wp - k3 + 1
        if min(h1, w1, h2, w2, hp, wp, h3, w3) < 1:
            raise ValueError(f"input {self.input_shape} too small for kernels {self.conv_kernels}")
        return {
            "conv1": (c1, h1, w1),
            "conv2": (c2, h2, w2),
            "pool": (c2, hp, wp),
            "conv3": (c3, h3, w3),
            "tc1": (self.hidden,),
            "r1": (self.hidden,),
            "fc1": (self.hidden,),
            "fc2": (self.n_classes,),
        }

    @property
    def features(self) -> int:
        return int(np.prod(self.feature_shapes()["conv3"]))

    def weight_shapes(self) -> dict[str, tuple[int, ...]]:
        c0 = self.input_shape[0]
        c1, c2, c3 = self.conv_channels
        k1, k2, k3 = self.conv_kernels
        H = self.hidden
        return {
            "conv1": (c1, c0, k1, k1),
            "conv2": (c2, c1, k2, k2),
            "conv3": (c3, c2, k3, k3),
            "tc1": (self.tc_taps, H, self.features),
            "r1": (H, H),
            "fc1": (H, H),
            "fc2": (self.n_classes, H),
        }

    def bounds(self) -> dict[str, LayerBound]:
        """Fan-in bounds. TC1 counts one tap's fan-in, giving 1/16 at full scale."""
        ws = self.weight_shapes()
        return {
            "conv1": LayerBound(int(np.prod(ws["conv1"][1:]))),
            "conv2": LayerBound(int(np.prod(ws["conv2"][1:]))),
            "conv3": LayerBound(int(np.prod(ws["conv3"][1:]))),
            "tc1": LayerBound(self.features),
            "r1": LayerBound(self.hidden),
            "fc1": LayerBound(self.hidden),
            "fc2": LayerBound(self.hidden),
        }

    def census(self) -> dict:
        shapes = self.feature_shapes()
        ws = self.weight_shapes()
        bounds = self.bounds()
        rows = {}
        for name in SYNAPTIC_LAYERS:
            rows[name] = {
                "output": shapes[name],
                "synaptic": int(np.prod(ws[name])),
                "neurons": int(np.prod(shapes[name])),
                "bound": bounds[name].bound,
            }
        return {
            "layers": rows,
            "synaptic_total": sum(r["synaptic"] for r in rows.values()),
            "neuron_total": sum(r["neurons"] for r in rows.values()),
            "time_weights": self.timesteps,
        }

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class NetworkState:
    """All trainable tensors of one network.

    ``params`` keys: layer names for synaptic weights, ``"<layer>.beta"``
    and ``"<layer>.gamma"`` for decays (0-d arrays) and ``"w_ts"``.
    """

    spec: NetworkSpec
    neuron: NeuronConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, spec: NetworkSpec, rng: np.random.Generator,
             neuron: NeuronConfig | None = None) -> "NetworkState":
        neuron = neuron or NeuronConfig()
        params = {}
        bounds = spec.bounds()
        for name, shape in spec.weight_shapes().items():
            b = bounds[name].bound
            params[name] = rng.uniform(-b, b, size=shape)
        for name in SPIKING_LAYERS:
            params[f"{name}.beta"] = np.array(neuron.beta_init)
            params[f"{name}.gamma"] = np.array(neuron.gamma_init)
        # plain temporal mean: keeps the class scores O(1) at any T
        params["w_ts"] = np.full(spec.timesteps, 1.0 / spec.timesteps)
        return cls(spec, neuron, params)

    def copy(self) -> "NetworkState":
        return NetworkState(self.spec, self.neuron, {k: v.copy() for k, v in self.params.items()})

    def with_neuron(self, **changes) -> "NetworkState":
        return NetworkState(self.spec, replace(self.neuron, **changes), self.params)

    def decay(self, layer: str) -> tuple[float, float]:
        return float(self.params[f"{layer}.beta"]), float(self.params[f"{layer}.gamma"])

    def clamp_decays(self) -> None:
        for name in SPIKING_LAYERS:
            for suffix in (".beta", ".gamma"):
                p = self.params[name + suffix]
                p[...] = np.clip(p, 0.0, 1.0)

    # -- checkpoints --------------------------------------------------------
    def save(self, prefix: str | Path, meta: dict | None = None) -> None:
        bounds = self.spec.bounds()
        extra = {n: {"bound": bounds[n].bound, "fan_in": bounds[n].fan_in} for n in SYNAPTIC_LAYERS}
        m = {"spec": self.spec.to_dict(),
             "neuron": {"v_th": self.neuron.v_th,
                        "surrogate_amplitude": self.neuron.surrogate.amplitude,
                        "surrogate_window": self.neuron.surrogate.window,
                        "beta_init": self.neuron.beta_init,
                        "gamma_init": self.neuron.gamma_init}}
        m.update(meta or {})
        save_tensors(prefix, self.params, extra=extra, meta=m)

    @classmethod
    def load(cls, prefix: str | Path) -> tuple["NetworkState", dict]:
        tensors, manifest = load_tensors(prefix)
        meta = manifest["meta"]
        spec = NetworkSpec.from_dict(meta["spec"])
        n = meta["neuron"]
        neuron = NeuronConfig(v_th=n["v_th"],
                              surrogate=SurrogateParams(n["surrogate_amplitude"], n["surrogate_window"]),
                              beta_init=n["beta_init"], gamma_init=n["gamma_init"])
        return cls(spec, neuron, {k: np.array(v) for k, v in tensors.items()}), meta


# ---------------------------------------------------------------------------
# primitives


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """``(N, H, W, C)`` -> ``(N, Ho, Wo, C*k*k)`` patches ordered (C, kh, kw)."""
    win = sliding_window_view(x, (k, k), axis=(1, 2))  # N, Ho, Wo, C, k, k
    n, ho, wo = win.shape[:3]
    return win.reshape(n, ho, wo, -1)


def conv_forward(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Valid cross-correlation; ``x`` is ``(N, H, W, C)``, ``w`` is ``(Cout, C, k, k)``."""
    cols = _im2col(x, w.shape[-1])
    return cols @ w.reshape(w.shape[0], -1).T


def conv_backward(x: np.ndarray, w: np.ndarray, g_out: np.ndarray, need_input: bool = True):
    k = w.shape[-1]
    cols = _im2col(x, k)
    g2 = g_out.reshape(-1, w.shape[0])
    g_w = (g2.T @ cols.reshape(-1, cols.shape[-1])).reshape(w.shape)
    if not need_input:
        return g_w, None
    g_cols = (g_out @ w.reshape(w.shape[0], -1)).reshape(*g_out.shape[:3], w.shape[1], k, k)
    g_x = np.zeros_like(x)
    ho, wo = g_out.shape[1:3]
    for di in range(k):
        for dj in range(k):
            g_x[:, di:di + ho, dj:dj + wo, :] += g_cols[..., di, dj]
    return g_w, g_x


def avgpool_forward(x: np.ndarray, p: int) -> np.ndarray:
    n, h, w, c = x.shape
    hp, wp = h // p, w // p
    return x[:, :hp * p, :wp * p, :].reshape(n, hp, p, wp, p, c).mean(axis=(2, 4))


def avgpool_backward(g_out: np.ndarray, in_shape: tuple[int, ...], p: int) -> np.ndarray:
    n, hp, wp, c = g_out.shape
    g = np.zeros(in_shape)
    spread = np.repeat(np.repeat(g_out, p, axis=1), p, axis=2) / (p * p)
    g[:, :hp * p, :wp * p, :] = spread
    return g


def temporal_aggregate(logits: np.ndarray, w_ts: np.ndarray) -> np.ndarray:
    """Class scores ``y = sum_t w_ts[t] * o(t)``; ``logits`` is ``(T, ...)``."""
    logits = np.asarray(logits, dtype=float)
    w_ts = np.asarray(w_ts, dtype=float)
    if logits.shape[0] != w_ts.shape[0]:
        raise ValueError(f"{logits.shape[0]} timesteps but {w_ts.shape[0]} temporal weights")
    return np.tensordot(w_ts, logits, axes=(0, 0))


def predict(y: np.ndarray) -> np.ndarray:
    """Argmax over classes; ties resolve to the lowest class index."""
    return np.argmax(y, axis=-1)


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class ForwardRecord:
    x: np.ndarray                      # (T, B, H, W, C0)
    states: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]  # layer -> (i, v, s)
    pooled: np.ndarray                 # (T, B, Hp, Wp, C2)
    logits: np.ndarray                 # (T, B, n_classes)
    y: np.ndarray                      # (B, n_classes)

    def spikes(self, layer: str) -> np.ndarray:
        return self.states[layer][2]

    def spike_rates(self) -> dict[str, float]:
        return {k: float(v[2].mean()) for k, v in self.states.items()}


def _as_batch(x: np.ndarray, spec: NetworkSpec) -> np.ndarray:
    """Accept ``(T,H,W)``, ``(T,C,H,W)`` or ``(B,T,C,H,W)``; return ``(T,B,H,W,C)``."""
    x = np.asarray(x, dtype=float)
    c0, h, w = spec.input_shape
    if x.ndim == 3:
        x = x[:, None]
    if x.ndim == 4:
        x = x[None]
    if x.ndim != 5 or x.shape[2:] != (c0, h, w):
        raise ValueError(f"input shape {x.shape} incompatible with {(spec.timesteps, c0, h, w)}")
    if x.shape[1] != spec.timesteps:
        raise ValueError(f"input has {x.shape[1]} timesteps, network expects {spec.timesteps}")
    if x.shape[1] < 3:
        raise ValueError("at least 3 timesteps are required")
    return np.ascontiguousarray(x.transpose(1, 0, 3, 4, 2))


def forward(x: np.ndarray, net: NetworkState) -> ForwardRecord:
    """Run the network on one trial or a batch."""
    spec, cfg, P = net.spec, net.neuron, net.params
    xb = _as_batch(x, spec)
    T, B = xb.shape[:2]
    states = {}

    def frames(a):
        return a.reshape(T * B, *a.shape[2:])

    def unframes(a):
        return a.reshape(T, B, *a.shape[1:])

    cur = unframes(conv_forward(frames(xb), P["conv1"]))
    states["conv1"] = lif_sequence(cur, *net.decay("conv1"), cfg)
    cur = unframes(conv_forward(frames(states["conv1"][2]), P["conv2"]))
    states["conv2"] = lif_sequence(cur, *net.decay("conv2"), cfg)
    pooled = unframes(avgpool_forward(frames(states["conv2"][2]), spec.pool))
    cur = unframes(conv_forward(frames(pooled), P["conv3"]))
    states["conv3"] = lif_sequence(cur, *net.decay("conv3"), cfg)

    s3 = states["conv3"][2].reshape(T, B, -1)
    K = spec.tc_taps
    pad = np.concatenate([np.zeros((K - 1, B, s3.shape[2])), s3], axis=0)
    cur = np.zeros((T, B, spec.hidden))
    for k in range(K):
        cur += pad[K - 1 - k: K - 1 - k + T] @ P["tc1"][k].T
    states["tc1"] = lif_sequence(cur, *net.decay("tc1"), cfg)
    states["r1"] = recurrent_sequence(states["tc1"][2], P["r1"], *net.decay("r1"), cfg)
    cur = states["r1"][2] @ P["fc1"].T
    states["fc1"] = lif_sequence(cur, *net.decay("fc1"), cfg)
    cur = states["fc1"][2] @ P["fc2"].T
    states["fc2"] = lif_sequence(cur, *net.decay("fc2"), cfg)

    logits = states["fc2"][1]
    y = temporal_aggregate(logits, P["w_ts"])
    return ForwardRecord(xb, states, pooled, logits, y)


def softmax_xent(y: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample cross-entropy and its gradient w.r.t. ``y``."""
    z = y - y.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    labels = np.asarray(labels, dtype=int)
    idx = np.arange(y.shape[0])
    loss = -logp[idx, labels]
    g = np.exp(logp)
    g[idx, labels] -= 1.0
    return loss, g


def backward(rec: ForwardRecord, net: NetworkState, grad_y: np.ndarray,
             need: set[str] | None = None) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given ``dL/dy`` (shape ``(B, n_classes)``).

    ``need`` restricts which parameter gradients are returned; layers below
    the lowest needed one are skipped entirely.
    """
    spec, cfg, P = net.spec, net.neuron, net.params
    T, B = rec.x.shape[:2]
    grads: dict[str, np.ndarray] = {}
    order = ["w_ts", "fc2", "fc1", "r1", "tc1", "conv3", "conv2", "conv1"]
    if need is None:
        lowest = len(order) - 1
    else:
        layers_needed = {n.split(".")[0] for n in need}
        lowest = max(i for i, n in enumerate(order) if n in layers_needed)

    def put(layer, gw, gb, gg):
        grads[layer] = gw
        grads[f"{layer}.beta"] = np.array(gb)
        grads[f"{layer}.gamma"] = np.array(gg)

    grads["w_ts"] = np.einsum("tbc,bc->t", rec.logits, grad_y)
    grad_o = P["w_ts"][:, None, None] * grad_y[None]
    if lowest < 1:
        return _filter(grads, need)

    i, v, s = rec.states["fc2"]
    g_cur, gb, gg = lif_sequence_backward(None, grad_o, i, v, s, *net.decay("fc2"), cfg)
    s_in = rec.states["fc1"][2]
    put("fc2", np.einsum("tbo,tbh->oh", g_cur, s_in), gb, gg)
    g_s = g_cur @ P["fc2"]
    if lowest < 2:
        return _filter(grads, need)

    i, v, s = rec.states["fc1"]
    g_cur, gb, gg = lif_sequence_backward(g_s, None, i, v, s, *net.decay("fc1"), cfg)
    s_in = rec.states["r1"][2]
    put("fc1", np.einsum("tbo,tbh->oh", g_cur, s_in), gb, gg)
    g_s = g_cur @ P["fc1"]
    if lowest < 3:
        return _filter(grads, need)

    i, v, s = rec.states["r1"]
    g_feed, gw, gb, gg = recurrent_sequence_backward(g_s, i, v, s, P["r1"], *net.decay("r1"), cfg)
    put("r1", gw, gb, gg)
    if lowest < 4:
        return _filter(grads, need)

    i, v, s = rec.states["tc1"]
    g_cur, gb, gg = lif_sequence_backward(g_feed, None, i, v, s, *net.decay("tc1"), cfg)
    s3 = rec.states["conv3"][2].reshape(T, B, -1)
    K = spec.tc_taps
    pad = np.concatenate([np.zeros((K - 1, B, s3.shape[2])), s3], axis=0)
    g_pad = np.zeros_like(pad)
    gw = np.empty_like(P["tc1"])
    for k in range(K):
        sl = slice(K - 1 - k, K - 1 - k + T)
        gw[k] = np.einsum("tbo,tbf->of", g_cur, pad[sl])
        g_pad[sl] += g_cur @ P["tc1"][k]
    put("tc1", gw, gb, gg)
    if lowest < 5:
        return _filter(grads, need)
    g_s = g_pad[K - 1:].reshape(rec.states["conv3"][2].shape)

    def frames(a):
        return a.reshape(T * B, *a.shape[2:])

    i, v, s = rec.states["conv3"]
    g_cur, gb, gg = lif_sequence_backward(g_s, None, i, v, s, *net.decay("conv3"), cfg)
    gw, g_pool = conv_backward(frames(rec.pooled), P["conv3"], frames(g_cur), need_input=lowest >= 6)
    put("conv3", gw, gb, gg)
    if lowest < 6:
        return _filter(grads, need)

    s2 = rec.states["conv2"][2]
    g_s = avgpool_backward(g_pool, frames(s2).shape, spec.pool).reshape(s2.shape)
    i, v, s = rec.states["conv2"]
    g_cur, gb, gg = lif_sequence_backward(g_s, None, i, v, s, *net.decay("conv2"), cfg)
    gw, g_s1 = conv_backward(frames(rec.states["conv1"][2]), P["conv2"], frames(g_cur),
                             need_input=lowest >= 7)
    put("conv2", gw, gb, gg)
    if lowest < 7:
        return _filter(grads, need)

    s1 = rec.states["conv1"][2]
    g_s = g_s1.reshape(s1.shape)
    i, v, s = rec.states["conv1"]
    g_cur, gb, gg = lif_sequence_backward(g_s, None, i, v, s, *net.decay("conv1"), cfg)
    gw, _ = conv_backward(frames(rec.x), P["conv1"], frames(g_cur), need_input=False)
    put("conv1", gw, gb, gg)
    return _filter(grads, need)


def _filter(grads, need):
    if need is None:
        return grads
    return {k: v for k, v in grads.items() if k in need}


def loss_and_grads(x: np.ndarray, labels, net: NetworkState, scale: float | None = None,
                   need: set[str] | None = None):
    """Forward + backward on a batch.

    The loss is the per-trial cross-entropy summed and multiplied by
    ``scale`` (default ``1/B``, the batch mean). Returns
    ``(loss, grads, record)``.
    """
    rec = forward(x, net)
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    per, g_y = softmax_xent(rec.y, labels)
    if scale is None:
        scale = 1.0 / len(labels)
    grads = backward(rec, net, g_y * scale, need=need)
    return float(per.sum() * scale), grads, rec


def trial_gradients(trial_input: np.ndarray, net: NetworkState, target: int):
    """Gradients of one trial's cross-entropy for every trainable tensor."""
    _, grads, _ = loss_and_grads(trial_input, [target], net)
    return grads
