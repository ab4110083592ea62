"""Batch training loop shared by every regime.

Software mode writes Adam deltas straight into the (clamped) weights.
Device mode routes synaptic-weight deltas through per-layer synapse
arrays: deltas accumulate, ``commit`` fires thresholded pulses once per
batch, and the network weights are read back from device conductances.
Decays and temporal weights always update in full precision.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from ..device_model import REFERENCE_PARAMS, FerroKernelParams
from ..optimizer import Adam, LrSchedule, apply_software, cosine_lr
from ..snn.network import SYNAPTIC_LAYERS, NetworkState, forward, loss_and_grads, predict, softmax_xent
from ..weight_fabric import DifferentialSynapseArray, ProgrammingPolicy, event_report

log = logging.getLogger(__name__)


@dataclass
class TrainSettings:
    epochs: int = 20
    batch_size: int = 64
    lr_initial: float = 1e-4
    lr_final: float = 1e-5
    micro_batch: int = 16
    mode: str = "software"                       # or "device"
    policy: ProgrammingPolicy = field(default_factory=ProgrammingPolicy)
    kernel: FerroKernelParams = REFERENCE_PARAMS
    write_noise_std: float = 0.0
    trainable_layers: tuple[str, ...] | None = None   # None: everything
    train_time_weights: bool = True
    time_weight_lr_scale: float = 1.0            # w_ts step = scale * lr

    def schedule(self) -> LrSchedule:
        return LrSchedule(self.lr_initial, self.lr_final, self.epochs)


def trainable_params(net: NetworkState, layers: Iterable[str] | None, time_weights: bool = True) -> set[str]:
    layers = SYNAPTIC_LAYERS if layers is None else tuple(layers)
    unknown = set(layers) - set(SYNAPTIC_LAYERS)
    if unknown:
        raise ValueError(f"unknown layers {sorted(unknown)}")
    names = set()
    for l in layers:
        names |= {l, f"{l}.beta", f"{l}.gamma"}
    if time_weights:
        names.add("w_ts")
    return names


def evaluate(net: NetworkState, x: np.ndarray, y: np.ndarray, micro_batch: int = 32) -> dict:
    """Accuracy (percent), mean loss and predictions on a labelled set."""
    preds, losses, ties = [], [], 0
    for a in range(0, len(y), micro_batch):
        rec = forward(x[a:a + micro_batch], net)
        per, _ = softmax_xent(rec.y, y[a:a + micro_batch])
        losses.append(per)
        preds.append(predict(rec.y))
        ties += int(np.sum(rec.y[:, 0] == rec.y[:, 1])) if rec.y.shape[1] == 2 else 0
    if not len(y):
        return {"accuracy": float("nan"), "loss": float("nan"), "pred": np.zeros(0, int), "ties": 0}
    pred = np.concatenate(preds)
    if ties:
        log.info("%d tied score(s) resolved to class 0", ties)
    return {"accuracy": 100.0 * float(np.mean(pred == y)), "loss": float(np.concatenate(losses).mean()),
            "pred": pred, "ties": ties}


class Trainer:
    def __init__(self, net: NetworkState, settings: TrainSettings, rng: np.random.Generator):
        self.net = net
        self.s = settings
        self.rng = rng
        self.adam = Adam()
        self.need = trainable_params(net, settings.trainable_layers, settings.train_time_weights)
        self.bounds = {n: b.bound for n, b in net.spec.bounds().items()}
        self.arrays: dict[str, DifferentialSynapseArray] = {}
        self.batches_seen = 0
        if settings.mode == "device":
            self.to_device()
        elif settings.mode != "software":
            raise ValueError(f"unknown mode {settings.mode!r}")

    def to_device(self) -> None:
        """Load current weights into synapse arrays and read them back."""
        bounds = self.net.spec.bounds()
        for name in SYNAPTIC_LAYERS:
            arr = DifferentialSynapseArray.from_weights(name, self.net.params[name], bounds[name])
            self.arrays[name] = arr
            self.net.params[name][...] = arr.weights()

    @property
    def device(self) -> bool:
        return self.s.mode == "device"

    def events(self) -> dict:
        return event_report(self.arrays.values())

    def step(self, xb: np.ndarray, yb: np.ndarray, lr: float) -> tuple[float, int, dict[str, tuple[int, int]]]:
        """One optimizer step on a batch.

        Returns ``(mean loss, correct predictions, {layer: (ltp, ltd)} pulses fired)``.
        """
        B = len(yb)
        mb = self.s.micro_batch
        total = None
        loss = 0.0
        correct = 0
        for a in range(0, B, mb):
            l, g, rec = loss_and_grads(xb[a:a + mb], yb[a:a + mb], self.net, scale=1.0 / B, need=self.need)
            loss += l
            correct += int(np.sum(predict(rec.y) == yb[a:a + mb]))
            if total is None:
                total = g
            else:
                for k in total:
                    total[k] = total[k] + g[k]
        deltas = self.adam.step(total, lr)
        if "w_ts" in deltas and self.s.time_weight_lr_scale != 1.0:
            deltas["w_ts"] = deltas["w_ts"] * self.s.time_weight_lr_scale
        fired: dict[str, tuple[int, int]] = {}
        if self.device:
            soft = {k: d for k, d in deltas.items() if k not in self.arrays}
            for name, arr in self.arrays.items():
                if name not in deltas:
                    continue
                arr.accumulate(deltas[name])
                ev = arr.commit(self.s.policy, self.s.kernel, self.rng, self.s.write_noise_std)
                fired[name] = (int(ev.ltp.size), int(ev.ltd.size))
                self.net.params[name][...] = arr.weights()
            apply_software(self.net.params, soft, {})
        else:
            apply_software(self.net.params, deltas, self.bounds)
        self.net.clamp_decays()
        self.batches_seen += 1
        return loss, correct, fired

    def train_epoch(self, x: np.ndarray, y: np.ndarray, epoch: int, on_batch=None) -> dict:
        """Shuffle, step through every batch, report running train metrics.

        ``on_batch(epoch, batch_index, fired)`` is called after each step.
        """
        t0 = time.time()
        lr = cosine_lr(min(epoch, self.s.epochs), self.s.schedule())
        order = self.rng.permutation(len(y))
        loss_sum, correct = 0.0, 0
        for b, a in enumerate(range(0, len(y), self.s.batch_size)):
            idx = np.sort(order[a:a + self.s.batch_size])
            loss, ok, fired = self.step(x[idx], y[idx], lr)
            loss_sum += loss * len(idx)
            correct += ok
            if on_batch is not None:
                on_batch(epoch, b, fired)
        n = max(len(y), 1)
        out = {"epoch": epoch, "lr": lr, "train_loss": loss_sum / n,
               "train_accuracy": 100.0 * correct / n, "seconds": time.time() - t0}
        if self.device:
            out["events"] = self.events()["total"]
        return out
