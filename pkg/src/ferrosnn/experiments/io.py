"""Run directory layout: manifest, metrics stream, curve/event tables, checkpoints."""

from __future__ import annotations

import csv
import hashlib
import json
import platform
import time
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .. import __version__
from ..snn.network import NetworkState
from ..tensorio import load_tensors, save_tensors
from ..weight_fabric import DifferentialSynapseArray

EVENT_COLUMNS = ("phase", "fold", "epoch", "batch", "layer", "ltp_events", "ltd_events", "cumulative_total")
CURVE_COLUMNS = ("phase", "fold", "epoch", "lr", "train_loss", "train_accuracy",
                 "val_loss", "val_accuracy", "cumulative_events", "seconds")


def _default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (set, tuple)):
        return list(obj)
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, default=_default, sort_keys=True)


def digest_arrays(arrays: Iterable[np.ndarray]) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.shape).encode())
        h.update(a.astype(a.dtype.newbyteorder("<")).tobytes())
    return h.hexdigest()


def config_digest(config: Mapping[str, Any]) -> str:
    return hashlib.sha256(dumps(config).encode()).hexdigest()[:16]


class RunWriter:
    """Single writer for everything a run emits under ``out_dir``."""

    def __init__(self, out_dir: str | Path, resume: bool = False):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "checkpoints").mkdir(exist_ok=True)
        (self.dir / "figures").mkdir(exist_ok=True)
        if not resume:
            for name in ("metrics.jsonl", "curves.csv", "events.csv"):
                (self.dir / name).unlink(missing_ok=True)
        self._cumulative_events: dict[tuple, int] = {}

    def path(self, name: str) -> Path:
        return self.dir / name

    def write_manifest(self, config: Mapping[str, Any], dataset_digest: str, extra: Mapping | None = None) -> None:
        manifest = {
            "config": dict(config),
            "config_digest": config_digest(config),
            "seed": config.get("seed"),
            "code_version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "dataset_digest": dataset_digest,
            "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
        }
        manifest.update(extra or {})
        self.path("manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_default))

    def record(self, kind: str, **fields) -> None:
        with open(self.path("metrics.jsonl"), "a") as fh:
            fh.write(dumps({"kind": kind, **fields}) + "\n")

    def _append_csv(self, name: str, columns: Sequence[str], row: Mapping[str, Any]) -> None:
        p = self.path(name)
        new = not p.exists()
        with open(p, "a", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
            if new:
                w.writeheader()
            w.writerow({k: row.get(k, "") for k in columns})

    def curve(self, row: Mapping[str, Any]) -> None:
        self._append_csv("curves.csv", CURVE_COLUMNS, row)

    def events(self, key: tuple, epoch: int, batch: int, fired: Mapping[str, tuple[int, int]]) -> None:
        total = self._cumulative_events.get(key, 0)
        for layer, (ltp, ltd) in fired.items():
            total += ltp + ltd
            self._append_csv("events.csv", EVENT_COLUMNS,
                             {"phase": key[0], "fold": key[1], "epoch": epoch, "batch": batch, "layer": layer, "ltp_events": ltp,
                              "ltd_events": ltd, "cumulative_total": total})
        self._cumulative_events[key] = total

    def summary(self, data: Mapping[str, Any]) -> None:
        self.path("summary.json").write_text(json.dumps(data, indent=2, sort_keys=True, default=_default))


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def save_training_checkpoint(prefix: str | Path, trainer, epoch: int, history: list, extra: Mapping | None = None) -> None:
    """Network, Adam moments, device arrays and RNG state for exact resumption."""
    net: NetworkState = trainer.net
    net.save(prefix, meta={"epoch": epoch, **(extra or {})})
    tensors = dict(trainer.adam.state_arrays())
    for name, arr in trainer.arrays.items():
        tensors[f"w_plus/{name}"] = arr.w_plus
        tensors[f"acc/{name}"] = arr.acc
    meta = {
        "epoch": epoch,
        "adam_t": trainer.adam.state.t,
        "rng": trainer.rng.bit_generator.state,
        "counters": {n: [a.event_count_ltp, a.event_count_ltd] for n, a in trainer.arrays.items()},
        "history": history,
        "batches_seen": trainer.batches_seen,
    }
    save_tensors(str(prefix) + "-train", tensors, meta=json.loads(dumps(meta)))


def load_training_checkpoint(prefix: str | Path, trainer) -> tuple[int, list]:
    net, _ = NetworkState.load(prefix)
    trainer.net.params.update(net.params)
    tensors, manifest = load_tensors(str(prefix) + "-train")
    meta = manifest["meta"]
    trainer.adam.load_arrays({k: v for k, v in tensors.items() if k[:2] in ("m/", "v/")}, meta["adam_t"])
    bounds = trainer.net.spec.bounds()
    for name, (ltp, ltd) in meta["counters"].items():
        trainer.arrays[name] = DifferentialSynapseArray(
            name, bounds[name], tensors[f"w_plus/{name}"].copy(), tensors[f"acc/{name}"].copy(), ltp, ltd)
    trainer.rng.bit_generator.state = meta["rng"]
    trainer.batches_seen = meta["batches_seen"]
    return int(meta["epoch"]), list(meta["history"])
