"""Filtering, epoching, grid projection, normalization and subject folds."""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import signal as sps

from ..tensorio import load_tensors, save_tensors
from .edf import EdfRecording, read_edf

log = logging.getLogger(__name__)

GRID_SHAPE = (10, 11)
CLASSES = ("left", "right")


class FilterError(ValueError):
    pass


class LayoutError(ValueError):
    pass


class FoldError(ValueError):
    pass


# ---------------------------------------------------------------------------
# filtering


def bandpass(x, low: float = 0.1, high: float = 80.0, fs: float = 160.0, order: int = 4) -> np.ndarray:
    """Zero-phase Butterworth band-pass along the last axis.

    Implemented as a high-pass at ``low`` cascaded with a low-pass at
    ``high``; a ``high`` at or above Nyquist is pulled down to Nyquist - 1 Hz.
    """
    x = np.asarray(x, dtype=float)
    nyq = fs / 2.0
    if not 0 < low < nyq:
        raise FilterError(f"low cutoff {low} Hz invalid for fs={fs}")
    if high >= nyq:
        high = nyq - 1.0
    if high <= low:
        raise FilterError(f"high cutoff {high} Hz must exceed low cutoff {low} Hz")
    sos = np.vstack([
        sps.butter(order, low, btype="highpass", fs=fs, output="sos"),
        sps.butter(order, high, btype="lowpass", fs=fs, output="sos"),
    ])
    n = x.shape[-1]
    warmup = 3 * (2 * len(sos) + 1)
    if n <= warmup:
        raise FilterError(f"series of length {n} shorter than the filter warm-up ({warmup + 1} samples)")
    # long odd-extension padding keeps the slow high-pass transient out of the data
    padlen = min(n - 1, int(np.ceil(10 * fs / low)))
    return sps.sosfiltfilt(sos, x, axis=-1, padlen=padlen)


# ---------------------------------------------------------------------------
# electrode layout


def normalize_label(label: str) -> str:
    return re.sub(r"[.\s]", "", label).upper()


def load_layout(path: str | Path | None = None, shape: tuple[int, int] = GRID_SHAPE) -> dict[str, tuple[int, int]]:
    """Electrode label -> (row, col). Defaults to the shipped 10-10 layout."""
    if path is None:
        text = resources.files("ferrosnn.data.resources").joinpath("grid_10x11.csv").read_text()
    else:
        text = Path(path).read_text()
    layout = {}
    for row in csv.DictReader(text.splitlines()):
        layout[row["label"].strip()] = (int(row["row"]), int(row["col"]))
    validate_layout(layout, shape)
    return layout


def validate_layout(layout: Mapping[str, tuple[int, int]], shape: tuple[int, int] = GRID_SHAPE,
                    n_electrodes: int | None = None) -> None:
    seen: dict[tuple[int, int], str] = {}
    names: set[str] = set()
    for label, (r, c) in layout.items():
        key = normalize_label(label)
        if key in names:
            raise LayoutError(f"electrode {label!r} listed twice")
        names.add(key)
        if not (0 <= r < shape[0] and 0 <= c < shape[1]):
            raise LayoutError(f"{label!r} -> ({r}, {c}) outside the {shape} grid")
        if (r, c) in seen:
            raise LayoutError(f"cell ({r}, {c}) assigned to both {seen[(r, c)]!r} and {label!r}")
        seen[(r, c)] = label
    if n_electrodes is not None and len(layout) != n_electrodes:
        raise LayoutError(f"layout has {len(layout)} electrodes, expected {n_electrodes}")


def layout_mask(layout: Mapping[str, tuple[int, int]], shape: tuple[int, int] = GRID_SHAPE) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    for r, c in layout.values():
        mask[r, c] = True
    return mask


def project_grid(values, labels: Sequence[str], layout: Mapping[str, tuple[int, int]],
                 shape: tuple[int, int] = GRID_SHAPE) -> np.ndarray:
    """Place per-channel values on the electrode grid.

    ``values`` is ``(C,)`` or ``(C, T)``; the result is ``(H, W)`` or
    ``(T, H, W)`` with unassigned cells at zero.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[0] != len(labels):
        raise LayoutError(f"{values.shape[0]} channels but {len(labels)} labels")
    lookup = {normalize_label(k): v for k, v in layout.items()}
    rows, cols = [], []
    for lab in labels:
        key = normalize_label(lab)
        if key not in lookup:
            raise LayoutError(f"channel {lab!r} has no grid cell")
        rows.append(lookup[key][0])
        cols.append(lookup[key][1])
    if len(set(zip(rows, cols))) != len(rows):
        raise LayoutError("two channels map to the same cell")
    if values.ndim == 1:
        out = np.zeros(shape)
        out[rows, cols] = values
        return out
    out = np.zeros((values.shape[1],) + tuple(shape))
    out[:, rows, cols] = values.T
    return out


# ---------------------------------------------------------------------------
# trials


@dataclass
class Trial:
    input: np.ndarray          # (T, H, W)
    label: int                 # index into CLASSES
    subject_id: int
    run_id: int = 0
    onset: float = 0.0


def load_cue_table(path: str | Path | None = None) -> dict[int, dict[str, int]]:
    """Run number -> {annotation code: class index}."""
    if path is None:
        text = resources.files("ferrosnn.data.resources").joinpath("cue_codes.json").read_text()
    else:
        text = Path(path).read_text()
    d = json.loads(text)
    classes = d.get("classes", list(CLASSES))
    return {int(run): {code: classes.index(name) for code, name in table.items()}
            for run, table in d["runs"].items()}


def extract_trials(
    recording: EdfRecording,
    run_id: int,
    subject_id: int,
    cue_table: Mapping[int, Mapping[str, int]] | None = None,
    layout: Mapping[str, tuple[int, int]] | None = None,
    window: tuple[float, float] = (0.0, 1.0),
    band: tuple[float, float] | None = (0.1, 80.0),
) -> list[Trial]:
    """Cue-locked trials of one imagery run.

    The whole run is band-pass filtered before windowing. Runs missing
    from the cue table yield no trials.
    """
    cue_table = load_cue_table() if cue_table is None else cue_table
    codes = cue_table.get(int(run_id))
    if not codes:
        return []
    layout = load_layout() if layout is None else layout
    idx = recording.data_indices()
    rates = {recording.sampling_rate(k) for k in idx}
    if len(rates) != 1:
        raise ValueError(f"mixed sampling rates {sorted(rates)}")
    fs = rates.pop()
    labels = [recording.signals[k].label for k in idx]
    data = np.vstack([recording.physical(k) for k in idx])
    if band is not None:
        data = bandpass(data, band[0], band[1], fs)
    n_win = int(round((window[1] - window[0]) * fs))
    trials = []
    for ann in recording.annotations:
        code = ann.label.strip()
        if code not in codes:
            continue
        start = int(round((ann.onset + window[0]) * fs))
        stop = start + n_win
        if start < 0 or stop > data.shape[1]:
            log.info("subject %s run %s: cue at %.3fs too close to the recording edge, dropped",
                     subject_id, run_id, ann.onset)
            continue
        grid = project_grid(data[:, start:stop], labels, layout)
        trials.append(Trial(grid, codes[code], int(subject_id), int(run_id), float(ann.onset)))
    return trials


_FNAME = re.compile(r"S(\d+)R(\d+)\.edf$", re.IGNORECASE)


def discover_recordings(root: str | Path) -> dict[int, dict[int, Path]]:
    """Find ``SxxxRyy.edf`` files below ``root``: subject -> run -> path."""
    out: dict[int, dict[int, Path]] = {}
    for p in sorted(Path(root).rglob("*")):
        m = _FNAME.search(p.name)
        if m and p.is_file():
            out.setdefault(int(m.group(1)), {})[int(m.group(2))] = p
    return out


def load_corpus(
    root: str | Path,
    cue_table: Mapping[int, Mapping[str, int]] | None = None,
    layout: Mapping[str, tuple[int, int]] | None = None,
    exclude: Iterable[int] = (),
    expected_fs: float = 160.0,
    band: tuple[float, float] | None = (0.1, 80.0),
) -> tuple[list[Trial], list[int]]:
    """Load every imagery run below ``root``.

    Returns ``(trials, excluded_subject_ids)``. Besides the explicit
    ``exclude`` list, a subject is dropped when any imagery run has a
    sampling rate other than ``expected_fs`` or yields no cues.
    """
    cue_table = load_cue_table() if cue_table is None else cue_table
    layout = load_layout() if layout is None else layout
    excluded = set(int(s) for s in exclude)
    trials: list[Trial] = []
    for subject, runs in discover_recordings(root).items():
        if subject in excluded:
            continue
        sub_trials = []
        ok = True
        for run in sorted(cue_table):
            path = runs.get(run)
            if path is None:
                ok = False
                break
            rec = read_edf(path)
            if any(rec.sampling_rate(k) != expected_fs for k in rec.data_indices()):
                ok = False
                break
            got = extract_trials(rec, run, subject, cue_table, layout, band=band)
            if not got:
                ok = False
                break
            sub_trials.extend(got)
        if ok:
            trials.extend(sub_trials)
        else:
            log.info("subject %d excluded (sampling rate or annotations inconsistent)", subject)
            excluded.add(subject)
    return trials, sorted(excluded)


def stack_trials(trials: Sequence[Trial]) -> tuple[np.ndarray, np.ndarray]:
    """``(B, T, 1, H, W)`` inputs and ``(B,)`` labels."""
    x = np.stack([t.input for t in trials])[:, :, None]
    y = np.array([t.label for t in trials], dtype=int)
    return x, y


@dataclass
class GridNormalizer:
    """Per-cell z-score fitted on training trials only; empty cells stay zero."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, trials: Sequence[Trial]) -> "GridNormalizer":
        x = np.stack([t.input for t in trials])
        mean = x.mean(axis=(0, 1))
        std = x.std(axis=(0, 1))
        return cls(mean, std)

    def apply(self, x: np.ndarray) -> np.ndarray:
        live = self.std > 0
        out = np.zeros_like(x, dtype=float)
        out[..., live] = (x[..., live] - self.mean[live]) / self.std[live]
        return out

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}


def save_trials(prefix: str | Path, trials: Sequence[Trial], settings: Mapping | None = None) -> None:
    """Cache trials in the tensor container with a per-trial manifest."""
    x, y = stack_trials(trials) if trials else (np.zeros((0,)), np.zeros(0, dtype=int))
    meta = {
        "settings": dict(settings or {}),
        "trials": [{"subject": t.subject_id, "run": t.run_id, "label": CLASSES[t.label]
                    if t.label < len(CLASSES) else t.label, "onset": t.onset} for t in trials],
    }
    save_tensors(prefix, {"inputs": x[:, :, 0] if x.ndim == 5 else x, "labels": y}, meta=meta)


def load_trials(prefix: str | Path) -> list[Trial]:
    tensors, manifest = load_tensors(prefix)
    x, y = tensors["inputs"], tensors["labels"]
    info = manifest["meta"]["trials"]
    return [Trial(x[k].copy(), int(y[k]), int(m["subject"]), int(m["run"]), float(m["onset"]))
            for k, m in enumerate(info)]


# ---------------------------------------------------------------------------
# subject folds


def fold_sizes(n_subjects: int, n_folds: int = 5) -> list[int]:
    base, extra = divmod(n_subjects, n_folds)
    return [base + (1 if k < extra else 0) for k in range(n_folds)]


@dataclass
class FoldPlan:
    test_subjects: list[list[int]]
    val_fraction: float = 0.2
    seed: int = 0

    @property
    def sizes(self) -> list[int]:
        return [len(f) for f in self.test_subjects]

    @property
    def subjects(self) -> list[int]:
        return sorted(s for f in self.test_subjects for s in f)

    def train_subjects(self, fold: int) -> list[int]:
        return sorted(s for k, f in enumerate(self.test_subjects) if k != fold for s in f)

    def split(self, trials: Sequence[Trial], fold: int) -> tuple[list[Trial], list[Trial], list[Trial]]:
        """``(train, val, test)`` trials for one fold.

        Test trials come from the held-out subjects; the remaining trials
        are shuffled with the plan's seed and split train/validation.
        """
        test_ids = set(self.test_subjects[fold])
        pool = [t for t in trials if t.subject_id not in test_ids]
        test = [t for t in trials if t.subject_id in test_ids]
        rng = np.random.default_rng([self.seed, fold])
        order = rng.permutation(len(pool))
        n_val = int(round(self.val_fraction * len(pool)))
        val = [pool[k] for k in sorted(order[:n_val])]
        train = [pool[k] for k in sorted(order[n_val:])]
        if {t.subject_id for t in train + val} & test_ids:
            raise FoldError(f"fold {fold}: train/test subject overlap")
        return train, val, test


def make_folds(subjects: Iterable[int], seed: int = 0, n_folds: int = 5,
               expected: int | None = 103, val_fraction: float = 0.2) -> FoldPlan:
    """Identifier-ordered partition of subjects into ``n_folds`` contiguous groups.

    Larger groups come first (103 subjects -> 21, 21, 21, 20, 20).
    """
    ids = sorted(set(int(s) for s in subjects))
    if expected is not None and len(ids) != expected:
        all_ids = set(range(1, max(ids + [expected]) + 1))
        missing = sorted(all_ids - set(ids))
        raise FoldError(f"{len(ids)} subjects included, expected {expected}; excluded ids: {missing}")
    if len(ids) < n_folds:
        raise FoldError(f"need at least {n_folds} subjects, got {len(ids)}")
    folds, pos = [], 0
    for size in fold_sizes(len(ids), n_folds):
        folds.append(ids[pos:pos + size])
        pos += size
    return FoldPlan(folds, val_fraction, seed)
