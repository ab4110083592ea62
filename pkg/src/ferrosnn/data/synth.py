"""Synthetic two-class grid recordings with a planted spatial-spectral cue.

Class 0 carries an oscillation centred on the left sensorimotor cell (C3),
class 1 a faster one on the right (C4). Each trial gets a random phase and
Gaussian noise on every electrode cell; ``snr`` is the peak oscillation
amplitude over the noise std. Per-subject shifts (spatial offset, gain and
frequency jitter) make a population of distinct "subjects".
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .preprocessing import GRID_SHAPE, Trial, layout_mask, load_layout


@dataclass(frozen=True)
class SynthSpec:
    timesteps: int = 160
    fs: float = 160.0
    snr: float = 1.0
    noise_std: float = 1.0
    freqs: tuple[float, float] = (10.0, 22.0)
    centers: tuple[tuple[int, int], tuple[int, int]] = ((4, 3), (4, 7))
    radius: float = 1.2
    n_subjects: int = 1
    subject_shift: float = 0.0     # 0: identical subjects; 1: ~1 cell / 20% gain / 2 Hz jitter

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class _Subject:
    offset: tuple[float, float]
    gain: float
    dfreq: float
    flip: bool


def _subjects(spec: SynthSpec, rng: np.random.Generator) -> list[_Subject]:
    out = []
    for _ in range(spec.n_subjects):
        s = spec.subject_shift
        out.append(_Subject(
            offset=tuple(rng.normal(0.0, s, size=2)),
            gain=float(np.exp(rng.normal(0.0, 0.2 * s))),
            dfreq=float(rng.normal(0.0, 2.0 * s)),
            flip=False,
        ))
    return out


def _bump(center, radius, shape=GRID_SHAPE) -> np.ndarray:
    r = np.arange(shape[0])[:, None]
    c = np.arange(shape[1])[None, :]
    d2 = (r - center[0]) ** 2 + (c - center[1]) ** 2
    return np.exp(-0.5 * d2 / radius ** 2)


def synth_dataset(spec: SynthSpec, n_trials: int, seed: int, subject_ids=None) -> list[Trial]:
    """Label-balanced trials spread evenly over ``spec.n_subjects`` subjects."""
    rng = np.random.default_rng(seed)
    mask = layout_mask(load_layout())
    subjects = _subjects(spec, rng)
    ids = list(subject_ids) if subject_ids is not None else list(range(1, spec.n_subjects + 1))
    labels = np.array([k % 2 for k in range(n_trials)])
    labels = labels[rng.permutation(n_trials)]
    t = np.arange(spec.timesteps) / spec.fs
    amp = spec.snr * spec.noise_std
    trials = []
    for k in range(n_trials):
        sidx = k % spec.n_subjects
        sub = subjects[sidx]
        lab = int(labels[k])
        center = np.add(spec.centers[lab], sub.offset)
        bump = _bump(center, spec.radius) * mask
        freq = spec.freqs[lab] + sub.dfreq
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * freq * t + phase)
        x = amp * sub.gain * wave[:, None, None] * bump[None]
        x = x + rng.normal(0.0, spec.noise_std, size=x.shape) * mask[None]
        trials.append(Trial(x, lab, int(ids[sidx]), 0, float(k)))
    return trials
