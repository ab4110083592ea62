"""Phenomenological ferroelectric synapse model.

The conductance step produced by a single programming pulse is a scaled
Beta-shaped function of the normalized conductance ``w`` in ``[0, 1]``::

    dW_LTP(w) =  A+ * w**(a+ - 1) * (1 - w)**(b+ - 1)
    dW_LTD(w) = -A- * w**(a- - 1) * (1 - w)**(b- - 1)

This module evaluates the kernel, applies noisy pulses, calibrates the six
constants from characterization data and summarizes per-level programming
variability.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import optimize

__all__ = [
    "Polarity",
    "FerroKernelParams",
    "REFERENCE_PARAMS",
    "MEASURED_RELATIVE_STD",
    "CharacterizationSample",
    "LevelStatistics",
    "PulseRecord",
    "KernelFit",
    "DomainError",
    "CalibrationError",
    "FitError",
    "delta_w",
    "apply_pulse",
    "fit_kernel",
    "level_statistics",
    "read_pulse_log",
    "grouped_reads_from_log",
    "write_pulse_log",
    "samples_from_log",
    "synth_pulse_log",
    "pulse_trajectory",
]

# Largest relative std of the programmed conductance levels of the measured device.
MEASURED_RELATIVE_STD = 0.0375


class DomainError(ValueError):
    """Conductance outside ``[0, 1]`` handed to the kernel."""


class CalibrationError(ValueError):
    """Characterization data unusable for a fit."""


class FitError(RuntimeError):
    """Least-squares refinement did not converge; ``best`` holds the best-so-far result."""

    def __init__(self, message: str, best: "KernelFit | None" = None):
        super().__init__(message)
        self.best = best


class Polarity(str, enum.Enum):
    LTP = "LTP"
    LTD = "LTD"

    @classmethod
    def coerce(cls, value: "Polarity | str") -> "Polarity":
        if isinstance(value, Polarity):
            return value
        return cls(str(value).upper())


@dataclass(frozen=True)
class FerroKernelParams:
    a_plus: float
    alpha_plus: float
    beta_plus: float
    a_minus: float
    alpha_minus: float
    beta_minus: float

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be finite and > 0, got {value!r}")

    def shape(self, polarity: Polarity | str) -> tuple[float, float, float]:
        """Return ``(A, alpha, beta)`` for one polarity."""
        if Polarity.coerce(polarity) is Polarity.LTP:
            return self.a_plus, self.alpha_plus, self.beta_plus
        return self.a_minus, self.alpha_minus, self.beta_minus

    @property
    def pinned(self) -> bool:
        """True when both kernels vanish at w=0 and w=1."""
        return min(self.alpha_plus, self.beta_plus, self.alpha_minus, self.beta_minus) > 1

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, float]) -> "FerroKernelParams":
        return cls(**{k: float(d[k]) for k in cls.__dataclass_fields__})


# Kernel constants fitted to the reference ferroelectric device.
REFERENCE_PARAMS = FerroKernelParams(
    a_plus=0.1761, alpha_plus=1.81, beta_plus=2.12,
    a_minus=0.3300, alpha_minus=2.47, beta_minus=1.79,
)


def _power_term(x: np.ndarray, exponent: float) -> np.ndarray:
    # x**exponent via exp/log; x == 0 handled separately to avoid log(0)
    out = np.empty_like(x)
    zero = x == 0.0
    if exponent > 0:
        out[zero] = 0.0
    elif exponent == 0:
        out[zero] = 1.0
    else:
        out[zero] = np.inf
    nz = ~zero
    out[nz] = np.exp(exponent * np.log(x[nz]))
    return out


def beta_shape(w, alpha: float, beta: float) -> np.ndarray:
    """Unscaled kernel ``w**(alpha-1) * (1-w)**(beta-1)`` on an array."""
    w = np.asarray(w, dtype=float)
    return _power_term(w, alpha - 1.0) * _power_term(1.0 - w, beta - 1.0)


def _check_domain(w: np.ndarray) -> None:
    if w.size and not (np.all(w >= 0.0) and np.all(w <= 1.0)):
        bad = w[~((w >= 0.0) & (w <= 1.0))]
        raise DomainError(f"normalized conductance must lie in [0, 1]; got {bad.ravel()[:5]}")


def delta_w(w, polarity: Polarity | str, params: FerroKernelParams = REFERENCE_PARAMS):
    """Signed conductance step for one pulse of ``polarity`` at state ``w``.

    Accepts a scalar or an array; returns the same kind.
    """
    arr = np.asarray(w, dtype=float)
    _check_domain(arr)
    pol = Polarity.coerce(polarity)
    amp, a, b = params.shape(pol)
    step = amp * beta_shape(arr, a, b)
    if pol is Polarity.LTD:
        step = -step
    if np.ndim(w) == 0:
        return float(step)
    return step


def apply_pulse(
    w,
    polarity: Polarity | str,
    params: FerroKernelParams = REFERENCE_PARAMS,
    write_noise_std: float = 0.0,
    rng: np.random.Generator | None = None,
):
    """Conductance after one pulse, clamped to ``[0, 1]``.

    Write noise is additive Gaussian on the post-step value. ``rng`` is
    only consulted when ``write_noise_std > 0``.
    """
    if write_noise_std < 0:
        raise ValueError("write_noise_std must be >= 0")
    arr = np.asarray(w, dtype=float)
    new = arr + delta_w(arr, polarity, params)
    if write_noise_std > 0:
        if rng is None:
            raise ValueError("an rng is required when write_noise_std > 0")
        new = new + rng.normal(0.0, write_noise_std, size=arr.shape)
    new = np.clip(new, 0.0, 1.0)
    if np.ndim(w) == 0:
        return float(new)
    return new


def pulse_trajectory(
    w0: float,
    n_pulses: int,
    polarity: Polarity | str,
    params: FerroKernelParams = REFERENCE_PARAMS,
) -> np.ndarray:
    """States visited by ``n_pulses`` identical noiseless pulses, ``w0`` included."""
    out = np.empty(n_pulses + 1)
    out[0] = w0
    for k in range(n_pulses):
        out[k + 1] = apply_pulse(out[k], polarity, params)
    return out


# --------------------------------------------------------------------------
# calibration


@dataclass(frozen=True)
class CharacterizationSample:
    w_before: float
    delta_w: float
    polarity: Polarity

    def __post_init__(self):
        if not 0.0 <= self.w_before <= 1.0:
            raise CalibrationError(f"w_before={self.w_before} outside [0, 1]")
        object.__setattr__(self, "polarity", Polarity.coerce(self.polarity))


@dataclass
class KernelFit:
    """Fitted constants plus per-polarity diagnostics."""

    params: FerroKernelParams
    rms: dict[str, float]
    n_samples: dict[str, int]
    metadata: dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "residual_rms": dict(self.rms),
            "n_samples": dict(self.n_samples),
            "metadata": self.metadata,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "KernelFit":
        d = json.loads(Path(path).read_text())
        return cls(FerroKernelParams.from_dict(d["params"]), d["residual_rms"],
                   d["n_samples"], d.get("metadata", {}))


_GRID = np.linspace(1.05, 4.0, 60)


def _fit_one(w: np.ndarray, y: np.ndarray, max_nfev: int) -> tuple[tuple[float, float, float], float, dict]:
    """Separable least squares for ``y ~ A * w**(a-1) * (1-w)**(b-1)``.

    Coarse (a, b) grid with A solved in closed form, then bounded
    trust-region refinement of all three constants.
    """
    best = (np.inf, 1.0, 1.0, 1.0)
    for a in _GRID:
        wa = beta_shape(w, a, 1.0)
        for b in _GRID:
            k = wa * beta_shape(w, 1.0, b)
            kk = float(k @ k)
            if kk == 0.0:
                continue
            amp = float(k @ y) / kk
            if amp <= 0:
                continue
            sse = float(np.sum((y - amp * k) ** 2))
            if sse < best[0]:
                best = (sse, amp, a, b)
    if not math.isfinite(best[0]):
        raise CalibrationError("no positive-amplitude kernel explains the samples")

    def resid(p):
        return p[0] * beta_shape(w, p[1], p[2]) - y

    x0 = np.array(best[1:])
    res = optimize.least_squares(
        resid, x0,
        bounds=([1e-12, 1.0, 1.0], [np.inf, 50.0, 50.0]),
        method="trf", x_scale="jac", xtol=1e-15, ftol=1e-15, gtol=1e-15,
        max_nfev=max_nfev,
    )
    p = tuple(float(v) for v in res.x)
    rms = float(np.sqrt(np.mean(res.fun ** 2)))
    info = {"nfev": int(res.nfev), "status": int(res.status), "message": res.message,
            "grid_start": [float(v) for v in x0]}
    # status 0: iteration budget exhausted
    if res.status == 0:
        raise FitError("kernel refinement hit the iteration budget", best=(p, rms, info))
    return p, rms, info


def fit_kernel(
    samples: Sequence[CharacterizationSample],
    min_per_polarity: int = 10,
    span: tuple[float, float] = (0.1, 0.9),
    max_nfev: int = 2000,
) -> KernelFit:
    """Least-squares calibration of both kernels, one polarity at a time.

    Each polarity needs at least ``min_per_polarity`` samples whose
    ``w_before`` values cover ``span``.
    """
    fitted: dict[Polarity, tuple[float, float, float]] = {}
    rms: dict[str, float] = {}
    counts: dict[str, int] = {}
    meta: dict[str, object] = {"method": "grid + trust-region least squares"}
    partial: dict[Polarity, tuple] = {}
    failed = None
    for pol in Polarity:
        sel = [s for s in samples if s.polarity is pol]
        if len(sel) < min_per_polarity:
            raise CalibrationError(
                f"{pol.value}: need >= {min_per_polarity} samples, got {len(sel)}")
        w = np.array([s.w_before for s in sel])
        y = np.array([s.delta_w for s in sel])
        if w.min() > span[0] or w.max() < span[1]:
            raise CalibrationError(
                f"{pol.value}: samples span [{w.min():.3f}, {w.max():.3f}], "
                f"need to cover [{span[0]}, {span[1]}]")
        if pol is Polarity.LTD:
            y = -y
        try:
            p, r, info = _fit_one(w, y, max_nfev)
        except FitError as exc:
            p, r, info = exc.best
            failed = pol
        fitted[pol] = p
        partial[pol] = p
        rms[pol.value] = r
        counts[pol.value] = len(sel)
        meta[pol.value] = info
    params = FerroKernelParams(*fitted[Polarity.LTP], *fitted[Polarity.LTD])
    result = KernelFit(params, rms, counts, meta)
    if failed is not None:
        raise FitError(f"{failed.value} fit did not converge", best=result)
    return result


# --------------------------------------------------------------------------
# characterization logs and level statistics


@dataclass(frozen=True)
class LevelStatistics:
    pulse_amplitude: float
    mean_conductance: float
    std_conductance: float | None
    sample_count: int

    @property
    def relative_std(self) -> float | None:
        if self.std_conductance is None or self.mean_conductance == 0:
            return None
        return self.std_conductance / abs(self.mean_conductance)


def level_statistics(grouped_reads: Mapping[float, Sequence[float]]) -> list[LevelStatistics]:
    """Sample mean and unbiased std per pulse amplitude, ordered by amplitude.

    Groups with a single read get ``std_conductance=None``.
    """
    out = []
    for amp in sorted(grouped_reads):
        reads = np.asarray(grouped_reads[amp], dtype=float)
        if reads.size == 0:
            raise ValueError(f"empty read group at amplitude {amp}")
        std = float(np.std(reads, ddof=1)) if reads.size >= 2 else None
        out.append(LevelStatistics(float(amp), float(reads.mean()), std, int(reads.size)))
    return out


@dataclass(frozen=True)
class PulseRecord:
    pulse_index: int
    pulse_amplitude_V: float
    pulse_width_us: float
    read_conductance_S: float


PULSE_LOG_COLUMNS = ("pulse_index", "pulse_amplitude_V", "pulse_width_us", "read_conductance_S")


def read_pulse_log(path: str | Path) -> list[PulseRecord]:
    """Parse a delimited characterization log (comma or tab separated)."""
    text = Path(path).read_text()
    if not text.strip():
        raise CalibrationError(f"{path}: empty characterization log")
    dialect = csv.Sniffer().sniff(text.splitlines()[0], delimiters=",\t;")
    reader = csv.reader(text.splitlines(), dialect)
    header = [h.strip() for h in next(reader)]
    if tuple(header) != PULSE_LOG_COLUMNS:
        raise CalibrationError(f"{path}:1: expected columns {PULSE_LOG_COLUMNS}, got {tuple(header)}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row or not "".join(row).strip():
            continue
        if len(row) != len(PULSE_LOG_COLUMNS):
            raise CalibrationError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
        try:
            rows.append(PulseRecord(int(row[0]), float(row[1]), float(row[2]), float(row[3])))
        except ValueError as exc:
            raise CalibrationError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise CalibrationError(f"{path}: no pulse records")
    return rows


def write_pulse_log(path: str | Path, records: Iterable[PulseRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PULSE_LOG_COLUMNS)
        for r in records:
            writer.writerow([r.pulse_index, repr(r.pulse_amplitude_V), repr(r.pulse_width_us),
                             repr(r.read_conductance_S)])


def _polarity_of(amplitude: float, positive: Polarity = Polarity.LTD) -> Polarity | None:
    if amplitude == 0:
        return None
    other = Polarity.LTP if positive is Polarity.LTD else Polarity.LTD
    return positive if amplitude > 0 else other


def samples_from_log(
    records: Sequence[PulseRecord],
    g_min: float | None = None,
    g_max: float | None = None,
    positive_polarity: Polarity | str = Polarity.LTD,
) -> list[CharacterizationSample]:
    """Turn consecutive reads into ``(w_before, delta_w)`` samples.

    Conductances are normalized with ``g_min``/``g_max`` (defaults: the
    extremes of the log). If the LTD steps of a log are recorded as
    magnitudes, they are flipped so that depression is negative.
    ``positive_polarity`` names the effect of positive write pulses.
    """
    positive = Polarity.coerce(positive_polarity)
    if len(records) < 2:
        raise CalibrationError("need at least two pulse records")
    recs = sorted(records, key=lambda r: r.pulse_index)
    g = np.array([r.read_conductance_S for r in recs])
    lo = float(g.min()) if g_min is None else g_min
    hi = float(g.max()) if g_max is None else g_max
    if hi <= lo:
        raise CalibrationError("conductance range is degenerate")
    w = np.clip((g - lo) / (hi - lo), 0.0, 1.0)
    raw = []
    for k in range(1, len(recs)):
        pol = _polarity_of(recs[k].pulse_amplitude_V, positive)
        if pol is None:
            continue
        raw.append((float(w[k - 1]), float(w[k] - w[k - 1]), pol))
    ltd = np.array([d for _, d, p in raw if p is Polarity.LTD])
    flip = ltd.size > 0 and np.median(ltd) > 0
    return [CharacterizationSample(wb, -d if (flip and p is Polarity.LTD) else d, p)
            for wb, d, p in raw]


def grouped_reads_from_log(
    records: Sequence[PulseRecord],
    polarity: Polarity | str | None = None,
    positive_polarity: Polarity | str = Polarity.LTD,
) -> dict[float, list[float]]:
    """Conductance reads grouped by the amplitude of the pulse preceding them."""
    pol = None if polarity is None else Polarity.coerce(polarity)
    positive = Polarity.coerce(positive_polarity)
    groups: dict[float, list[float]] = {}
    for r in records:
        p = _polarity_of(r.pulse_amplitude_V, positive)
        if p is None or (pol is not None and p is not pol):
            continue
        groups.setdefault(round(r.pulse_amplitude_V, 9), []).append(r.read_conductance_S)
    return groups


def synth_pulse_log(
    params: FerroKernelParams = REFERENCE_PARAMS,
    n_cycles: int = 10,
    n_ltp: int = 40,
    n_ltd: int = 40,
    v_ltp_max: float = 1.0,
    v_ltd_max: float = 1.25,
    g_min: float = 1e-8,
    g_max: float = 1e-7,
    write_noise_std: float = 0.0,
    w_start: float = 0.02,
    pulse_width_us: float = 50.0,
    rng: np.random.Generator | None = None,
) -> list[PulseRecord]:
    """Cycling sequence generated by the model itself.

    Each cycle is a staircase of ``n_ltp`` potentiating pulses rising to
    ``-v_ltp_max`` followed by ``n_ltd`` depressing pulses rising to
    ``+v_ltd_max``. Positive pulses depress.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    records = [PulseRecord(0, 0.0, pulse_width_us, g_min + w_start * (g_max - g_min))]
    w = w_start
    idx = 1
    for _ in range(n_cycles):
        for amps, pol in ((-np.linspace(v_ltp_max / n_ltp, v_ltp_max, n_ltp), Polarity.LTP),
                          (np.linspace(v_ltd_max / n_ltd, v_ltd_max, n_ltd), Polarity.LTD)):
            for amp in amps:
                w = apply_pulse(w, pol, params, write_noise_std, rng)
                records.append(PulseRecord(idx, float(round(amp, 6)), pulse_width_us,
                                           g_min + w * (g_max - g_min)))
                idx += 1
    return records
