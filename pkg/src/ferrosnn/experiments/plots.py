"""Figure rendering from run-directory tables (Agg backend, PNG files)."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..device_model import FerroKernelParams, Polarity, delta_w  # noqa: E402
from .io import read_csv  # noqa: E402


def _num(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return np.nan


def _series(rows) -> dict[str, dict[str, np.ndarray]]:
    by = defaultdict(list)
    for r in rows:
        by[(r["phase"], r["fold"])].append(r)
    out = {}
    for (phase, fold), rs in by.items():
        rs.sort(key=lambda r: int(r["epoch"]))
        out[f"{phase} / fold {fold}"] = {k: np.array([_num(r[k]) for r in rs])
                                         for k in ("epoch", "val_accuracy", "cumulative_events")}
    return out


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def render_run(run_dir: str | Path) -> list[Path]:
    """Accuracy-vs-epoch, events-vs-epoch and accuracy-vs-events from curves.csv."""
    run_dir = Path(run_dir)
    curves = run_dir / "curves.csv"
    if not curves.exists():
        return []
    series = _series(read_csv(curves))
    fig_dir = run_dir / "figures"
    fig_dir.mkdir(exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, s in series.items():
        ax.plot(s["epoch"], s["val_accuracy"], marker="o", ms=3, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("held-out accuracy (%)")
    ax.legend(fontsize=7)
    written.append(_save(fig, fig_dir / "accuracy_vs_epoch.png"))

    dev = {k: s for k, s in series.items()
           if k.startswith(("device", "retune", "pretrain_device")) or np.nansum(s["cumulative_events"]) > 0}
    if dev:
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, s in dev.items():
            ax.plot(s["epoch"], s["cumulative_events"], marker="o", ms=3, label=label)
        ax.set_xlabel("epoch")
        ax.set_ylabel("cumulative programming events")
        ax.legend(fontsize=7)
        written.append(_save(fig, fig_dir / "events_vs_epoch.png"))

        fig, ax = plt.subplots(figsize=(6, 4))
        for label, s in dev.items():
            ax.plot(s["cumulative_events"], s["val_accuracy"], marker="o", ms=3, label=label)
        ax.set_xscale("symlog")
        ax.set_xlabel("cumulative programming events")
        ax.set_ylabel("held-out accuracy (%)")
        ax.legend(fontsize=7)
        written.append(_save(fig, fig_dir / "accuracy_vs_events.png"))
    return written


def render_kernel_fit(run_dir: str | Path, samples, params: FerroKernelParams,
                      levels: Mapping[str, Sequence] | None = None) -> list[Path]:
    """Measured increments with the fitted kernel overlaid, plus level spread."""
    fig_dir = Path(run_dir) / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    written = []
    fig, ax = plt.subplots(figsize=(6, 4))
    grid = np.linspace(0.0, 1.0, 201)
    for pol, color in ((Polarity.LTP, "tab:red"), (Polarity.LTD, "tab:blue")):
        pts = [(s.w_before, s.delta_w) for s in samples if s.polarity is pol]
        if pts:
            w, d = np.array(pts).T
            ax.scatter(w, d, s=6, color=color, alpha=0.5, label=f"{pol.value} measured")
        ax.plot(grid, delta_w(grid, pol, params), color=color, label=f"{pol.value} fit")
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_xlabel("normalized conductance")
    ax.set_ylabel("increment per pulse")
    ax.legend(fontsize=7)
    written.append(_save(fig, fig_dir / "kernel_fit.png"))

    if levels:
        fig, ax = plt.subplots(figsize=(6, 4))
        for pol, stats in levels.items():
            stats = [s for s in stats if s.std_conductance is not None]
            if stats:
                ax.errorbar([s.pulse_amplitude for s in stats], [s.mean_conductance for s in stats],
                            yerr=[s.std_conductance for s in stats], fmt="o", ms=3, capsize=2, label=pol)
        ax.set_xlabel("pulse amplitude (V)")
        ax.set_ylabel("conductance (S)")
        ax.legend(fontsize=7)
        written.append(_save(fig, fig_dir / "levels.png"))
    return written


def render_sstl(run_dir: str | Path, subjects: Sequence[Mapping]) -> list[Path]:
    """Per-subject accuracy before and after fine-tuning."""
    if not subjects:
        return []
    fig_dir = Path(run_dir) / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    ids = [str(s["subject"]) for s in subjects]
    x = np.arange(len(ids))
    fig, ax = plt.subplots(figsize=(max(6, 0.25 * len(ids)), 4))
    ax.bar(x - 0.2, [s["accuracy_before"] for s in subjects], 0.4, label="before")
    ax.bar(x + 0.2, [s["accuracy_after"] for s in subjects], 0.4, label="after")
    ax.set_xticks(x, ids, rotation=90, fontsize=6)
    ax.set_xlabel("subject")
    ax.set_ylabel("accuracy (%)")
    ax.legend(fontsize=7)
    return [_save(fig, fig_dir / "sstl_per_subject.png")]
