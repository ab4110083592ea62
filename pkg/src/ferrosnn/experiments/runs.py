"""Experiment regimes: software baseline, on-device training, subject-specific
fine-tuning, weight transfer with re-tuning, device calibration and the
synthetic desk-scale benchmark."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from ..data.preprocessing import (
    FoldPlan,
    GridNormalizer,
    Trial,
    load_corpus,
    load_cue_table,
    load_layout,
    load_trials,
    make_folds,
    save_trials,
    stack_trials,
)
from ..data.synth import SynthSpec, synth_dataset
from ..device_model import (
    REFERENCE_PARAMS,
    FerroKernelParams,
    KernelFit,
    Polarity,
    fit_kernel,
    grouped_reads_from_log,
    level_statistics,
    read_pulse_log,
    samples_from_log,
)
from ..snn.lif import NeuronConfig, SurrogateParams
from ..snn.network import SYNAPTIC_LAYERS, NetworkSpec, NetworkState
from ..weight_fabric import ProgrammingPolicy, add_program_noise, quantize
from . import plots
from .config import ConfigError, ExperimentConfig
from .io import RunWriter, config_digest, digest_arrays, load_training_checkpoint, save_training_checkpoint
from .training import Trainer, TrainSettings, evaluate

log = logging.getLogger(__name__)


class DatasetMissingError(FileNotFoundError):
    pass


class RuntimeAssertionError(AssertionError):
    pass


@dataclass
class RunMetrics:
    history: list[dict] = field(default_factory=list)
    fold_test_accuracy: dict[str, float] = field(default_factory=dict)
    events: dict[str, Any] = field(default_factory=dict)
    wall_clock: float = 0.0
    config_digest: str = ""
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def test_accuracies(self) -> list[float]:
        return list(self.fold_test_accuracy.values())

    @property
    def mean_test_accuracy(self) -> float:
        return float(np.mean(self.test_accuracies)) if self.fold_test_accuracy else float("nan")

    @property
    def std_test_accuracy(self) -> float:
        return float(np.std(self.test_accuracies)) if self.fold_test_accuracy else float("nan")

    def to_dict(self) -> dict:
        return {"history": self.history, "fold_test_accuracy": self.fold_test_accuracy,
                "mean_test_accuracy": self.mean_test_accuracy, "std_test_accuracy": self.std_test_accuracy,
                "events": self.events, "wall_clock": self.wall_clock, "config_digest": self.config_digest,
                **self.extra}


# ---------------------------------------------------------------------------
# building blocks


def build_neuron(cfg: ExperimentConfig) -> NeuronConfig:
    return NeuronConfig(v_th=cfg.v_th, surrogate=SurrogateParams(cfg.surrogate_amplitude, cfg.surrogate_window),
                        beta_init=cfg.beta_init, gamma_init=cfg.gamma_init)


def build_spec(cfg: ExperimentConfig) -> NetworkSpec:
    if cfg.width_divisor == 1:
        return NetworkSpec.full(timesteps=cfg.timesteps)
    return NetworkSpec.scaled(cfg.width_divisor, timesteps=cfg.timesteps)


def load_kernel(cfg: ExperimentConfig) -> FerroKernelParams:
    if cfg.kernel_file:
        return KernelFit.load(cfg.kernel_file).params
    return REFERENCE_PARAMS


def synth_spec(cfg: ExperimentConfig, n_subjects: int = 1) -> SynthSpec:
    return SynthSpec(timesteps=cfg.timesteps, snr=cfg.synth_snr, n_subjects=n_subjects,
                     subject_shift=cfg.synth_shift)


def load_dataset(cfg: ExperimentConfig) -> list[Trial]:
    """All trials of the configured corpus (synthetic population or real recordings)."""
    if cfg.dataset == "synthetic":
        spec = synth_spec(cfg, cfg.synth_subjects)
        return synth_dataset(spec, cfg.synth_subjects * cfg.synth_trials_per_subject, cfg.seed)
    if cfg.trial_cache and Path(str(cfg.trial_cache).removesuffix(".json") + ".json").exists():
        return load_trials(cfg.trial_cache)
    if not cfg.data_root or not Path(cfg.data_root).is_dir():
        raise DatasetMissingError(f"dataset directory {cfg.data_root!r} not found")
    trials, excluded = load_corpus(cfg.data_root, load_cue_table(cfg.cue_table_file),
                                   load_layout(cfg.layout_file), cfg.exclude_subjects)
    if not trials:
        raise DatasetMissingError(f"no imagery trials found under {cfg.data_root}")
    log.info("loaded %d trials; excluded subjects %s", len(trials), excluded)
    if cfg.trial_cache:
        save_trials(cfg.trial_cache, trials, {"data_root": str(cfg.data_root), "excluded": excluded})
    return trials


def fold_plan(cfg: ExperimentConfig, trials: Sequence[Trial]) -> FoldPlan:
    expected = cfg.expected_subjects if cfg.dataset == "real" else None
    return make_folds({t.subject_id for t in trials}, cfg.seed, cfg.n_folds, expected, cfg.val_fraction)


def dataset_digest(trials: Sequence[Trial]) -> str:
    x, y = stack_trials(trials)
    return digest_arrays([x, y, np.array([t.subject_id for t in trials])])


@dataclass
class FoldData:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    normalizer: GridNormalizer
    test_trials: list[Trial]


def _xy(trials, norm):
    if not trials:
        return np.zeros((0,)), np.zeros(0, dtype=int)
    x, y = stack_trials(trials)
    return norm.apply(x), y


def prepare_split(train: Sequence[Trial], val: Sequence[Trial], test: Sequence[Trial]) -> FoldData:
    """Stack and z-score the three sets with statistics of ``train`` only."""
    norm = GridNormalizer.fit(train)
    xtr, ytr = _xy(train, norm)
    xva, yva = _xy(val, norm)
    xte, yte = _xy(test, norm)
    return FoldData(xtr, ytr, xva, yva, xte, yte, norm, list(test))


def prepare_fold(trials: Sequence[Trial], plan: FoldPlan, fold: int) -> FoldData:
    train, val, test = plan.split(trials, fold)
    test_ids = set(plan.test_subjects[fold])
    if {t.subject_id for t in train} & test_ids or {t.subject_id for t in val} & test_ids:
        raise RuntimeAssertionError(f"fold {fold}: a test subject leaked into training data")
    return prepare_split(train, val, test)


def settings_for(cfg: ExperimentConfig, mode: str, epsilon: float | None = None, **over) -> TrainSettings:
    s = TrainSettings(
        epochs=cfg.epochs, batch_size=cfg.batch_size, lr_initial=cfg.lr_initial, lr_final=cfg.lr_final,
        micro_batch=cfg.micro_batch, mode=mode, time_weight_lr_scale=cfg.time_weight_lr_scale,
        policy=ProgrammingPolicy(epsilon if epsilon is not None else cfg.epsilon, cfg.epsilon_asym,
                                 cfg.max_events_per_batch),
        kernel=load_kernel(cfg), write_noise_std=cfg.write_noise_std,
    )
    for k, v in over.items():
        setattr(s, k, v)
    return s


def train_network(
    net: NetworkState,
    settings: TrainSettings,
    data: FoldData,
    rng: np.random.Generator,
    writer: RunWriter | None,
    phase: str,
    fold: int | str,
    checkpoint: bool = True,
    resume: bool = False,
) -> tuple[Trainer, list[dict]]:
    """Epoch loop with validation, curve/event logging and per-epoch checkpoints."""
    trainer = Trainer(net, settings, rng)
    history: list[dict] = []
    start = 0
    prefix = writer.path(f"checkpoints/{phase}-fold{fold}-last") if writer is not None else None
    if resume and prefix is not None and Path(str(prefix) + ".json").exists():
        last, history = load_training_checkpoint(prefix, trainer)
        start = last + 1
        log.info("%s fold %s: resumed after epoch %d", phase, fold, last)
    key = (phase, fold)

    def on_batch(epoch, b, fired):
        if writer is not None and fired:
            writer.events(key, epoch, b, fired)

    if start == 0:
        ev = evaluate(net, data.x_val, data.y_val, settings.micro_batch) if len(data.y_val) else None
        row = {"phase": phase, "fold": fold, "epoch": 0, "cumulative_events": 0,
               "val_accuracy": ev["accuracy"] if ev else "", "val_loss": ev["loss"] if ev else ""}
        history.append(row)
        if writer is not None:
            writer.curve(row)
            writer.record("epoch", **row)
    prev_events = history[-1].get("cumulative_events", 0) if history else 0
    for epoch in range(start, settings.epochs):
        m = trainer.train_epoch(data.x_train, data.y_train, epoch, on_batch)
        ev = evaluate(net, data.x_val, data.y_val, settings.micro_batch) if len(data.y_val) else None
        events = trainer.events()["total"] if trainer.device else 0
        if events < (prev_events or 0):
            raise RuntimeAssertionError("programming-event counter decreased")
        prev_events = events
        row = {"phase": phase, "fold": fold, "epoch": epoch + 1, "lr": m["lr"],
               "train_loss": m["train_loss"], "train_accuracy": m["train_accuracy"],
               "val_accuracy": ev["accuracy"] if ev else "", "val_loss": ev["loss"] if ev else "",
               "cumulative_events": events, "seconds": m["seconds"]}
        for k in ("train_accuracy", "val_accuracy"):
            if row[k] != "" and not 0.0 <= row[k] <= 100.0:
                raise RuntimeAssertionError(f"{k} out of range: {row[k]}")
        history.append(row)
        log.info("%s fold %s epoch %d: loss %.4f val %.2f%% events %d", phase, fold, epoch + 1,
                 m["train_loss"], row["val_accuracy"] if ev else float("nan"), events)
        if writer is not None:
            writer.curve(row)
            writer.record("epoch", **row)
            if checkpoint:
                save_training_checkpoint(prefix, trainer, epoch, history)
    return trainer, history


def _folds(cfg: ExperimentConfig, plan: FoldPlan) -> list[int]:
    folds = list(range(len(plan.test_subjects))) if cfg.folds is None else list(cfg.folds)
    bad = [f for f in folds if not 0 <= f < len(plan.test_subjects)]
    if bad:
        raise ConfigError(f"fold indices {bad} out of range")
    return folds


def _init_net(cfg: ExperimentConfig, fold, stream: int = 0) -> NetworkState:
    return NetworkState.init(build_spec(cfg), np.random.default_rng([cfg.seed, int(fold), stream]),
                             build_neuron(cfg))


def _start(cfg: ExperimentConfig, writer: RunWriter | None, default_dir: str) -> RunWriter:
    if writer is not None:
        return writer
    return RunWriter(cfg.out_dir or default_dir, resume=cfg.resume)


def _save_final(writer: RunWriter, net: NetworkState, name: str, data: FoldData, extra: dict | None = None) -> Path:
    prefix = writer.path(f"checkpoints/{name}")
    net.save(prefix, meta={"normalizer": data.normalizer.to_dict(), **(extra or {})})
    return prefix


def _checkpoint_for(pattern: str, fold) -> str:
    return pattern.replace("{fold}", str(fold))


def _normalizer_from(meta: dict) -> GridNormalizer | None:
    n = meta.get("normalizer")
    if not n:
        return None
    return GridNormalizer(np.array(n["mean"]), np.array(n["std"]))


# ---------------------------------------------------------------------------
# regimes


def _cross_validated(cfg: ExperimentConfig, writer: RunWriter, mode: str, epsilon: float | None,
                     phase: str, trials, plan) -> RunMetrics:
    metrics = RunMetrics(config_digest=config_digest(cfg.to_dict()))
    t0 = time.time()
    for fold in _folds(cfg, plan):
        data = prepare_fold(trials, plan, fold)
        net = _init_net(cfg, fold)
        trainer, hist = train_network(net, settings_for(cfg, mode, epsilon), data,
                                      np.random.default_rng([cfg.seed, fold, 1]), writer, phase, fold,
                                      resume=cfg.resume)
        metrics.history.extend(hist)
        test = evaluate(net, data.x_test, data.y_test, cfg.micro_batch)
        metrics.fold_test_accuracy[str(fold)] = test["accuracy"]
        if trainer.device:
            metrics.events[str(fold)] = trainer.events()
        writer.record("fold_test", phase=phase, fold=fold, accuracy=test["accuracy"], loss=test["loss"])
        _save_final(writer, net, f"{phase}-fold{fold}", data, {"phase": phase, "fold": fold})
    metrics.wall_clock = time.time() - t0
    return metrics


def run_baseline(cfg: ExperimentConfig, writer: RunWriter | None = None) -> RunMetrics:
    """Floating-point training with clamped weights, k-fold over subjects."""
    writer = _start(cfg, writer, "runs/baseline")
    trials = load_dataset(cfg)
    plan = fold_plan(cfg, trials)
    writer.write_manifest(cfg.to_dict(), dataset_digest(trials), {"folds": plan.test_subjects})
    m = _cross_validated(cfg, writer, "software", None, "baseline", trials, plan)
    writer.summary(m.to_dict())
    plots.render_run(writer.dir)
    return m


def run_on_device(cfg: ExperimentConfig, writer: RunWriter | None = None) -> RunMetrics:
    """Training through the accumulator/threshold device model, one pass per epsilon."""
    writer = _start(cfg, writer, "runs/on_device")
    trials = load_dataset(cfg)
    plan = fold_plan(cfg, trials)
    writer.write_manifest(cfg.to_dict(), dataset_digest(trials), {"folds": plan.test_subjects})
    epsilons = cfg.epsilons or [cfg.epsilon]
    combined = RunMetrics(config_digest=config_digest(cfg.to_dict()))
    per_eps = {}
    for eps in epsilons:
        phase = f"device_eps{eps:g}_asym{cfg.epsilon_asym:g}"
        m = _cross_validated(cfg, writer, "device", eps, phase, trials, plan)
        per_eps[f"{eps:g}"] = {"mean_test_accuracy": m.mean_test_accuracy,
                               "std_test_accuracy": m.std_test_accuracy,
                               "fold_test_accuracy": m.fold_test_accuracy,
                               "total_events": {f: e["total"] for f, e in m.events.items()}}
        combined.history.extend(m.history)
        combined.wall_clock += m.wall_clock
        if len(epsilons) == 1:
            combined.fold_test_accuracy = m.fold_test_accuracy
            combined.events = m.events
    combined.extra["per_epsilon"] = per_eps
    writer.summary(combined.to_dict())
    plots.render_run(writer.dir)
    return combined


def _load_or_train(cfg: ExperimentConfig, writer: RunWriter, data: FoldData, fold, mode: str,
                   phase: str) -> tuple[NetworkState, GridNormalizer | None]:
    if cfg.checkpoint:
        net, meta = NetworkState.load(_checkpoint_for(cfg.checkpoint, fold))
        return net, _normalizer_from(meta)
    net = _init_net(cfg, fold)
    train_network(net, settings_for(cfg, mode), data, np.random.default_rng([cfg.seed, fold, 1]),
                  writer, phase, fold, resume=cfg.resume)
    _save_final(writer, net, f"{phase}-fold{fold}", data)
    return net, None


def quantize_network(net: NetworkState, levels: int | None, eta: float, rng: np.random.Generator) -> NetworkState:
    """Copy of ``net`` with every synaptic layer quantized then perturbed."""
    out = net.copy()
    bounds = net.spec.bounds()
    for name in SYNAPTIC_LAYERS:
        q = quantize(out.params[name], levels, bounds[name])
        out.params[name] = add_program_noise(q, eta, rng, bounds[name]) if eta > 0 else q
    return out


def retune(
    cfg: ExperimentConfig, net: NetworkState, data: FoldData, writer: RunWriter | None, fold,
    levels: int | None, eta: float, epochs: int, phase: str = "retune",
) -> dict:
    """Quantize + noise, evaluate, then re-tune on-device; accuracy after every epoch."""
    ref = evaluate(net, data.x_test, data.y_test, cfg.micro_batch)["accuracy"]
    deployed = quantize_network(net, levels, eta, np.random.default_rng([cfg.seed, int(fold), 7]))
    degraded = evaluate(deployed, data.x_test, data.y_test, cfg.micro_batch)["accuracy"]
    lr0 = cfg.retune_lr if cfg.retune_lr is not None else cfg.lr_initial
    settings = settings_for(cfg, "device", cfg.epsilon, epochs=epochs, lr_initial=lr0,
                            lr_final=lr0 * cfg.lr_final / cfg.lr_initial)
    curve = [degraded]
    trainer = Trainer(deployed, settings, np.random.default_rng([cfg.seed, int(fold), 8]))
    for epoch in range(epochs):
        m = trainer.train_epoch(data.x_train, data.y_train, epoch,
                                (lambda e, b, f: writer.events((phase, fold), e, b, f)) if writer else None)
        acc = evaluate(deployed, data.x_test, data.y_test, cfg.micro_batch)["accuracy"]
        curve.append(acc)
        if writer is not None:
            row = {"phase": phase, "fold": fold, "epoch": epoch + 1, "lr": m["lr"],
                   "train_loss": m["train_loss"], "train_accuracy": m["train_accuracy"],
                   "val_accuracy": acc, "cumulative_events": trainer.events()["total"],
                   "seconds": m["seconds"]}
            writer.curve(row)
            writer.record("retune_epoch", **row)
    return {"reference_accuracy": ref, "degraded_accuracy": degraded, "retune_curve": curve,
            "final_accuracy": curve[-1], "events": trainer.events()["total"], "network": deployed}


def run_transfer_retune(cfg: ExperimentConfig, writer: RunWriter | None = None) -> RunMetrics:
    """Software-trained weights -> quantize -> programming noise -> on-device re-tuning."""
    writer = _start(cfg, writer, "runs/transfer_retune")
    trials = load_dataset(cfg)
    plan = fold_plan(cfg, trials)
    writer.write_manifest(cfg.to_dict(), dataset_digest(trials), {"folds": plan.test_subjects})
    metrics = RunMetrics(config_digest=config_digest(cfg.to_dict()))
    t0 = time.time()
    per_fold = {}
    for fold in _folds(cfg, plan):
        data = prepare_fold(trials, plan, fold)
        net, norm = _load_or_train(cfg, writer, data, fold, "software", "pretrain")
        if norm is not None:
            data = _renormalize(trials, plan, fold, norm)
        r = retune(cfg, net, data, writer, fold, cfg.quant_levels, cfg.eta, cfg.retune_epochs)
        r.pop("network")
        per_fold[str(fold)] = r
        metrics.fold_test_accuracy[str(fold)] = r["final_accuracy"]
        writer.record("fold_test", phase="retune", fold=fold, **r)
    metrics.wall_clock = time.time() - t0
    metrics.extra["per_fold"] = per_fold
    writer.summary(metrics.to_dict())
    plots.render_run(writer.dir)
    return metrics


def _renormalize(trials, plan: FoldPlan, fold, norm: GridNormalizer) -> FoldData:
    train, val, test = plan.split(trials, fold)
    return FoldData(*_xy(train, norm), *_xy(val, norm), *_xy(test, norm), norm, list(test))


def subject_quarters(trials: Sequence[Trial]) -> list[list[Trial]]:
    """Trials ordered by run then onset, cut into four contiguous near-equal parts."""
    ordered = sorted(trials, key=lambda t: (t.run_id, t.onset))
    cuts = np.array_split(np.arange(len(ordered)), 4)
    return [[ordered[i] for i in c] for c in cuts]


def finetune_subject(
    cfg: ExperimentConfig, pretrained: NetworkState, norm: GridNormalizer, trials: Sequence[Trial],
    subject: int,
) -> dict:
    """Four-way cross-fitting on one subject; returns before/after predictions."""
    quarters = subject_quarters(trials)
    lr0 = cfg.finetune_lr
    settings = settings_for(cfg, "device", cfg.epsilon, epochs=cfg.finetune_epochs,
                            batch_size=cfg.finetune_batch_size, lr_initial=lr0,
                            lr_final=lr0 * cfg.lr_final / cfg.lr_initial,
                            trainable_layers=tuple(cfg.layers_to_finetune), train_time_weights=False)
    y_all, before, after = [], [], []
    events = 0
    for q in range(4):
        held = quarters[q]
        fit = [t for k, part in enumerate(quarters) if k != q for t in part]
        x_fit, y_fit = _xy(fit, norm)
        x_held, y_held = _xy(held, norm)
        before.append(evaluate(pretrained, x_held, y_held, cfg.micro_batch)["pred"])
        net = pretrained.copy()
        trainer = Trainer(net, settings, np.random.default_rng([cfg.seed, subject, q]))
        for epoch in range(cfg.finetune_epochs):
            trainer.train_epoch(x_fit, y_fit, epoch)
        after.append(evaluate(net, x_held, y_held, cfg.micro_batch)["pred"])
        y_all.append(y_held)
        events += trainer.events()["total"]
    y = np.concatenate(y_all)
    b = np.concatenate(before)
    a = np.concatenate(after)
    return {"subject": subject, "n_trials": int(len(y)), "correct_before": int(np.sum(b == y)),
            "correct_after": int(np.sum(a == y)), "accuracy_before": 100.0 * float(np.mean(b == y)),
            "accuracy_after": 100.0 * float(np.mean(a == y)), "events": events}


def run_sstl(cfg: ExperimentConfig, writer: RunWriter | None = None) -> dict:
    """Subject-specific fine-tuning of selected layers on top of an on-device model."""
    cfg.validate()
    writer = _start(cfg, writer, "runs/sstl")
    trials = load_dataset(cfg)
    plan = fold_plan(cfg, trials)
    writer.write_manifest(cfg.to_dict(), dataset_digest(trials), {"folds": plan.test_subjects})
    subjects = []
    for fold in _folds(cfg, plan):
        data = prepare_fold(trials, plan, fold)
        net, norm = _load_or_train(cfg, writer, data, fold, "device", "pretrain_device")
        norm = norm or data.normalizer
        for subject in plan.test_subjects[fold]:
            own = [t for t in trials if t.subject_id == subject]
            if len(own) < 4:
                log.info("subject %d skipped: %d trials cannot be split four ways", subject, len(own))
                writer.record("subject_skipped", subject=subject, n_trials=len(own))
                continue
            r = finetune_subject(cfg, net, norm, own, subject)
            r["fold"] = fold
            subjects.append(r)
            writer.record("subject", **r)
    n = sum(r["n_trials"] for r in subjects)
    summary = {
        "subjects": subjects,
        "cumulative_accuracy_before": 100.0 * sum(r["correct_before"] for r in subjects) / max(n, 1),
        "cumulative_accuracy_after": 100.0 * sum(r["correct_after"] for r in subjects) / max(n, 1),
        "layers_to_finetune": list(cfg.layers_to_finetune),
        "config_digest": config_digest(cfg.to_dict()),
    }
    summary["delta"] = summary["cumulative_accuracy_after"] - summary["cumulative_accuracy_before"]
    writer.summary(summary)
    plots.render_sstl(writer.dir, subjects)
    return summary


def run_fit_device(cfg: ExperimentConfig, writer: RunWriter | None = None) -> KernelFit:
    """Calibrate the kernel from a pulse log; writes kernel.json, levels.csv and figures."""
    if not cfg.pulse_log:
        raise ConfigError("fit_device requires pulse_log")
    writer = _start(cfg, writer, "runs/fit_device")
    records = read_pulse_log(cfg.pulse_log)
    writer.write_manifest(cfg.to_dict(), digest_arrays([np.array([[r.pulse_index, r.pulse_amplitude_V,
                                                                   r.pulse_width_us, r.read_conductance_S]
                                                                  for r in records])]))
    pos = Polarity.coerce(cfg.positive_polarity)
    samples = samples_from_log(records, cfg.g_min, cfg.g_max, pos)
    fit = fit_kernel(samples)
    levels = {}
    rows = []
    for pol in Polarity:
        stats = level_statistics(grouped_reads_from_log(records, pol, pos))
        levels[pol.value] = stats
        for s in stats:
            rows.append({"polarity": pol.value, "pulse_amplitude_V": s.pulse_amplitude,
                         "mean_conductance": s.mean_conductance,
                         "std_conductance": "" if s.std_conductance is None else s.std_conductance,
                         "sample_count": s.sample_count})
    rel = [s.relative_std for st in levels.values() for s in st if s.relative_std is not None]
    fit.metadata["max_relative_std"] = max(rel) if rel else None
    fit.metadata["source"] = str(cfg.pulse_log)
    fit.save(writer.path("kernel.json"))
    import csv
    with open(writer.path("levels.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["polarity", "pulse_amplitude_V", "mean_conductance",
                                           "std_conductance", "sample_count"])
        w.writeheader()
        w.writerows(rows)
    writer.summary(fit.to_dict())
    plots.render_kernel_fit(writer.dir, samples, fit.params, levels)
    return fit


def run_synth_bench(cfg: ExperimentConfig, writer: RunWriter | None = None) -> dict:
    """Desk-scale benchmark on synthetic trials: software, device epsilon sweep, quantized transfer."""
    writer = _start(cfg, writer, "runs/synth_bench")
    spec = synth_spec(cfg)
    train = synth_dataset(spec, cfg.synth_train, cfg.seed)
    test = synth_dataset(spec, cfg.synth_test, cfg.seed + 10_000)
    data = prepare_split(train, test, test)
    writer.write_manifest(cfg.to_dict(), dataset_digest(train + test))
    out: dict[str, Any] = {"config_digest": config_digest(cfg.to_dict())}

    t0 = time.time()
    net = _init_net(cfg, 0)
    _, hist = train_network(net, settings_for(cfg, "software"), data, np.random.default_rng([cfg.seed, 0, 1]),
                            writer, "software", 0, resume=cfg.resume)
    out["software"] = {"test_accuracy": evaluate(net, data.x_test, data.y_test)["accuracy"],
                       "curve": [h["val_accuracy"] for h in hist], "seconds": time.time() - t0}
    _save_final(writer, net, "software", data)

    out["device"] = {}
    for eps in cfg.epsilons or [cfg.epsilon]:
        t0 = time.time()
        dnet = _init_net(cfg, 0)
        trainer, hist = train_network(dnet, settings_for(cfg, "device", eps), data,
                                      np.random.default_rng([cfg.seed, 0, 1]), writer,
                                      f"device_eps{eps:g}", 0, resume=cfg.resume)
        out["device"][f"{eps:g}"] = {
            "test_accuracy": evaluate(dnet, data.x_test, data.y_test)["accuracy"],
            "total_events": trainer.events()["total"],
            "curve": [h["val_accuracy"] for h in hist],
            "events_curve": [h["cumulative_events"] for h in hist],
            "seconds": time.time() - t0,
        }

    t0 = time.time()
    quant_only = quantize_network(net, cfg.quant_levels, 0.0, np.random.default_rng(0))
    out["quantized_accuracy"] = evaluate(quant_only, data.x_test, data.y_test)["accuracy"]
    r = retune(cfg, net, data, writer, 0, cfg.quant_levels, cfg.eta, cfg.retune_epochs)
    r.pop("network")
    r["seconds"] = time.time() - t0
    out["retune"] = r
    writer.summary(out)
    plots.render_run(writer.dir)
    return out


REGIME_RUNNERS = {
    "baseline_software": run_baseline,
    "on_device": run_on_device,
    "sstl": run_sstl,
    "transfer_retune": run_transfer_retune,
    "fit_device": run_fit_device,
    "synth_bench": run_synth_bench,
}


def run(cfg: ExperimentConfig, writer: RunWriter | None = None):
    cfg.validate()
    return REGIME_RUNNERS[cfg.regime](cfg, writer)
