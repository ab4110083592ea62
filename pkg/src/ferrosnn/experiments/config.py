"""Declarative experiment configuration."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

REGIMES = ("baseline_software", "on_device", "sstl", "transfer_retune", "fit_device", "synth_bench")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    regime: str = "synth_bench"
    out_dir: str | None = None
    seed: int = 0

    # data
    dataset: str = "synthetic"              # "synthetic" or "real"
    data_root: str | None = None
    trial_cache: str | None = None
    layout_file: str | None = None
    cue_table_file: str | None = None
    exclude_subjects: list[int] = field(default_factory=list)
    expected_subjects: int | None = 103
    n_folds: int = 5
    folds: list[int] | None = None          # None: all folds
    val_fraction: float = 0.2

    # synthetic data
    synth_snr: float = 1.0
    synth_train: int = 400
    synth_test: int = 100
    synth_subjects: int = 10
    synth_trials_per_subject: int = 48
    synth_shift: float = 0.0

    # network
    width_divisor: int = 1
    timesteps: int = 160
    v_th: float = 0.3
    surrogate_amplitude: float = 1.0
    surrogate_window: float = 0.25
    beta_init: float = 0.5
    gamma_init: float = 0.5

    # optimisation
    epochs: int = 20
    batch_size: int = 64
    lr_initial: float = 1e-4
    lr_final: float = 1e-5
    micro_batch: int = 16
    time_weight_lr_scale: float = 1.0      # temporal weights step at this fraction of the lr

    # device
    kernel_file: str | None = None
    epsilon: float = 0.025
    epsilon_asym: float = 1.0
    epsilons: list[float] | None = None     # sweep; None: just epsilon
    max_events_per_batch: int = 1
    write_noise_std: float = 0.0

    # transfer / re-tune
    checkpoint: str | None = None
    quant_levels: int | None = 3
    eta: float = 0.25
    retune_epochs: int = 4
    retune_lr: float | None = None

    # subject-specific fine-tuning
    layers_to_finetune: list[str] | None = None
    finetune_epochs: int = 5
    finetune_batch_size: int = 1
    finetune_lr: float = 6e-4

    # device calibration
    pulse_log: str | None = None
    g_min: float | None = None
    g_max: float | None = None
    positive_polarity: str = "LTD"

    resume: bool = False

    def validate(self) -> "ExperimentConfig":
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.dataset not in ("synthetic", "real"):
            raise ConfigError(f"dataset must be 'synthetic' or 'real', got {self.dataset!r}")
        if self.regime == "sstl" and not self.layers_to_finetune:
            raise ConfigError("sstl requires layers_to_finetune")
        if self.regime == "fit_device" and not self.pulse_log:
            raise ConfigError("fit_device requires pulse_log")
        if self.dataset == "real" and self.regime != "fit_device" and not (self.data_root or self.trial_cache):
            raise ConfigError("real dataset requires data_root or trial_cache")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.quant_levels is not None and self.quant_levels < 2:
            raise ConfigError("quant_levels must be >= 2 (or null for no quantization)")
        if self.epsilon <= 0 or self.epsilon_asym <= 0:
            raise ConfigError("epsilon and epsilon_asym must be > 0")
        if self.time_weight_lr_scale < 0:
            raise ConfigError("time_weight_lr_scale must be >= 0")
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, d: Mapping[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**dict(d))

    def updated(self, overrides: Mapping[str, Any]) -> "ExperimentConfig":
        d = self.to_dict()
        known = set(d)
        unknown = set(overrides) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d.update(overrides)
        return ExperimentConfig(**d)


def load_config_file(path: str | Path) -> dict[str, Any]:
    """YAML or JSON mapping of config fields."""
    text = Path(path).read_text()
    data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data
