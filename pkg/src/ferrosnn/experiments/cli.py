"""Command-line entry point: one subcommand per experiment regime."""

from __future__ import annotations

import argparse
import logging
import sys
import typing
from dataclasses import MISSING, fields
from typing import Sequence

from .config import ConfigError, ExperimentConfig, load_config_file
from .io import dumps

log = logging.getLogger("ferrosnn")

COMMANDS = {
    "fit-device": "fit_device",
    "baseline": "baseline_software",
    "on-device": "on_device",
    "sstl": "sstl",
    "transfer-retune": "transfer_retune",
    "synth-bench": "synth_bench",
}

# desk-scale defaults for the synthetic benchmark (scaled network, faster schedule)
SYNTH_BENCH_DEFAULTS = {"width_divisor": 8, "batch_size": 16, "lr_initial": 1e-3, "lr_final": 1e-4,
                        "retune_epochs": 1, "time_weight_lr_scale": 0.1, "epsilons": [0.025, 0.05, 0.075]}


def _bool(s: str) -> bool:
    v = s.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {s!r}")


def _none_or(conv):
    def f(s: str):
        return None if s.lower() in ("none", "null", "") else conv(s)
    return f


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    hints = typing.get_type_hints(ExperimentConfig)
    for f in fields(ExperimentConfig):
        if f.name == "regime":
            continue
        flag = "--" + f.name.replace("_", "-")
        hint = str(hints[f.name])
        optional = "None" in hint
        if "list[int]" in hint:
            p.add_argument(flag, dest=f.name, type=int, nargs="*", default=argparse.SUPPRESS)
        elif "list[float]" in hint:
            p.add_argument(flag, dest=f.name, type=float, nargs="*", default=argparse.SUPPRESS)
        elif "list[str]" in hint:
            p.add_argument(flag, dest=f.name, nargs="*", default=argparse.SUPPRESS)
        elif "bool" in hint:
            p.add_argument(flag, dest=f.name, type=_bool, default=argparse.SUPPRESS, metavar="BOOL")
        else:
            conv = int if "int" in hint else float if "float" in hint else str
            p.add_argument(flag, dest=f.name, type=_none_or(conv) if optional else conv,
                           default=argparse.SUPPRESS)
        default = f.default if f.default is not MISSING else f.default_factory()
        p._actions[-1].help = f"(default: {default})"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ferrosnn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML/JSON file; its values override command-line flags")
        _add_config_flags(p)
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    regime = COMMANDS[args.command]
    values = {"regime": regime}
    if regime == "synth_bench":
        values.update(SYNTH_BENCH_DEFAULTS)
    names = {f.name for f in fields(ExperimentConfig)}
    values.update({k: v for k, v in vars(args).items() if k in names})
    if args.config:
        from_file = load_config_file(args.config)
        if from_file.get("regime", regime) != regime:
            raise ConfigError(f"config file regime {from_file['regime']!r} does not match command {args.command!r}")
        values.update(from_file)
    return ExperimentConfig().updated(values).validate()


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    from . import runs

    try:
        cfg = resolve_config(args)
        result = runs.run(cfg)
    except (ConfigError, runs.DatasetMissingError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except AssertionError as e:
        print(f"runtime assertion failed: {e}", file=sys.stderr)
        return 1
    out = result.to_dict() if hasattr(result, "to_dict") else result
    print(dumps(_headline(out)))
    return 0


def _headline(out: dict) -> dict:
    """Compact stdout summary; the full record lives in summary.json."""
    drop = {"history", "subjects", "curve", "events_curve"}
    if isinstance(out, dict):
        return {k: _headline(v) for k, v in out.items() if k not in drop}
    return out


if __name__ == "__main__":
    sys.exit(main())
