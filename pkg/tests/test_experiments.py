import json

import numpy as np
import pytest

from ferrosnn.data.edf import write_edf
from ferrosnn.device_model import REFERENCE_PARAMS, synth_pulse_log, write_pulse_log
from ferrosnn.experiments import (
    ConfigError,
    ExperimentConfig,
    quantize_network,
    read_csv,
    run,
    subject_quarters,
)
from ferrosnn.experiments.cli import main, resolve_config, build_parser
from ferrosnn.experiments.io import load_training_checkpoint, save_training_checkpoint
from ferrosnn.experiments.runs import finetune_subject, prepare_split, retune
from ferrosnn.experiments.training import Trainer, TrainSettings, trainable_params
from ferrosnn.data import SynthSpec, synth_dataset
from ferrosnn.data.preprocessing import GridNormalizer, Trial
from ferrosnn.snn import NetworkSpec, NetworkState

from helpers import make_recording

TINY = dict(width_divisor=16, timesteps=8, micro_batch=8)


def tiny_cfg(tmp_path, **kw):
    d = dict(TINY, out_dir=str(tmp_path / "run"), epochs=1, batch_size=8, synth_subjects=5,
             synth_trials_per_subject=8, synth_train=24, synth_test=8, lr_initial=1e-3, lr_final=1e-4)
    d.update(kw)
    return ExperimentConfig(**d)


def tiny_data(n=24, seed=0, T=8):
    trials = synth_dataset(SynthSpec(timesteps=T, snr=2.0), n, seed)
    return prepare_split(trials[: n - 8], trials[n - 8:], trials[n - 8:])


def tiny_net(seed=0, T=8):
    return NetworkState.init(NetworkSpec.scaled(16, timesteps=T), np.random.default_rng(seed))


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(regime="nope").validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(regime="sstl").validate()
    with pytest.raises(ConfigError):
        ExperimentConfig().updated({"bogus": 1})
    cfg = ExperimentConfig().updated({"epsilon": 0.05})
    assert cfg.epsilon == 0.05 and ExperimentConfig.from_mapping(cfg.to_dict()) == cfg


def test_cli_config_file_overrides_flags(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("epsilon: 0.075\nseed: 4\n")
    args = build_parser().parse_args(["on-device", "--epsilon", "0.05", "--epochs", "3", "--config", str(p)])
    cfg = resolve_config(args)
    assert cfg.regime == "on_device" and cfg.epsilon == 0.075 and cfg.seed == 4 and cfg.epochs == 3


def test_cli_synth_bench_defaults():
    cfg = resolve_config(build_parser().parse_args(["synth-bench"]))
    assert cfg.width_divisor == 8 and cfg.epsilons == [0.025, 0.05, 0.075]
    assert cfg.time_weight_lr_scale == 0.1


def test_time_weight_lr_scale():
    data = tiny_data()
    moved = {}
    for scale in (1.0, 0.25):
        net = tiny_net()
        before = {k: v.copy() for k, v in net.params.items()}
        t = Trainer(net, TrainSettings(micro_batch=8, time_weight_lr_scale=scale), np.random.default_rng(0))
        t.step(data.x_train[:8], data.y_train[:8], 1e-3)
        moved[scale] = {k: net.params[k] - before[k] for k in before}
    np.testing.assert_allclose(moved[0.25]["w_ts"], 0.25 * moved[1.0]["w_ts"], rtol=1e-12, atol=0)
    np.testing.assert_array_equal(moved[0.25]["fc2"], moved[1.0]["fc2"])
    assert np.all(tiny_net().params["w_ts"] == 1.0 / 8)


def test_trainable_params():
    net = tiny_net()
    assert trainable_params(net, ["fc2"], False) == {"fc2", "fc2.beta", "fc2.gamma"}
    with pytest.raises(ValueError):
        trainable_params(net, ["fc9"])


def test_zero_epochs_is_chance(tmp_path):
    cfg = tiny_cfg(tmp_path, epochs=0, regime="baseline_software", folds=[0])
    m = run(cfg)
    assert 0.0 <= m.mean_test_accuracy <= 100.0
    out = tmp_path / "run"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["regime"] == "baseline_software" and manifest["dataset_digest"]


def test_baseline_outputs_and_determinism(tmp_path):
    a = run(tiny_cfg(tmp_path / "a", regime="baseline_software", folds=[1]))
    b = run(tiny_cfg(tmp_path / "b", regime="baseline_software", folds=[1]))
    assert a.fold_test_accuracy == b.fold_test_accuracy
    rows = read_csv(tmp_path / "a" / "run" / "curves.csv")
    assert [r["epoch"] for r in rows] == ["0", "1"]
    assert (tmp_path / "a" / "run" / "figures" / "accuracy_vs_epoch.png").stat().st_size > 0
    wa = (tmp_path / "a" / "run" / "checkpoints" / "baseline-fold1.bin").read_bytes()
    wb = (tmp_path / "b" / "run" / "checkpoints" / "baseline-fold1.bin").read_bytes()
    assert wa == wb


def test_on_device_events_logged(tmp_path):
    m = run(tiny_cfg(tmp_path, regime="on_device", folds=[0], epochs=2, epsilons=[0.025, 0.075]))
    per = m.extra["per_epsilon"]
    assert set(per) == {"0.025", "0.075"}
    ev = read_csv(tmp_path / "run" / "events.csv")
    assert ev and {"phase", "layer", "ltp_events", "ltd_events", "cumulative_total"} <= set(ev[0])
    figs = {p.name for p in (tmp_path / "run" / "figures").iterdir()}
    assert {"accuracy_vs_epoch.png", "events_vs_epoch.png", "accuracy_vs_events.png"} <= figs


def test_device_mode_counts_follow_threshold():
    data = tiny_data()
    totals = []
    for eps in (0.025, 0.075):
        net = tiny_net()
        s = TrainSettings(epochs=2, batch_size=4, lr_initial=1e-2, lr_final=1e-3, mode="device", micro_batch=8)
        s.policy = type(s.policy)(eps)
        t = Trainer(net, s, np.random.default_rng(0))
        for e in range(2):
            t.train_epoch(data.x_train, data.y_train, e)
        totals.append(t.events()["total"])
    assert totals[0] > totals[1] > 0


def test_resume_matches_uninterrupted(tmp_path):
    data = tiny_data()
    s = TrainSettings(epochs=3, batch_size=8, lr_initial=1e-3, lr_final=1e-4, mode="device", micro_batch=8)
    ref = Trainer(tiny_net(), s, np.random.default_rng(5))
    for e in range(3):
        ref.train_epoch(data.x_train, data.y_train, e)
    part = Trainer(tiny_net(), s, np.random.default_rng(5))
    part.train_epoch(data.x_train, data.y_train, 0)
    save_training_checkpoint(tmp_path / "ck", part, 0, [{"epoch": 1}])
    resumed = Trainer(tiny_net(seed=9), s, np.random.default_rng(0))
    last, hist = load_training_checkpoint(tmp_path / "ck", resumed)
    assert last == 0 and hist == [{"epoch": 1}]
    for e in (1, 2):
        resumed.train_epoch(data.x_train, data.y_train, e)
    for k in ref.net.params:
        np.testing.assert_array_equal(ref.net.params[k], resumed.net.params[k])
    assert ref.events() == resumed.events()


def test_retune_noop_keeps_accuracy():
    data = tiny_data()
    net = tiny_net()
    cfg = ExperimentConfig(**TINY, epsilon=0.025)
    r = retune(cfg, net, data, None, 0, None, 0.0, 0)
    assert r["degraded_accuracy"] == r["reference_accuracy"]
    q = quantize_network(net, None, 0.0, np.random.default_rng(0))
    for k in net.params:
        np.testing.assert_array_equal(q.params[k], net.params[k])


def test_quantize_network_levels():
    net = tiny_net()
    q = quantize_network(net, 3, 0.0, np.random.default_rng(0))
    b = net.spec.bounds()["fc1"].bound
    assert set(np.unique(np.round(q.params["fc1"] / b, 12))) <= {-1.0, 0.0, 1.0}
    np.testing.assert_array_equal(q.params["w_ts"], net.params["w_ts"])


def test_subject_quarters_contiguous():
    trials = [Trial(np.zeros((2, 10, 11)), 0, 1, run, onset) for run in (12, 4, 8) for onset in (3.0, 1.0, 2.0)]
    q = subject_quarters(trials)
    assert [len(p) for p in q] == [3, 2, 2, 2]
    order = [(t.run_id, t.onset) for p in q for t in p]
    assert order == sorted(order)


def test_finetune_zero_lr_is_noop():
    trials = synth_dataset(SynthSpec(timesteps=8, snr=2.0), 16, 0)
    net = tiny_net()
    cfg = ExperimentConfig(**TINY, finetune_lr=0.0, finetune_epochs=1, layers_to_finetune=["fc2"])
    r = finetune_subject(cfg, net, GridNormalizer.fit(trials), trials, 1)
    assert r["accuracy_before"] == r["accuracy_after"]
    assert r["n_trials"] == 16


def test_sstl_run(tmp_path):
    cfg = tiny_cfg(tmp_path, regime="sstl", folds=[0], layers_to_finetune=["fc1", "fc2"], finetune_epochs=1,
                   finetune_batch_size=4)
    s = run(cfg)
    assert len(s["subjects"]) == 1
    assert s["delta"] == s["cumulative_accuracy_after"] - s["cumulative_accuracy_before"]
    assert (tmp_path / "run" / "figures" / "sstl_per_subject.png").exists()


def test_transfer_retune_from_checkpoint(tmp_path):
    base = tiny_cfg(tmp_path / "b", regime="baseline_software", folds=[0])
    run(base)
    ck = str(tmp_path / "b" / "run" / "checkpoints" / "baseline-fold{fold}")
    m = run(tiny_cfg(tmp_path / "r", regime="transfer_retune", folds=[0], checkpoint=ck, retune_epochs=1))
    r = m.extra["per_fold"]["0"]
    assert len(r["retune_curve"]) == 2


def test_fit_device_run(tmp_path):
    log = tmp_path / "pulses.csv"
    write_pulse_log(log, synth_pulse_log())
    fit = run(ExperimentConfig(regime="fit_device", pulse_log=str(log), g_min=1e-8, g_max=1e-7,
                               out_dir=str(tmp_path / "fit")))
    for k, v in REFERENCE_PARAMS.to_dict().items():
        assert getattr(fit.params, k) == pytest.approx(v, rel=0.05)
    assert (tmp_path / "fit" / "kernel.json").exists()
    assert (tmp_path / "fit" / "figures" / "kernel_fit.png").exists()
    assert read_csv(tmp_path / "fit" / "levels.csv")


def test_cli_exit_codes(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["fit-device", "--pulse-log", str(empty), "--out-dir", str(tmp_path / "f")]) == 2
    assert main(["baseline", "--dataset", "real", "--data-root", str(tmp_path / "missing"),
                 "--out-dir", str(tmp_path / "x")]) == 2
    args = ["synth-bench", "--out-dir", str(tmp_path / "s"), "--epochs", "1", "--synth-train", "16",
            "--synth-test", "8", "--timesteps", "8", "--width-divisor", "16", "--epsilons", "0.05"]
    assert main(args) == 0
    out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert "software" in out and "retune" in out


def test_real_dataset_pipeline(tmp_path):
    root = tmp_path / "eeg"
    root.mkdir()
    for s in range(1, 6):
        for r in (4, 8, 12):
            rec = make_recording(n_records=8, cues=[(1.0, 4.1, "T1"), (4.0, 4.1, "T2")], seed=10 * s + r)
            (root / f"S{s:03d}R{r:02d}.edf").write_bytes(write_edf(rec))
    cfg = ExperimentConfig(regime="baseline_software", dataset="real", data_root=str(root), expected_subjects=5,
                           out_dir=str(tmp_path / "out"), epochs=1, batch_size=8, folds=[2],
                           width_divisor=16, micro_batch=8, trial_cache=str(tmp_path / "cache"))
    m = run(cfg)
    assert list(m.fold_test_accuracy) == ["2"]
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["folds"] == [[1], [2], [3], [4], [5]]
    # the first load wrote the trial cache; a second run needs no recordings
    cached = cfg.updated({"data_root": None, "out_dir": str(tmp_path / "out2")})
    assert run(cached).fold_test_accuracy == m.fold_test_accuracy
