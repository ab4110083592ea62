"""Shared fixtures for gradient checks."""

import numpy as np

from ferrosnn.snn import NetworkSpec, NetworkState, NeuronConfig, SurrogateParams, loss_and_grads


def mini_network(seed=0, relaxed=True, window=0.5):
    """One conv filter per stage on a 2x2 grid, three timesteps, every layer type present."""
    spec = NetworkSpec(input_shape=(1, 2, 2), conv_channels=(1, 1, 1), conv_kernels=(1, 1, 1),
                       pool=1, tc_taps=3, hidden=3, n_classes=2, timesteps=3)
    cfg = NeuronConfig(v_th=0.3, surrogate=SurrogateParams(1.0, window), relaxed=relaxed)
    rng = np.random.default_rng(seed)
    net = NetworkState.init(spec, rng, cfg)
    for name in ("conv1", "conv2", "conv3", "tc1", "r1", "fc1", "fc2"):
        net.params[name] = rng.uniform(-1.0, 1.0, net.params[name].shape)
    for k in list(net.params):
        if k.endswith((".beta", ".gamma")):
            net.params[k] = np.array(rng.uniform(0.3, 0.9))
    net.params["w_ts"] = rng.uniform(0.2, 1.0, 3)
    x = rng.uniform(-1.0, 2.0, (2, 3, 1, 2, 2))
    y = np.array([0, 1])
    return net, x, y


def gradient_check(net, x, y, h=1e-6):
    """Relative errors of analytic vs central-difference gradients, one entry per scalar parameter."""
    _, grads, _ = loss_and_grads(x, y, net)
    errs = {}
    for name, p in net.params.items():
        flat = p.reshape(-1)
        g = grads[name].reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            lp = loss_and_grads(x, y, net)[0]
            flat[j] = old - h
            lm = loss_and_grads(x, y, net)[0]
            flat[j] = old
            fd = (lp - lm) / (2 * h)
            errs[f"{name}[{j}]"] = abs(g[j] - fd) / max(abs(g[j]), abs(fd), 1e-7)
    return errs


def window_boundary_hits(net, x, tol=1e-5):
    """Count membrane potentials sitting on a kink of the relaxed spike function."""
    from ferrosnn.snn import forward

    rec = forward(x, net)
    g = net.neuron.surrogate.window
    th = net.neuron.v_th
    n = 0
    for _, v, _ in rec.states.values():
        d = np.abs(np.abs(v - th) - g)
        n += int(np.sum(d < tol))
    return n


def physionet_labels():
    """The 64 channel labels as they appear in the public recordings (dots pad to 4 chars)."""
    from ferrosnn.data.preprocessing import load_layout

    return [(k + "....")[:4] if len(k) < 4 else k for k in load_layout()]


def make_recording(n_records=20, fs=160, cues=(), seed=0, labels=None, with_annotations=True):
    """Synthetic EDF+ recording: one-second records, noise on every channel, planted cue TALs."""
    from ferrosnn.data.edf import Annotation, EdfRecording, EdfSignal

    rng = np.random.default_rng(seed)
    labels = labels or physionet_labels()
    sigs = [EdfSignal(label=lab, physical_min=-8092, physical_max=8092, digital_min=-8092,
                      digital_max=8092, samples_per_record=fs) for lab in labels]
    samples = [rng.integers(-200, 200, n_records * fs).astype(np.int16) for _ in labels]
    if with_annotations:
        sigs.append(EdfSignal(label="EDF Annotations", physical_min=-1, physical_max=1,
                              digital_min=-32768, digital_max=32767, samples_per_record=60,
                              physical_dimension=""))
        samples.append(np.array([], dtype=np.int16))
    rec = EdfRecording(version="0", patient_id="X", recording_id="Startdate X", reserved="EDF+C",
                       n_records=n_records, record_duration=1.0, signals=sigs, samples=samples,
                       annotations=[Annotation(t, d, c) for t, d, c in cues])
    return rec
