"""Analysis instruments: activation histograms and their drift over epochs,
L2-norm traces with EMA smoothing, and per-neuron time series of the
candidate hidden state, hidden state, update gate, and detrended output.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .network import forward_video

N_BINS = 200
BIN_LO, BIN_HI = -1.0, 1.0


@dataclass
class Histogram:
    """200 equal bins on [-1, 1]; out-of-range observations clamp to edge bins."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros(N_BINS, dtype=np.int64))
    epoch: int = 0
    neuron: str = ""

    def add(self, values):
        v = np.asarray(values, dtype=np.float64).reshape(-1)
        idx = np.floor((v - BIN_LO) / (BIN_HI - BIN_LO) * N_BINS).astype(int)
        np.clip(idx, 0, N_BINS - 1, out=idx)
        self.counts += np.bincount(idx, minlength=N_BINS)

    @property
    def total(self):
        return int(self.counts.sum())

    def normalized(self):
        t = self.total
        if t == 0:
            raise ValueError("empty histogram")
        return self.counts / t

    @staticmethod
    def bin_edges():
        return np.linspace(BIN_LO, BIN_HI, N_BINS + 1)


def shift_metric(hist_a, hist_b):
    """Total-variation distance between two normalized histograms, in [0, 1]."""
    return 0.5 * float(np.abs(hist_a.normalized() - hist_b.normalized()).sum())


@dataclass
class NeuronSelector:
    layer: str  # e.g. "gru2"
    channel: int
    pos: tuple = (0, 0)  # spatial position within the feature map

    def label(self):
        return f"{self.layer}.c{self.channel}.y{self.pos[0]}x{self.pos[1]}"

    def pick(self, arr):
        # arr: (N, C, H, W) or (N, C)
        if arr.ndim == 4:
            return arr[:, self.channel, self.pos[0], self.pos[1]]
        return arr[:, self.channel]


def record_histograms(model, dataset, epoch, selectors, batch_size=8, dtype=np.float32,
                      transform=None):
    """Histograms of hidden-state and detrended-output values for selected
    neurons, over all (valid) timesteps of all samples."""
    from .trainer import collate

    hists = {}
    for sel in selectors:
        hists[(sel.label(), "h")] = Histogram(epoch=epoch, neuron=sel.label())
        hists[(sel.label(), "y")] = Histogram(epoch=epoch, neuron=sel.label())
    for i in range(0, len(dataset), batch_size):
        samples = dataset[i : i + batch_size]
        frames, lengths, _ = collate(samples, dtype=dtype, augment=transform)
        _, _, records = forward_video(model, frames, lengths, train=False, record=True)
        for sel in selectors:
            recs = records.get(sel.layer)
            if recs is None:
                raise KeyError(f"no recorded layer {sel.layer!r}")
            for t, rec in enumerate(recs):
                valid = lengths > t
                hists[(sel.label(), "h")].add(sel.pick(rec.h.data)[valid])
                if rec.y is not None:
                    hists[(sel.label(), "y")].add(sel.pick(rec.y.data)[valid])
    return hists


def write_histograms_csv(hists, path):
    edges = Histogram.bin_edges()
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "neuron", "stream", "bin_lo", "count"])
        for (label, stream), h in sorted(hists.items()):
            for b in range(N_BINS):
                w.writerow([h.epoch, label, stream, f"{edges[b]:.2f}", int(h.counts[b])])


class NormTraceRecorder:
    """Per-iteration raw L2 norms with an EMA(0.99)-smoothed companion series.

    Plug into the training loop as its `diag` sink.
    """

    def __init__(self, decay=0.99, wants_records=True):
        self.decay = decay
        self.wants_records = wants_records  # ask the trainer for step records (detrended L2)
        self.grad_raw = []
        self.grad_smooth = []
        self.y_raw = []
        self.y_smooth = []

    @staticmethod
    def _smooth(series, raw, decay):
        if not series:
            series.append(raw)
        else:
            series.append(decay * series[-1] + (1.0 - decay) * raw)

    def on_iteration(self, grad_norm, detrended_l2=None):
        self.grad_raw.append(grad_norm)
        self._smooth(self.grad_smooth, grad_norm, self.decay)
        if detrended_l2 is not None:
            self.y_raw.append(detrended_l2)
            self._smooth(self.y_smooth, detrended_l2, self.decay)

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["iter", "grad_raw", "grad_smoothed", "y_raw", "y_smoothed"])
            for i in range(len(self.grad_raw)):
                yr = repr(self.y_raw[i]) if i < len(self.y_raw) else ""
                ys = repr(self.y_smooth[i]) if i < len(self.y_smooth) else ""
                w.writerow([i, repr(self.grad_raw[i]), repr(self.grad_smooth[i]), yr, ys])


def ema_smooth(raw, decay=0.99):
    """Reference smoother: s_0 = raw_0, s_t = decay*s_{t-1} + (1-decay)*raw_t."""
    out = []
    for r in raw:
        out.append(r if not out else decay * out[-1] + (1.0 - decay) * r)
    return out


@dataclass
class NeuronTrace:
    neuron: str
    h_tilde: np.ndarray
    h: np.ndarray
    z: np.ndarray
    y: np.ndarray

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "h_tilde", "h", "z", "y"])
            for t in range(len(self.h)):
                w.writerow([t, repr(float(self.h_tilde[t])), repr(float(self.h[t])),
                            repr(float(self.z[t])), repr(float(self.y[t]))])


def record_neuron_trace(model, sample, selector, dtype=np.float32, transform=None):
    """Full per-step (h~, h, z, y) series of one neuron for one sample.

    Requires a detrending cell (y stream present).
    """
    from .trainer import collate

    frames, lengths, _ = collate([sample], dtype=dtype, augment=transform)
    _, _, records = forward_video(model, frames, lengths, train=False, record=True)
    recs = records.get(selector.layer)
    if recs is None:
        raise KeyError(f"no recorded layer {selector.layer!r}")
    t_len = int(lengths[0])
    h_tilde = np.array([float(selector.pick(r.h_tilde.data)[0]) for r in recs[:t_len]])
    h = np.array([float(selector.pick(r.h.data)[0]) for r in recs[:t_len]])
    z = np.array([float(selector.pick(r.z.data)[0]) for r in recs[:t_len]])
    if recs[0].y is None:
        raise ValueError("neuron traces need a detrending cell (no y stream)")
    y = np.array([float(selector.pick(r.y.data)[0]) for r in recs[:t_len]])
    return NeuronTrace(neuron=selector.label(), h_tilde=h_tilde, h=h, z=z, y=y)


def default_selectors(model, per_layer=8):
    """Sample up to `per_layer` channels per recurrent layer, center position."""
    sels = []
    chain = model.config.spatial_chain()
    for i, ch in enumerate(model.config.gru_channels, start=1):
        h, w = chain[2] if i == 1 else chain[4]
        step = max(1, ch // per_layer)
        for c in list(range(0, ch, step))[:per_layer]:
            sels.append(NeuronSelector(layer=f"gru{i}", channel=c, pos=(h // 2, w // 2)))
    return sels
