"""Run orchestration shared by the CLI and the test suite: dataset caching,
fold loops, the epoch loop with metrics/diagnostics/checkpoints, and
deterministic metrics CSV output.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from . import checkpoint as ckpt
from . import tasks
from .diagnostics import NormTraceRecorder, default_selectors, record_histograms
from .network import build
from .tensor import Prng
from .trainer import OptState, TrainAbort, evaluate, train_epoch

_DATASET_CACHE = {}


def dataset_for(spec, seed):
    """Generate (or reuse) the deterministic dataset for (spec, seed)."""
    key = (repr(spec), seed)
    if key not in _DATASET_CACHE:
        _DATASET_CACHE[key] = tasks.generate(spec, seed)
    return _DATASET_CACHE[key]


def data_cache_dir(default_out):
    return os.environ.get("DETREND_DATA_DIR", os.path.join(default_out, "data"))


@dataclass
class RunResult:
    history: list  # one metrics dict per epoch
    model: object
    opt: object
    rng: object
    norm_trace: object = None
    histograms: dict = field(default_factory=dict)
    aborted: bool = False

    def epochs_to_train_joint(self, threshold):
        """First epoch index (1-based) whose train joint accuracy reaches
        `threshold`; one past the last epoch if never reached."""
        for row in self.history:
            if row["train_joint_acc"] >= threshold:
                return row["epoch"]
        return len(self.history) + 1

    @property
    def final_test(self):
        for row in reversed(self.history):
            if "test_joint_acc" in row:
                return row
        return None


def run_training(train_set, test_set, net_config, train_cfg, crop,
                 eval_every=1, diag=None, histogram_epochs=(),
                 neurons_per_layer=8, out_dir=None, checkpoint_every=0,
                 resume_from=None, epoch_callback=None):
    """Train a model on one fold; returns a RunResult.

    All randomness flows from train_cfg.seed: model init and the shuffle/
    augment stream are derived sub-streams, so (config, seed) fixes the run.
    """
    root = Prng(train_cfg.seed)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    dtype = np.float64 if train_cfg.precision == "f64" else np.float32
    model = build(net_config, root.spawn(0), dtype=dtype)
    opt = OptState(model.named_params())
    rng = root.spawn(1)
    start_epoch = 0
    if resume_from:
        start_epoch = ckpt.load(resume_from, model, opt, rng)

    aug = partial(tasks.augment, crop=crop)
    eval_transform = lambda f, _rng: tasks.center_crop(f, crop)
    t_max_data = max(s.length for s in train_set)
    history = []
    histograms = {}
    selectors = None

    if 1 in histogram_epochs or 0 in histogram_epochs:
        selectors = default_selectors(model, neurons_per_layer)

    for epoch in range(start_epoch + 1, train_cfg.epochs + 1):
        try:
            metrics = train_epoch(model, train_set, train_cfg, opt, rng,
                                  t_max_data=t_max_data, augment=aug, diag=diag)
        except TrainAbort as err:
            if out_dir and err.snapshot is not None:
                np.savez(os.path.join(out_dir, "abort_snapshot.npz"), **err.snapshot)
            raise
        row = {"epoch": epoch, **metrics}
        if test_set and (epoch % eval_every == 0 or epoch == train_cfg.epochs):
            ev = evaluate(model, test_set, train_cfg.batch_size, dtype=dtype,
                          transform=eval_transform)
            row["test_loss"] = ev["loss"]
            row["test_acc"] = ev["acc"]
            row["test_joint_acc"] = ev["joint_acc"]
        history.append(row)
        if epoch in histogram_epochs:
            if selectors is None:
                selectors = default_selectors(model, neurons_per_layer)
            histograms[epoch] = record_histograms(model, train_set, epoch, selectors,
                                                  transform=eval_transform, dtype=dtype)
        if out_dir and checkpoint_every and epoch % checkpoint_every == 0:
            ckpt.save(os.path.join(out_dir, f"epoch{epoch:04d}.ckpt"), model, opt, rng, epoch)
        if epoch_callback:
            epoch_callback(epoch, row, model)
    if out_dir:
        ckpt.save(os.path.join(out_dir, "final.ckpt"), model, opt, rng, len(history) + start_epoch)
    return RunResult(history=history, model=model, opt=opt, rng=rng,
                     norm_trace=diag, histograms=histograms)


def metrics_header(n_heads, with_test=True):
    cols = ["epoch", "fold", "train_loss"]
    cols += [f"train_acc_{h}" for h in range(n_heads)]
    cols += ["train_joint_acc"]
    if with_test:
        cols += ["test_loss"] + [f"test_acc_{h}" for h in range(n_heads)] + ["test_joint_acc"]
    return cols


def metrics_rows(history, fold, n_heads):
    rows = []
    for r in history:
        row = [r["epoch"], fold, repr(r["train_loss"])]
        row += [repr(a) for a in r["train_acc"]]
        row += [repr(r["train_joint_acc"])]
        if "test_joint_acc" in r:
            row += [repr(r["test_loss"])]
            row += [repr(a) for a in r["test_acc"]]
            row += [repr(r["test_joint_acc"])]
        else:
            row += [""] * (n_heads + 2)
        rows.append(row)
    return rows


def run_experiment(cfg, out_dir=None, resume_from=None):
    """Run every requested fold of a config; writes metrics.csv and
    diagnostics under out_dir. Wall time goes to a separate timing file so
    metrics.csv stays a pure function of (config, seed)."""
    spec = cfg.task_spec()
    net_config = cfg.network_config(heads=spec.heads)
    train_cfg = cfg.train_config()
    dataset = dataset_for(spec, cfg["task.data_seed"])
    crop = spec.grid
    out_dir = out_dir or cfg["out"]
    os.makedirs(out_dir, exist_ok=True)
    n_heads = len(spec.heads)

    results = {}
    t0 = time.time()
    with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(metrics_header(n_heads))
        for fold in cfg["folds"]:
            train_set, test_set = tasks.split(dataset, int(fold))
            diag = NormTraceRecorder() if cfg["diag.norm_traces"] else None
            fold_dir = os.path.join(out_dir, f"fold{fold}")
            os.makedirs(fold_dir, exist_ok=True)
            res = run_training(
                train_set, test_set, net_config, train_cfg, crop,
                eval_every=int(cfg["eval_every"]), diag=diag,
                histogram_epochs=tuple(cfg["diag.histogram_epochs"]),
                neurons_per_layer=int(cfg["diag.neurons_per_layer"]),
                out_dir=fold_dir, checkpoint_every=int(cfg["checkpoint_every"]),
                resume_from=resume_from,
            )
            for row in metrics_rows(res.history, fold, n_heads):
                w.writerow(row)
            if diag is not None:
                diag.write_csv(os.path.join(fold_dir, "norm_traces.csv"))
            results[int(fold)] = res
    with open(os.path.join(out_dir, "timing.txt"), "w") as f:
        f.write(f"wall_time_seconds={time.time() - t0:.3f}\n")
    return results
