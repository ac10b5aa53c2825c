"""Command-line entry points.

Commands: train, eval, gradcheck, diagnose, gen-data, plot.
Exit codes: 0 ok, 1 check failure, 2 config error, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from . import diagnostics, tasks
from .config import ConfigError, ExperimentConfig
from .experiment import dataset_for, run_experiment
from .gradcheck import cell_gradcheck
from .network import build
from .tensor import NumericError, Prng
from .trainer import TrainAbort, evaluate

EXIT_OK = 0
EXIT_CHECK_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_NUMERIC_ABORT = 3


def _add_common(p):
    p.add_argument("--config", help="experiment config file (key = value lines)")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config field (repeatable)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="run seed")
    p.add_argument("--precision", choices=("f32", "f64"), help="numeric precision")
    p.add_argument("--threads", type=int, default=1,
                   help="accepted for interface compatibility; execution is single-threaded")


def _load_config(args):
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    for ov in args.overrides:
        cfg.set_override(ov)
    if args.out:
        cfg["out"] = args.out
    if args.seed is not None:
        cfg["seed"] = args.seed
    if getattr(args, "precision", None):
        cfg["train.precision"] = args.precision
    return cfg


def cmd_train(args):
    cfg = _load_config(args)
    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.txt"), "w") as f:
        f.write(cfg.to_text())
    run_experiment(cfg, out_dir=out_dir, resume_from=args.resume)
    return EXIT_OK


def _rebuild(cfg, checkpoint_path):
    spec = cfg.task_spec()
    net_config = cfg.network_config(heads=spec.heads)
    dtype = np.float64 if cfg["train.precision"] == "f64" else np.float32
    model = build(net_config, Prng(int(cfg["seed"])).spawn(0), dtype=dtype)
    ckpt.load(checkpoint_path, model)
    return spec, model, dtype


def cmd_eval(args):
    cfg = _load_config(args)
    spec, model, dtype = _rebuild(cfg, args.checkpoint)
    dataset = dataset_for(spec, cfg["task.data_seed"])
    _, test_set = tasks.split(dataset, args.fold)
    transform = lambda f, _rng: tasks.center_crop(f, spec.grid)
    metrics = evaluate(model, test_set, int(cfg["train.batch_size"]), dtype=dtype,
                       transform=transform)
    for h, a in enumerate(metrics["acc"]):
        print(f"head{h}_acc={a:.4f}")
    print(f"joint_acc={metrics['joint_acc']:.4f}")
    print(f"loss={metrics['loss']:.6f}")
    return EXIT_OK


def cmd_gradcheck(args):
    report = cell_gradcheck(cell=args.cell, norm=args.norm, placement=args.placement,
                            t_len=args.T, step=args.step, tolerance=args.tolerance,
                            seed=args.seed or 0, corrupt_param=args.corrupt)
    status = "PASS" if report.passed else "FAIL"
    print(f"{status} cell={args.cell} norm={args.norm} placement={args.placement} "
          f"T={args.T} max_rel_err={report.max_rel_err:.3e} tol={report.tolerance:g}")
    if args.report_csv:
        report.write_csv(args.report_csv)
    return EXIT_OK if report.passed else EXIT_CHECK_FAILURE


def cmd_diagnose(args):
    cfg = _load_config(args)
    spec, model, dtype = _rebuild(cfg, args.checkpoint)
    dataset = dataset_for(spec, cfg["task.data_seed"])
    train_set, _ = tasks.split(dataset, args.fold)
    transform = lambda f, _rng: tasks.center_crop(f, spec.grid)
    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)

    selectors = diagnostics.default_selectors(model, int(cfg["diag.neurons_per_layer"]))
    hists = diagnostics.record_histograms(model, train_set, epoch=0, selectors=selectors,
                                          dtype=dtype, transform=transform)
    diagnostics.write_histograms_csv(hists, os.path.join(out_dir, "histograms.csv"))

    if model.config.norm in ("ad", "bn_ad", "ln_ad"):
        trace = diagnostics.record_neuron_trace(model, train_set[0], selectors[-1],
                                                dtype=dtype, transform=transform)
        trace.write_csv(os.path.join(out_dir, "neuron_trace.csv"))
    print(f"diagnostics written to {out_dir}")
    return EXIT_OK


def cmd_gen_data(args):
    cfg = _load_config(args)
    spec = cfg.task_spec()
    dataset = dataset_for(spec, cfg["task.data_seed"])
    out = args.data_dir or os.environ.get("DETREND_DATA_DIR") or os.path.join(cfg["out"], "data")
    tasks.export(dataset, out)
    print(f"{len(dataset)} samples exported to {out}")
    return EXIT_OK


def cmd_plot(args):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import csv as _csv

    with open(args.csv) as f:
        rows = list(_csv.DictReader(f))
    if not rows:
        print("empty CSV", file=sys.stderr)
        return EXIT_CHECK_FAILURE
    fields = [c for c in rows[0] if c not in (args.x,) and rows[0][c] not in ("", None)]
    fig, ax = plt.subplots(figsize=(7, 4))
    x = [float(r[args.x]) for r in rows if r.get(args.x)]
    for c in fields:
        try:
            y = [float(r[c]) for r in rows if r.get(args.x)]
        except ValueError:
            continue
        ax.plot(x[: len(y)], y, label=c)
    ax.set_xlabel(args.x)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(args.out_image, dpi=120)
    print(f"plot written to {args.out_image}")
    return EXIT_OK


def make_parser():
    p = argparse.ArgumentParser(prog="detrend",
                                description="recurrent-network lab with adaptive detrending")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run a training experiment")
    _add_common(t)
    t.add_argument("--resume", help="checkpoint to resume from")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a fold's test split")
    _add_common(e)
    e.add_argument("checkpoint")
    e.add_argument("--fold", type=int, default=1)
    e.set_defaults(fn=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of a cell variant")
    g.add_argument("--cell", choices=("gru", "convgru"), default="gru")
    g.add_argument("--norm", choices=("none", "ad", "bn", "ln", "bn_ad", "ln_ad"),
                   default="none")
    g.add_argument("--placement", choices=("all", "hidden", "gates"), default="hidden")
    g.add_argument("--T", type=int, default=3)
    g.add_argument("--step", type=float, default=1e-4)
    g.add_argument("--tolerance", type=float, default=1e-4)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--corrupt", metavar="PARAM",
                   help="debug: corrupt this parameter's analytic gradient (must fail)")
    g.add_argument("--report-csv", help="write the per-parameter report here")
    g.set_defaults(fn=cmd_gradcheck)

    d = sub.add_parser("diagnose", help="emit histogram/trace CSV bundle for a checkpoint")
    _add_common(d)
    d.add_argument("checkpoint")
    d.add_argument("--fold", type=int, default=1)
    d.set_defaults(fn=cmd_diagnose)

    gd = sub.add_parser("gen-data", help="generate and export a dataset cache")
    _add_common(gd)
    gd.add_argument("--data-dir", help="export directory (default: DETREND_DATA_DIR)")
    gd.set_defaults(fn=cmd_gen_data)

    pl = sub.add_parser("plot", help="render a metrics/trace CSV to an image")
    pl.add_argument("csv")
    pl.add_argument("out_image")
    pl.add_argument("--x", default="epoch", help="x-axis column")
    pl.set_defaults(fn=cmd_plot)
    return p


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except (TrainAbort, NumericError) as err:
        print(f"numeric abort: {err}", file=sys.stderr)
        return EXIT_NUMERIC_ABORT


if __name__ == "__main__":
    sys.exit(main())
