"""Experiment configuration: flat `section.key = value` text files with
repeatable command-line overrides. A config plus a seed fully determines a
run; serialization round-trips losslessly.
"""

from __future__ import annotations

from .network import NetworkConfig
from .tasks import GridVideoSpec, oa_spec, oam_spec
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Invalid config field; message carries the dotted field path."""


DEFAULTS = {
    "seed": 0,
    "out": "runs/run",
    "folds": (1,),
    "eval_every": 1,
    "checkpoint_every": 0,

    "task.kind": "oam",  # oa | oam | custom
    "task.grid": (16, 16),
    "task.margin": 1,
    "task.objects": ("square", "cross"),
    "task.actions": ("shake_h", "shake_v"),
    "task.modifiers": (1, 2, 3),
    "task.subjects": 5,
    "task.repetitions": 2,
    "task.distractor": True,
    "task.t_min": 30,
    "task.t_max": 60,
    "task.noise": 0.0,
    "task.data_seed": 1234,

    "net.preset": "desk",  # desk | table1
    "net.channels": (6, 8, 12),
    "net.sigma": 0.12,

    "norm.method": "none",  # none | ad | bn | ln | bn_ad | ln_ad
    "norm.placement": "hidden",
    "norm.init_bias_z": -2.0,

    "train.lr": 0.01,
    "train.momentum": 0.9,
    "train.batch_size": 8,
    "train.weight_decay": 0.0005,
    "train.clip": 10.0,
    "train.epochs": 40,
    "train.precision": "f32",

    "diag.norm_traces": False,
    "diag.histogram_epochs": (),
    "diag.neurons_per_layer": 8,
}


def _parse_scalar(text):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_value(text):
    text = text.strip()
    if not text:
        return ()
    if "," in text:
        items = [t for t in (s.strip() for s in text.split(",")) if t]
        return tuple(_parse_scalar(i) for i in items)
    return _parse_scalar(text)


def format_value(v):
    if isinstance(v, (tuple, list)):
        return ", ".join(str(x) for x in v) + ("," if len(v) == 1 else "")
    return str(v)


class ExperimentConfig(dict):
    """Flat dotted-key config with typed defaults."""

    def __init__(self, values=None):
        super().__init__(DEFAULTS)
        if values:
            self.update_checked(values)

    def update_checked(self, values):
        for k, v in values.items():
            if k not in DEFAULTS:
                raise ConfigError(f"unknown config field {k!r}")
            self[k] = v

    def set_override(self, assignment):
        if "=" not in assignment:
            raise ConfigError(f"override must look like key=value, got {assignment!r}")
        key, _, raw = assignment.partition("=")
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config field {key!r}")
        val = parse_value(raw)
        default = DEFAULTS[key]
        if isinstance(default, tuple) and not isinstance(val, tuple):
            val = (val,)
        self[key] = val

    @classmethod
    def from_file(cls, path):
        cfg = cls()
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                key, _, raw = line.partition("=")
                key = key.strip()
                if key not in DEFAULTS:
                    raise ConfigError(f"{path}:{lineno}: unknown config field {key!r}")
                val = parse_value(raw)
                default = DEFAULTS[key]
                if isinstance(default, tuple) and not isinstance(val, tuple):
                    val = (val,)
                cfg[key] = val
        return cfg

    def to_text(self):
        lines = [f"{k} = {format_value(self[k])}" for k in sorted(self)]
        return "\n".join(lines) + "\n"

    # -- builders ----------------------------------------------------------

    def task_spec(self):
        kind = self["task.kind"]
        kw = dict(
            grid=tuple(self["task.grid"]),
            margin=self["task.margin"],
            subjects=self["task.subjects"],
            repetitions=self["task.repetitions"],
            distractor=self["task.distractor"],
            length_range=(self["task.t_min"], self["task.t_max"]),
            noise=float(self["task.noise"]),
        )
        try:
            if kind == "oa":
                return oa_spec(**kw)
            if kind == "oam":
                return oam_spec(objects=tuple(self["task.objects"]),
                                actions=tuple(self["task.actions"]),
                                modifiers=tuple(self["task.modifiers"]), **kw)
            if kind == "custom":
                mods = tuple(self["task.modifiers"]) or None
                return GridVideoSpec(objects=tuple(self["task.objects"]),
                                     actions=tuple(self["task.actions"]),
                                     modifiers=mods, **kw)
        except ValueError as err:
            raise ConfigError(f"task: {err}") from err
        raise ConfigError(f"task.kind: unknown kind {kind!r}")

    def network_config(self, heads):
        preset = self["net.preset"]
        norm_kw = dict(norm=self["norm.method"], placement=self["norm.placement"],
                       init_bias_z=float(self["norm.init_bias_z"]))
        if self["norm.method"] not in ("none", "ad", "bn", "ln", "bn_ad", "ln_ad"):
            raise ConfigError(f"norm.method: unknown method {self['norm.method']!r}")
        if preset == "table1":
            return NetworkConfig.table1(heads=heads, sigma=float(self["net.sigma"]), **norm_kw)
        if preset == "desk":
            grid = tuple(self["task.grid"])
            return NetworkConfig.desk(heads=heads, in_shape=(1,) + grid,
                                      channels=tuple(self["net.channels"]),
                                      sigma=float(self["net.sigma"]), **norm_kw)
        raise ConfigError(f"net.preset: unknown preset {preset!r}")

    def train_config(self, seed=None):
        try:
            return TrainConfig(
                learning_rate=float(self["train.lr"]),
                momentum=float(self["train.momentum"]),
                batch_size=int(self["train.batch_size"]),
                weight_decay=float(self["train.weight_decay"]),
                clip_threshold=float(self["train.clip"]),
                epochs=int(self["train.epochs"]),
                seed=int(self["seed"] if seed is None else seed),
                precision=str(self["train.precision"]),
            )
        except ValueError as err:
            raise ConfigError(f"train: {err}") from err
