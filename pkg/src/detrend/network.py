"""Network assembly: the conv -> max -> convgru -> max -> convgru -> global
average -> per-category softmax heads stack, plus a memoryless per-frame
CNN baseline that averages scores over frames.

The reference geometry (scale 1, 112x112x3 input) walks the spatial chain
36 -> 12 -> 12 -> 6 -> 6 with channel widths 32/64/128; a width/resolution
scale factor shrinks it to desk size without changing the wiring.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .cells import CellConfig, GruParams, NormState, run_sequence
from .tensor import ConvSpec, Tensor


@dataclass
class NetworkConfig:
    in_shape: tuple = (3, 112, 112)  # (C, H, W)
    conv1: ConvSpec = None  # first conv (ReLU)
    pool1: tuple = (3, 3)  # window == stride
    gru_channels: tuple = (64, 128)
    gru_kernel: int = 3
    pool2: tuple = (2, 2)
    heads: tuple = (15,)  # classes per category
    norm: str = "none"
    placement: str = "hidden"
    init_bias_z: float = -2.0
    sigma: float = 0.07

    def __post_init__(self):
        if self.conv1 is None:
            self.conv1 = ConvSpec((7, 7, self.in_shape[0], 32), (3, 3), (0, 0))
        if any(c < 2 for c in self.heads):
            raise ValueError("every head needs at least 2 classes")

    @classmethod
    def table1(cls, heads=(15,), norm="none", **kw):
        return cls(heads=tuple(heads), norm=norm, **kw)

    @classmethod
    def desk(cls, heads, in_shape=(1, 16, 16), channels=(6, 8, 12), norm="none", **kw):
        conv1 = ConvSpec((3, 3, in_shape[0], channels[0]), (1, 1), (0, 0))
        return cls(in_shape=in_shape, conv1=conv1, pool1=(2, 2),
                   gru_channels=(channels[1], channels[2]), pool2=(2, 2),
                   heads=tuple(heads), norm=norm, sigma=kw.pop("sigma", 0.12), **kw)

    def cell_config(self):
        k = self.gru_kernel
        pad = (k - 1) // 2
        return dict(norm=self.norm, placement=self.placement, init_bias_z=self.init_bias_z,
                    kernel=k, pad=pad)

    def spatial_chain(self):
        """Spatial extents after each layer; raises if any extent collapses."""
        c, h, w = self.in_shape
        chain = []
        h, w = self.conv1.out_extent(h, w)
        chain.append((h, w))
        h, w = (h - self.pool1[0]) // self.pool1[0] + 1, (w - self.pool1[1]) // self.pool1[1] + 1
        chain.append((h, w))
        chain.append((h, w))  # gru1 preserves extent
        h, w = (h - self.pool2[0]) // self.pool2[0] + 1, (w - self.pool2[1]) // self.pool2[1] + 1
        chain.append((h, w))
        chain.append((h, w))  # gru2 preserves extent
        if h < 1 or w < 1:
            raise T.ShapeError("network spatial chain collapsed to non-positive extent")
        return chain


class ModelState:
    """All parameters and normalization state; names are a pure function of config."""

    def __init__(self, config, params, norm_states, cell_configs, seed):
        self.config = config
        self.params = params  # name -> Tensor
        self.norm_states = norm_states  # layer name -> NormState
        self.cell_configs = cell_configs  # layer name -> CellConfig
        self.seed = seed
        self.gru_params = {}

    def named_params(self):
        return dict(self.params)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def running_stats(self):
        out = {}
        for layer, ns in self.norm_states.items():
            out.update(ns.running_stats(prefix=f"{layer}."))
        return out


def build(config, prng, dtype=np.float32):
    """Construct the recurrent video network from a config and a seeded stream."""
    config.spatial_chain()  # validate geometry up front
    params = {}
    norm_states = {}
    cell_configs = {}
    c_in = config.conv1.kernel[2]
    if c_in != config.in_shape[0]:
        raise T.ShapeError("conv1 spec input channels do not match input shape")

    p_conv = prng.spawn(1)
    params["conv1.W"] = Tensor(p_conv.gaussian(config.conv1.kernel, config.sigma, dtype),
                               requires_grad=True)
    params["conv1.b"] = Tensor(np.zeros(config.conv1.kernel[3], dtype=dtype), requires_grad=True)

    cc = config.cell_config()
    k, pad = cc["kernel"], cc["pad"]
    in_ch = config.conv1.kernel[3]
    model = ModelState(config, params, norm_states, cell_configs, prng.seed)
    for i, ch in enumerate(config.gru_channels, start=1):
        name = f"gru{i}"
        cell_cfg = CellConfig(
            kind="convgru", norm=cc["norm"], placement=cc["placement"],
            init_bias_z=cc["init_bias_z"],
            forward_spec=ConvSpec((k, k, in_ch, ch), (1, 1), (pad, pad)),
            recurrent_spec=ConvSpec((k, k, ch, ch), (1, 1), (pad, pad)),
        )
        gp = GruParams(prng.spawn(10 + i), cell_cfg, in_dim=in_ch, hidden=ch,
                       sigma=config.sigma, dtype=dtype)
        ns = NormState(cell_cfg, ch, dtype=dtype)
        params.update(gp.params(prefix=f"{name}."))
        params.update(ns.params(prefix=f"{name}."))
        norm_states[name] = ns
        cell_configs[name] = cell_cfg
        model.gru_params[name] = gp
        in_ch = ch

    p_head = prng.spawn(20)
    for n, classes in enumerate(config.heads):
        params[f"head{n}.W"] = Tensor(p_head.gaussian((in_ch, classes), config.sigma, dtype),
                                      requires_grad=True)
        params[f"head{n}.b"] = Tensor(np.zeros(classes, dtype=dtype), requires_grad=True)
    return model


def softmax(x):
    shift = T.sub(x, T.constant(x.data.max(axis=-1, keepdims=True)))
    e = T.exp(shift)
    return T.div(e, T.tsum(e, axis=-1, keepdims=True))


def _final_step_select(per_step, lengths):
    """Pick each sample's value at its last valid step. per_step: list of (N,F) Tensors."""
    n = per_step[0].shape[0]
    total = None
    for t, v in enumerate(per_step):
        sel = (np.asarray(lengths) - 1 == t).astype(v.dtype).reshape(n, 1)
        if not sel.any():
            continue
        term = T.mul(v, T.constant(sel))
        total = term if total is None else T.add(total, term)
    return total


def forward_video(model, frames, lengths=None, train=True, record=False):
    """Forward a batch of sequences; logits and softmax per head at each
    sample's final valid step.

    frames: np array (N, T, C, H, W). lengths: per-sample valid lengths
    (default: full length). Returns (probs per head, logits per head, records).
    """
    frames = np.asarray(frames)
    if frames.ndim != 5:
        raise T.ShapeError("forward_video expects (N, T, C, H, W) frames")
    n, t_max = frames.shape[:2]
    if t_max == 0:
        raise ValueError("empty sequence")
    lengths = np.full(n, t_max, dtype=int) if lengths is None else np.asarray(lengths, dtype=int)
    mask = np.arange(t_max)[None, :] < lengths[:, None]

    cfg = model.config
    feats = []
    for t in range(t_max):
        x = Tensor(frames[:, t])
        a = T.relu(T.conv2d(x, cfg.conv1, model.params["conv1.W"], model.params["conv1.b"]))
        feats.append(T.maxpool2d(a, cfg.pool1))

    records = {}
    seq = feats
    use_mask = mask if not mask.all() else None
    for i in range(1, len(cfg.gru_channels) + 1):
        name = f"gru{i}"
        _, outs, recs = run_sequence(
            model.gru_params[name], model.cell_configs[name], seq,
            norm_state=model.norm_states[name], train=train, mask=use_mask, record=record,
        )
        if record:
            records[name] = recs
        if i < len(cfg.gru_channels):
            seq = [T.maxpool2d(o, cfg.pool2) for o in outs]
        else:
            seq = outs

    pooled = [T.global_avg_pool(o) for o in seq]
    final = _final_step_select(pooled, lengths)
    logits = []
    probs = []
    for h in range(len(cfg.heads)):
        lg = T.dense(final, model.params[f"head{h}.W"], model.params[f"head{h}.b"])
        logits.append(lg)
        probs.append(softmax(lg))
    return probs, logits, records


# -- per-frame feed-forward baseline ---------------------------------------


@dataclass
class FrameBaselineConfig:
    """Reduced per-frame CNN: conv -> max -> conv -> global avg -> heads."""

    in_shape: tuple = (1, 16, 16)
    channels: tuple = (8, 16)
    heads: tuple = (15,)
    sigma: float = 0.05
    frames_sampled: int = 25  # equally spaced frames scored per video


def build_frame_baseline(config, prng, dtype=np.float32):
    c, _, _ = config.in_shape
    params = {
        "conv1.W": Tensor(prng.spawn(1).gaussian((3, 3, c, config.channels[0]), config.sigma, dtype),
                          requires_grad=True),
        "conv1.b": Tensor(np.zeros(config.channels[0], dtype=dtype), requires_grad=True),
        "conv2.W": Tensor(prng.spawn(2).gaussian((3, 3, config.channels[0], config.channels[1]),
                                                 config.sigma, dtype), requires_grad=True),
        "conv2.b": Tensor(np.zeros(config.channels[1], dtype=dtype), requires_grad=True),
    }
    ph = prng.spawn(3)
    for n, classes in enumerate(config.heads):
        params[f"head{n}.W"] = Tensor(ph.gaussian((config.channels[1], classes), config.sigma, dtype),
                                      requires_grad=True)
        params[f"head{n}.b"] = Tensor(np.zeros(classes, dtype=dtype), requires_grad=True)
    model = ModelState(config, params, {}, {}, prng.seed)
    return model


def sample_frame_indices(length, count):
    """`count` equally spaced frame indices into a video of `length` frames."""
    if length <= count:
        return list(range(length))
    return [int(round(i * (length - 1) / (count - 1))) for i in range(count)]


def forward_frame_baseline(model, frames, lengths=None, train=True):
    """Average per-frame softmax scores over equally spaced sampled frames.

    Memoryless by construction: permuting the frames cannot change the output.
    """
    frames = np.asarray(frames)
    n, t_max = frames.shape[:2]
    cfg = model.config
    lengths = np.full(n, t_max, dtype=int) if lengths is None else np.asarray(lengths, dtype=int)

    spec1 = ConvSpec((3, 3, cfg.in_shape[0], cfg.channels[0]), (1, 1), (0, 0))
    spec2 = ConvSpec((3, 3, cfg.channels[0], cfg.channels[1]), (1, 1), (1, 1))

    # per-sample frame subsets can differ in size; score frame-by-frame
    per_head_totals = [None] * len(cfg.heads)
    counts = np.zeros((n, 1), dtype=frames.dtype)
    idx_sets = [sample_frame_indices(int(l), cfg.frames_sampled) for l in lengths]
    t_used = sorted({t for s in idx_sets for t in s})
    for t in t_used:
        use = np.array([t in s for s in idx_sets])
        x = Tensor(frames[:, t])
        a = T.relu(T.conv2d(x, spec1, model.params["conv1.W"], model.params["conv1.b"]))
        a = T.maxpool2d(a, (2, 2))
        a = T.relu(T.conv2d(a, spec2, model.params["conv2.W"], model.params["conv2.b"]))
        v = T.global_avg_pool(a)
        sel = use.astype(frames.dtype).reshape(n, 1)
        counts += sel
        for h in range(len(cfg.heads)):
            p = softmax(T.dense(v, model.params[f"head{h}.W"], model.params[f"head{h}.b"]))
            term = T.mul(p, T.constant(sel))
            per_head_totals[h] = term if per_head_totals[h] is None else T.add(per_head_totals[h], term)
    probs = [T.div(tot, T.constant(counts)) for tot in per_head_totals]
    return probs
