"""Recurrent step functions: plain RNN, GRU, and ConvGRU, with optional
spatial normalization (batch/layer norm on chosen pre-activation terms) and
the adaptive-detrending output path.

The gated update is
    r_t = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
    z_t = sigmoid(W_z x_t + U_z h_{t-1} + b_z)
    h~_t = tanh(W_h x_t + r_t (.) U_h h_{t-1} + b_h)
    h_t = z_t (.) h~_t + (1 - z_t) (.) h_{t-1}

With detrending active the layer's upward output is y_t = h~_t - h_t (no
affine afterwards); h_t stays on the recurrent path. The hidden state is an
exponential moving average of the candidate with data-dependent decay z_t,
so subtracting it removes the per-neuron trend.

When a term is spatially normalized its additive bias is dropped: the
input-to-hidden half gets a gain+bias affine, the hidden-to-hidden half a
gain-only affine. The update-gate closed-start initialization (-2) moves
from b_z to the affine bias when the gates are normalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .normalizers import AffineParams, BnRunningStats, bn_forward, ln_forward
from .tensor import ConvSpec, Tensor

NORM_KINDS = ("none", "ad", "bn", "ln", "bn_ad", "ln_ad")
PLACEMENTS = ("all", "hidden", "gates")
GATES = ("r", "z", "h")


@dataclass
class CellConfig:
    kind: str = "gru"  # rnn | gru | convgru
    norm: str = "none"  # none | ad | bn | ln | bn_ad | ln_ad
    placement: str = "hidden"  # which terms spatial norm touches
    forward_spec: ConvSpec = None  # convgru only
    recurrent_spec: ConvSpec = None  # convgru only; must preserve extent
    init_bias_z: float = -2.0

    def __post_init__(self):
        if self.norm not in NORM_KINDS:
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.placement not in PLACEMENTS:
            raise ValueError(f"unknown placement {self.placement!r}")
        if self.kind not in ("rnn", "gru", "convgru"):
            raise ValueError(f"unknown cell kind {self.kind!r}")

    @property
    def detrend(self):
        return self.norm in ("ad", "bn_ad", "ln_ad")

    @property
    def spatial_norm(self):
        if self.norm in ("bn", "bn_ad"):
            return "bn"
        if self.norm in ("ln", "ln_ad"):
            return "ln"
        return None

    @property
    def normalized_terms(self):
        if self.spatial_norm is None:
            return frozenset()
        if self.placement == "hidden":
            return frozenset({"h"})
        if self.placement == "gates":
            return frozenset({"r", "z"})
        return frozenset(GATES)


class GruParams:
    """Learnable parameters of one (Conv)GRU cell.

    Dense: W_* (in, hid), U_* (hid, hid), b_* (hid,).
    Conv:  W_* (kh, kw, c_in, c_hid), U_* (kh, kw, c_hid, c_hid), b_* (c_hid,).
    Biases on spatially normalized terms are omitted.
    """

    def __init__(self, prng, config, in_dim, hidden, sigma=0.1, dtype=np.float32):
        self.config = config
        self.hidden = hidden
        normed = config.normalized_terms
        if config.kind == "convgru":
            fspec, rspec = config.forward_spec, config.recurrent_spec
            if fspec is None or rspec is None:
                raise ValueError("convgru needs forward and recurrent ConvSpecs")
            if rspec.stride != (1, 1) or (rspec.kernel[0] - 1) != 2 * rspec.pad[0] or (
                rspec.kernel[1] - 1
            ) != 2 * rspec.pad[1]:
                raise T.ShapeError("recurrent conv must preserve the spatial extent")
            wshape = fspec.kernel
            ushape = rspec.kernel
        else:
            wshape = (in_dim, hidden)
            ushape = (hidden, hidden)
        self.W = {}
        self.U = {}
        self.b = {}
        gates = GATES if config.kind != "rnn" else ("h",)
        for g in gates:
            self.W[g] = Tensor(prng.gaussian(wshape, sigma, dtype), requires_grad=True)
            self.U[g] = Tensor(prng.gaussian(ushape, sigma, dtype), requires_grad=True)
            if g not in normed:
                init = config.init_bias_z if (g == "z" and config.kind != "rnn") else 0.0
                self.b[g] = Tensor(np.full(hidden, init, dtype=dtype), requires_grad=True)

    def params(self, prefix=""):
        out = {}
        for g in self.W:
            out[f"{prefix}W_{g}"] = self.W[g]
            out[f"{prefix}U_{g}"] = self.U[g]
            if g in self.b:
                out[f"{prefix}b_{g}"] = self.b[g]
        return out


class NormState:
    """Affine parameters (and BN running statistics) for the normalized terms."""

    def __init__(self, config, hidden, dtype=np.float32):
        self.config = config
        self.affine_x = {}
        self.affine_u = {}
        self.bn_stats_x = {}
        self.bn_stats_u = {}
        for g in config.normalized_terms:
            beta_init = config.init_bias_z if g == "z" else 0.0
            self.affine_x[g] = AffineParams(hidden, with_beta=True, beta_init=beta_init, dtype=dtype)
            self.affine_u[g] = AffineParams(hidden, with_beta=False, dtype=dtype)
            if config.spatial_norm == "bn":
                self.bn_stats_x[g] = BnRunningStats(hidden, dtype=dtype)
                self.bn_stats_u[g] = BnRunningStats(hidden, dtype=dtype)

    def params(self, prefix=""):
        out = {}
        for g in sorted(self.affine_x):
            out.update(self.affine_x[g].params(f"{prefix}norm_x_{g}"))
            out.update(self.affine_u[g].params(f"{prefix}norm_u_{g}"))
        return out

    def running_stats(self, prefix=""):
        out = {}
        for g in sorted(self.bn_stats_x):
            out[f"{prefix}bn_x_{g}"] = self.bn_stats_x[g]
            out[f"{prefix}bn_u_{g}"] = self.bn_stats_u[g]
        return out


@dataclass
class StepRecord:
    """Per-timestep capture for diagnostics. y is present only under detrending."""

    h_tilde: Tensor = None
    h: Tensor = None
    z: Tensor = None
    r: Tensor = None
    y: Tensor = None

    @property
    def output(self):
        return self.y if self.y is not None else self.h


def _lin(x, w, config, recurrent):
    if config.kind == "convgru":
        spec = config.recurrent_spec if recurrent else config.forward_spec
        return T.conv2d(x, spec, w)
    return T.dense(x, w)


def _term(x_t, h_prev, g, params, config, norm_state, t, train, valid_mask):
    """One pre-activation term, normalized per the cell config."""
    wx = _lin(x_t, params.W[g], config, recurrent=False)
    uh = _lin(h_prev, params.U[g], config, recurrent=True)
    if g in config.normalized_terms:
        if config.spatial_norm == "bn":
            wx = bn_forward(wx, norm_state.affine_x[g], norm_state.bn_stats_x[g], t,
                            train, valid_mask)
            uh = bn_forward(uh, norm_state.affine_u[g], norm_state.bn_stats_u[g], t,
                            train, valid_mask)
        else:
            wx = ln_forward(wx, norm_state.affine_x[g])
            uh = ln_forward(uh, norm_state.affine_u[g])
        return wx, uh
    bias = params.b[g]
    if config.kind == "convgru":
        bias = T.reshape(bias, (1, -1, 1, 1) if wx.ndim == 4 else (-1, 1, 1))
    return T.add(wx, bias), uh


def rnn_step(x_t, h_prev, params, config=None):
    """h_t = tanh(W_h x_t + U_h h_{t-1} + b_h)."""
    config = config or CellConfig(kind="rnn")
    wx = _lin(x_t, params.W["h"], config, recurrent=False)
    uh = _lin(h_prev, params.U["h"], config, recurrent=True)
    bias = params.b["h"]
    if config.kind == "convgru":
        bias = T.reshape(bias, (1, -1, 1, 1) if wx.ndim == 4 else (-1, 1, 1))
    return T.tanh(T.add(T.add(wx, bias), uh))


def gru_step(x_t, h_prev, params, config, norm_state=None, t=0, train=True, valid_mask=None):
    """One gated step; returns a StepRecord. Works for dense GRU and ConvGRU."""
    rx, ru = _term(x_t, h_prev, "r", params, config, norm_state, t, train, valid_mask)
    r = T.sigmoid(T.add(rx, ru))
    zx, zu = _term(x_t, h_prev, "z", params, config, norm_state, t, train, valid_mask)
    z = T.sigmoid(T.add(zx, zu))
    hx, hu = _term(x_t, h_prev, "h", params, config, norm_state, t, train, valid_mask)
    h_tilde = T.tanh(T.add(hx, T.mul(r, hu)))
    h = T.add(T.mul(z, h_tilde), T.mul(T.sub(1.0, z), h_prev))
    y = T.sub(h_tilde, h) if config.detrend else None
    return StepRecord(h_tilde=h_tilde, h=h, z=z, r=r, y=y)


convgru_step = gru_step  # the config's kind selects convolution


def run_sequence(params, config, inputs, h0=None, norm_state=None, train=True,
                 mask=None, record=False, t_offset=0):
    """Run a cell over a sequence of already-batched inputs.

    inputs: list of Tensors, one per timestep, each (N, ...) or unbatched.
    mask: optional bool array (N, T); padded steps freeze h at its last
    valid value and send a zero upward output.
    Returns (final hidden state, upward outputs per step, records).
    """
    if not inputs:
        raise ValueError("empty sequence")
    if h0 is None:
        probe = _lin(inputs[0], params.W["h" if "h" in params.W else "z"], config, recurrent=False)
        h = T.constant(np.zeros(probe.shape, dtype=probe.dtype))
    else:
        h = h0
    outputs = []
    records = []
    for i, x_t in enumerate(inputs):
        t = t_offset + i
        step_mask = mask[:, t] if mask is not None else None
        if config.kind == "rnn":
            h_new = rnn_step(x_t, h, params, config)
            rec = StepRecord(h=h_new)
        else:
            rec = gru_step(x_t, h, params, config, norm_state, t, train, step_mask)
            h_new = rec.h
        out = rec.output
        if step_mask is not None and not step_mask.all():
            m = step_mask.astype(h_new.data.dtype).reshape((-1,) + (1,) * (h_new.ndim - 1))
            mc = T.constant(m)
            h_new = T.add(T.mul(h_new, mc), T.mul(h, T.constant(1.0 - m)))
            out = T.mul(out, mc)
        h = h_new
        outputs.append(out)
        if record:
            records.append(rec)
    return h, outputs, records
