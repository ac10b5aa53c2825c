"""Finite-difference verification of analytic gradients.

Analytic partials come from the reverse-mode sweep in :mod:`detrend.tensor`;
numeric partials are central differences (f(p+s) - f(p-s)) / (2s). The two
routes stay independent: the checker never reuses the backward pass to
produce its reference values.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .tensor import NumericError

# Denominator floor for the relative error. A central difference at step s
# carries O(s^2) truncation noise (~1e-7 absolute at s=1e-4 for O(1)-curved
# losses), so gradients far below this floor are compared absolutely at that
# precision instead of drowning the check in noise-over-noise ratios. A
# genuinely wrong adjoint still overshoots the floor by orders of magnitude.
EPS_DENOM = 1e-3


@dataclass
class GradEntry:
    param: str
    index: int
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradReport:
    max_rel_err: float
    step: float
    tolerance: float
    passed: bool
    entries: list = field(default_factory=list)

    def worst(self):
        return max(self.entries, key=lambda e: e.rel_err) if self.entries else None

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["parameter", "index", "analytic", "numeric", "rel_err"])
            for e in self.entries:
                w.writerow([e.param, e.index, repr(e.analytic), repr(e.numeric), repr(e.rel_err)])


def _rel_err(a, n):
    return abs(a - n) / max(abs(a), abs(n), EPS_DENOM)


def gradcheck(loss_fn, params, step=1e-4, tolerance=1e-4, record_all=False,
              corrupt_param=None):
    """Compare analytic gradients of `loss_fn()` against central differences.

    `params` maps name -> Tensor (float64 expected; float32 cannot reach
    useful tolerances). `loss_fn` must be a pure closure over the params.
    `corrupt_param` deliberately scales that parameter's analytic gradient
    (negative-control hook: the check must then fail).
    """
    for name, p in params.items():
        if p.data.dtype != np.float64:
            raise ValueError(f"gradcheck requires float64 parameters (got {p.data.dtype} for {name})")
        p.requires_grad = True
        p.zero_grad()

    loss = loss_fn()
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
    if corrupt_param is not None:
        if corrupt_param not in analytic:
            raise KeyError(f"unknown parameter {corrupt_param!r}")
        analytic[corrupt_param] = analytic[corrupt_param] * 1.5 + 0.1

    entries = []
    max_err = 0.0
    for name, p in sorted(params.items()):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lp = float(loss_fn().data)
            flat[i] = orig - step
            lm = float(loss_fn().data)
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NumericError(f"non-finite loss while perturbing {name}[{i}]")
            numeric = (lp - lm) / (2.0 * step)
            a = float(analytic[name].reshape(-1)[i])
            err = _rel_err(a, numeric)
            if err > max_err:
                max_err = err
            if record_all or err > tolerance:
                entries.append(GradEntry(name, i, a, numeric, err))

    for p in params.values():
        p.zero_grad()
    return GradReport(max_rel_err=max_err, step=step, tolerance=tolerance,
                      passed=max_err < tolerance, entries=entries)


def cell_gradcheck(cell="gru", norm="none", placement="hidden", t_len=3,
                   step=1e-4, tolerance=1e-4, seed=0, corrupt_param=None):
    """Gradcheck a miniature recurrent cell (<200 parameters) end to end.

    The loss is the squared sum of all upward outputs over a short random
    sequence, so every parameter (weights, biases, affine gains) gets a
    nonzero gradient.
    """
    from . import tensor as T
    from .cells import CellConfig, GruParams, NormState, run_sequence
    from .tensor import ConvSpec, Prng, Tensor

    conv = cell == "convgru"
    # instances sized so normalization statistics are well conditioned (the
    # finite-difference step is fixed, so variance terms must not be tiny)
    # while the parameter count stays under 200
    hidden = 2 if conv else 5  # dense LN needs >= 5 features for stable variances
    cfg = CellConfig(
        kind=cell, norm=norm, placement=placement,
        forward_spec=ConvSpec((3, 3, 1, hidden), (1, 1), (1, 1)) if conv else None,
        # 1x1 recurrent kernel: extent-preserving like any recurrent conv, but
        # keeps the per-parameter finite-difference loop within the time budget
        # (the padded 3x3 path is already exercised by the forward kernel)
        recurrent_spec=ConvSpec((1, 1, hidden, hidden), (1, 1), (0, 0)) if conv else None,
    )
    prng = Prng(seed).spawn(t_len)
    params = GruParams(prng, cfg, in_dim=1 if conv else 2, hidden=hidden,
                       sigma=0.3, dtype=np.float64)
    # fix each output feature's fan-in norm: a randomly tiny weight column
    # gives that feature a near-zero pre-activation variance, and the
    # normalization denominator is then too sharply curved for the fixed
    # finite-difference step
    for w in list(params.W.values()) + list(params.U.values()):
        axis = tuple(range(w.data.ndim - 1))
        fan_norm = np.sqrt((w.data ** 2).sum(axis=axis, keepdims=True))
        w.data *= 0.6 / fan_norm
    norm_state = NormState(cfg, hidden, dtype=np.float64)
    # batch sizes chosen so batch-norm statistics are smooth enough for the
    # fixed finite-difference step (small batches make the variance term too
    # sharply curved); conv batches also average over the 2x2 spatial extent
    n_batch = 4 if conv else 16
    shape = (n_batch, 1, 2, 2) if conv else (n_batch, 2)
    xs = [Tensor(prng.gaussian(shape, 1.0, np.float64)) for _ in range(t_len)]
    # nonzero initial state: from h0 = 0 the recurrent-half normalization sees
    # near-zero variance for the first steps, which is too sharply curved for
    # finite differences at the fixed step size
    h_shape = (n_batch, hidden, 2, 2) if conv else (n_batch, hidden)
    h0 = Tensor(prng.gaussian(h_shape, 1.0, np.float64))

    def loss():
        _, outs, _ = run_sequence(params, cfg, xs, h0=h0, norm_state=norm_state, train=True)
        total = None
        for o in outs:
            s = T.tsum(T.mul(o, o))
            total = s if total is None else T.add(total, s)
        return total

    all_params = dict(params.params(), **norm_state.params())
    return gradcheck(loss, all_params, step=step, tolerance=tolerance,
                     corrupt_param=corrupt_param)
