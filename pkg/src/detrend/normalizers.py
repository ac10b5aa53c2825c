"""Statistics machines: step-wise recurrent batch normalization, layer
normalization, and the exponential moving average used to define trends.

Batch norm keeps separate running statistics per timestep; queries past the
longest trained timestep reuse the last entry. Padded samples are excluded
from batch statistics via validity masks. Batch statistics are part of the
differentiated graph (the normalization participates in optimization).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

EPSILON = 1e-5
RUNNING_MOMENTUM = 0.1


class AffineParams:
    """Per-feature gain (and optional bias) applied after normalization.

    gamma starts at 1, beta at 0 -- except the update-gate affine, whose beta
    starts at -2 to keep the gate closed early in training.
    """

    def __init__(self, features, with_beta=True, beta_init=0.0, dtype=np.float32):
        self.gamma = Tensor(np.ones(features, dtype=dtype), requires_grad=True)
        self.beta = (
            Tensor(np.full(features, beta_init, dtype=dtype), requires_grad=True)
            if with_beta
            else None
        )

    def params(self, prefix):
        out = {f"{prefix}.gamma": self.gamma}
        if self.beta is not None:
            out[f"{prefix}.beta"] = self.beta
        return out


class BnRunningStats:
    """Per-(timestep, feature) running mean/variance for eval-mode batch norm."""

    def __init__(self, features, momentum=RUNNING_MOMENTUM, dtype=np.float32):
        self.features = features
        self.momentum = momentum
        self.dtype = dtype
        self.mean = np.zeros((0, features), dtype=np.float64)
        self.var = np.zeros((0, features), dtype=np.float64)
        self.count = np.zeros(0, dtype=np.int64)

    @property
    def t_max(self):
        return self.mean.shape[0]

    def _ensure(self, t):
        while self.mean.shape[0] <= t:
            self.mean = np.concatenate([self.mean, np.zeros((1, self.features))])
            self.var = np.concatenate([self.var, np.ones((1, self.features))])
            self.count = np.concatenate([self.count, np.zeros(1, dtype=np.int64)])

    def update(self, t, mu, var):
        self._ensure(t)
        if self.count[t] == 0:
            self.mean[t] = mu
            self.var[t] = var
        else:
            m = self.momentum
            self.mean[t] = (1 - m) * self.mean[t] + m * mu
            self.var[t] = (1 - m) * self.var[t] + m * var
        self.count[t] += 1

    def query(self, t):
        if self.t_max == 0:
            raise ValueError("running statistics queried before any training update")
        t = min(t, self.t_max - 1)
        return self.mean[t], self.var[t]

    def state_arrays(self):
        return {"mean": self.mean, "var": self.var, "count": self.count}

    def load_state(self, arrays):
        self.mean = np.asarray(arrays["mean"], dtype=np.float64)
        self.var = np.asarray(arrays["var"], dtype=np.float64)
        self.count = np.asarray(arrays["count"], dtype=np.int64)


def _feature_shape(x):
    """Broadcast shape placing the feature axis of a (N,F) or (N,C,H,W) batch."""
    if x.ndim == 2:
        return (1, x.shape[1])
    if x.ndim == 4:
        return (1, x.shape[1], 1, 1)
    raise T.ShapeError(f"normalizer expects (N,F) or (N,C,H,W), got {x.shape}")


def bn_forward(x, affine, stats, t, train, valid_mask=None, eps=EPSILON, update=True):
    """Step-wise batch normalization of one timestep's batch.

    x: Tensor (N,F) or (N,C,H,W); statistics are per feature / per channel,
    pooled over batch (and spatial positions). valid_mask is a bool (N,)
    marking real (non-padded) samples.
    """
    fshape = _feature_shape(x.data)
    n = x.data.shape[0]
    if valid_mask is None:
        valid_mask = np.ones(n, dtype=bool)
    valid_mask = np.asarray(valid_mask, dtype=bool)
    nvalid = int(valid_mask.sum())

    if train:
        if nvalid < 2:
            raise ValueError("batch norm needs at least 2 valid samples per step in train mode")
        m = valid_mask.astype(x.data.dtype).reshape((n,) + (1,) * (x.data.ndim - 1))
        mask = T.constant(m)
        if x.data.ndim == 2:
            denom = float(nvalid)
            axes = (0,)
        else:
            denom = float(nvalid * x.data.shape[2] * x.data.shape[3])
            axes = (0, 2, 3)
        mu = T.mul(T.tsum(T.mul(x, mask), axis=axes, keepdims=True), 1.0 / denom)
        centered = T.sub(x, mu)
        var = T.mul(
            T.tsum(T.mul(T.mul(centered, centered), mask), axis=axes, keepdims=True),
            1.0 / denom,
        )
        if update:
            stats.update(t, mu.data.reshape(-1), var.data.reshape(-1))
        inv = T.power(T.add(var, eps), -0.5)
        xhat = T.mul(centered, inv)
    else:
        mu, var = stats.query(t)
        mu = mu.astype(x.data.dtype).reshape(fshape)
        var = var.astype(x.data.dtype).reshape(fshape)
        xhat = T.mul(T.sub(x, T.constant(mu)), T.constant(1.0 / np.sqrt(var + eps)))

    out = T.mul(xhat, T.reshape(affine.gamma, fshape))
    if affine.beta is not None:
        out = T.add(out, T.reshape(affine.beta, fshape))
    return out


def ln_forward(x, affine, eps=EPSILON):
    """Layer normalization: per-sample statistics over all activations of the
    layer (all channels and spatial positions for feature maps), then a
    per-feature affine."""
    fshape = _feature_shape(x.data)
    axes = tuple(range(1, x.data.ndim))
    per_sample = 1
    for ax in axes:
        per_sample *= x.data.shape[ax]
    if per_sample < 2:
        raise T.ShapeError("layer norm needs at least 2 activations per sample")
    mu = T.mul(T.tsum(x, axis=axes, keepdims=True), 1.0 / per_sample)
    centered = T.sub(x, mu)
    var = T.mul(T.tsum(T.mul(centered, centered), axis=axes, keepdims=True), 1.0 / per_sample)
    xhat = T.mul(centered, T.power(T.add(var, eps), -0.5))
    out = T.mul(xhat, T.reshape(affine.gamma, fshape))
    if affine.beta is not None:
        out = T.add(out, T.reshape(affine.beta, fshape))
    return out


def ema(xs, alpha, mu0=0.0):
    """Exponential moving average: mu_t = alpha*x_t + (1-alpha)*mu_{t-1}."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    out = []
    mu = mu0
    for x in xs:
        mu = alpha * x + (1.0 - alpha) * mu
        out.append(mu)
    return out
