"""Dense N-D arrays with reverse-mode autodiff and the spatial primitives
(2D convolution, max pooling, global average pooling) everything else builds on.

Values are numpy arrays wrapped in :class:`Tensor`. Every op checks its output
for NaN/Inf and raises :class:`NumericError` instead of propagating silently.
Convolution is cross-correlation (no kernel flip), channels-first layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FINITE_CHECKS = True

DTYPES = {"f32": np.float32, "f64": np.float64}


class NumericError(ArithmeticError):
    """A non-finite value appeared in an op output."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested op."""


def _check_finite(arr, opname):
    if FINITE_CHECKS and not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite value in output of {opname}")


def _unbroadcast(grad, shape):
    # Sum grad down to `shape` after numpy broadcasting in the forward pass.
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    """Node in the autodiff graph. Leaf tensors may carry gradients."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    # -- graph plumbing -----------------------------------------------------

    @classmethod
    def _result(cls, data, parents, backward, opname):
        _check_finite(data, opname)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        parents = tuple(p for p in parents if isinstance(p, Tensor))
        if any(p.requires_grad or p._parents or p._backward for p in parents):
            out.requires_grad = False
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g.astype(self.data.dtype, copy=False)

    def backward(self, seed=None):
        """Reverse-mode sweep from this tensor. `seed` defaults to ones."""
        if seed is None:
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(seed, dtype=self.data.dtype)
            if seed.shape != self.data.shape:
                raise ShapeError("seed gradient shape mismatch")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        grads = {id(self): seed}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node._accumulate(g)
            if node._backward is None:
                continue
            for parent, pg in node._backward(g):
                if parent is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def reshape(self, *shape):
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


def _wrap(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def constant(x, dtype=None):
    return Tensor(np.asarray(x, dtype=dtype))


# -- elementwise / arithmetic ops ------------------------------------------


def add(a, b):
    a, b = _wrap(a), _wrap(b, a)
    data = a.data + b.data

    def backward(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape)))

    return Tensor._result(data, (a, b), backward, "add")


def sub(a, b):
    if isinstance(a, Tensor):
        a, b = a, _wrap(b, a)
    else:
        b = _wrap(b)
        a = _wrap(a, b)
    data = a.data - b.data

    def backward(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(-g, b.data.shape)))

    return Tensor._result(data, (a, b), backward, "sub")


def mul(a, b):
    a = _wrap(a)
    b = _wrap(b, a)
    data = a.data * b.data

    def backward(g):
        return (
            (a, _unbroadcast(g * b.data, a.data.shape)),
            (b, _unbroadcast(g * a.data, b.data.shape)),
        )

    return Tensor._result(data, (a, b), backward, "mul")


def div(a, b):
    a = _wrap(a)
    b = _wrap(b, a)
    data = a.data / b.data

    def backward(g):
        return (
            (a, _unbroadcast(g / b.data, a.data.shape)),
            (b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)),
        )

    return Tensor._result(data, (a, b), backward, "div")


def power(a, p):
    a = _wrap(a)
    p = float(p)
    data = a.data**p

    def backward(g):
        return ((a, g * p * a.data ** (p - 1.0)),)

    return Tensor._result(data, (a,), backward, "pow")


def log(a):
    a = _wrap(a)
    data = np.log(a.data)

    def backward(g):
        return ((a, g / a.data),)

    return Tensor._result(data, (a,), backward, "log")


def exp(a):
    a = _wrap(a)
    data = np.exp(a.data)

    def backward(g):
        return ((a, g * data),)

    return Tensor._result(data, (a,), backward, "exp")


def sigmoid(a):
    a = _wrap(a)
    # numerically stable two-sided form
    d = a.data
    data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    data = data.astype(d.dtype, copy=False)

    def backward(g):
        return ((a, g * data * (1.0 - data)),)

    return Tensor._result(data, (a,), backward, "sigmoid")


def tanh(a):
    a = _wrap(a)
    data = np.tanh(a.data)

    def backward(g):
        return ((a, g * (1.0 - data * data)),)

    return Tensor._result(data, (a,), backward, "tanh")


def relu(a):
    a = _wrap(a)
    data = np.maximum(a.data, 0.0)

    def backward(g):
        return ((a, g * (a.data > 0)),)

    return Tensor._result(data, (a,), backward, "relu")


def clip_min(a, floor):
    """max(a, floor) elementwise; gradient is zero where the floor engages."""
    a = _wrap(a)
    data = np.maximum(a.data, floor)

    def backward(g):
        return ((a, g * (a.data > floor)),)

    return Tensor._result(data, (a,), backward, "clip_min")


def reshape(a, shape):
    a = _wrap(a)
    old = a.data.shape
    data = a.data.reshape(shape)

    def backward(g):
        return ((a, g.reshape(old)),)

    return Tensor._result(data, (a,), backward, "reshape")


def tsum(a, axis=None, keepdims=False):
    a = _wrap(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)
    if np.isscalar(data) or data.ndim == 0:
        data = np.asarray(data, dtype=a.data.dtype)

    def backward(g):
        g = np.asarray(g)
        if axis is None:
            return ((a, np.broadcast_to(g, a.data.shape).copy()),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            for ax in sorted(ax % a.data.ndim for ax in axes):
                g = np.expand_dims(g, ax)
        return ((a, np.broadcast_to(g, a.data.shape).copy()),)

    return Tensor._result(data, (a,), backward, "sum")


def tmean(a, axis=None, keepdims=False):
    a = _wrap(a)
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= a.data.shape[ax]
    return mul(tsum(a, axis, keepdims), 1.0 / n)


# -- linear algebra --------------------------------------------------------


def dense(x, weights, bias=None):
    """Affine map x @ W (+ b). x: (N,F) or (F,), W: (F,M), b: (M,)."""
    x, weights = _wrap(x), _wrap(weights)
    if x.data.shape[-1] != weights.data.shape[0]:
        raise ShapeError(
            f"dense: input feature dim {x.data.shape[-1]} != weight rows {weights.data.shape[0]}"
        )
    data = x.data @ weights.data
    if bias is not None:
        bias = _wrap(bias)
        if bias.data.shape != (weights.data.shape[1],):
            raise ShapeError("dense: bias shape mismatch")
        data = data + bias.data

    def backward(g):
        out = []
        if x.data.ndim == 1:
            out.append((x, g @ weights.data.T))
            out.append((weights, np.outer(x.data, g)))
        else:
            out.append((x, g @ weights.data.T))
            out.append((weights, x.data.T @ g))
        if bias is not None:
            gb = g if g.ndim == 1 else g.sum(axis=0)
            out.append((bias, gb))
        return out

    parents = (x, weights) if bias is None else (x, weights, bias)
    return Tensor._result(data, parents, backward, "dense")


# -- spatial primitives ----------------------------------------------------


@dataclass(frozen=True)
class ConvSpec:
    """Kernel geometry: (kh, kw, c_in, c_out), stride (sh, sw), symmetric zero pad (ph, pw)."""

    kernel: tuple
    stride: tuple = (1, 1)
    pad: tuple = (0, 0)

    def out_extent(self, h, w):
        kh, kw = self.kernel[0], self.kernel[1]
        sh, sw = self.stride
        ph, pw = self.pad
        oh = (h + 2 * ph - kh) // sh + 1
        ow = (w + 2 * pw - kw) // sw + 1
        if oh < 1 or ow < 1:
            raise ShapeError(f"conv output extent non-positive: {oh}x{ow}")
        return oh, ow


def conv2d(x, spec, weights, bias=None):
    """Batched cross-correlation. x: (N,C,H,W) or (C,H,W); weights (kh,kw,Cin,Cout)."""
    x, weights = _wrap(x), _wrap(weights)
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    kh, kw, cin, cout = spec.kernel
    if weights.data.shape != (kh, kw, cin, cout):
        raise ShapeError("conv2d: weight shape does not match spec")
    if xd.shape[1] != cin:
        raise ShapeError(f"conv2d: input channels {xd.shape[1]} != spec {cin}")
    n, _, h, w = xd.shape
    sh, sw = spec.stride
    ph, pw = spec.pad
    oh, ow = spec.out_extent(h, w)
    if ph or pw:
        xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    else:
        xp = xd
    # im2col: one matmul per conv, fixed (channel, kh, kw) summation order
    view = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    view = view[:, :, ::sh, ::sw]  # (N, Cin, OH, OW, kh, kw)
    cols = np.ascontiguousarray(view.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * oh * ow, cin * kh * kw
    )
    wmat = weights.data.transpose(2, 0, 1, 3).reshape(cin * kh * kw, cout)
    out = (cols @ wmat).reshape(n, oh, ow, cout).transpose(0, 3, 1, 2)
    if bias is not None:
        bias = _wrap(bias)
        if bias.data.shape != (cout,):
            raise ShapeError("conv2d: bias shape mismatch")
        out = out + bias.data[None, :, None, None]
    data = out[0] if squeeze else out

    def backward(g):
        gb = g[None] if squeeze else g
        gm = np.ascontiguousarray(gb.transpose(0, 2, 3, 1)).reshape(n * oh * ow, cout)
        gw = (cols.T @ gm).reshape(cin, kh, kw, cout).transpose(1, 2, 0, 3)
        gcols = (gm @ wmat.T).reshape(n, oh, ow, cin, kh, kw)
        gx = np.zeros_like(xp)
        for a in range(kh):
            for b in range(kw):
                gx[:, :, a : a + sh * oh : sh, b : b + sw * ow : sw] += gcols[
                    :, :, :, :, a, b
                ].transpose(0, 3, 1, 2)
        if ph or pw:
            gx = gx[:, :, ph : ph + h, pw : pw + w]
        out = [(x, gx[0] if squeeze else gx), (weights, gw)]
        if bias is not None:
            out.append((bias, gb.sum(axis=(0, 2, 3))))
        return out

    parents = (x, weights) if bias is None else (x, weights, bias)
    return Tensor._result(data, parents, backward, "conv2d")


def maxpool2d(x, window, stride=None):
    """Per-channel windowed max. Ties route the gradient to the first index in scan order."""
    x = _wrap(x)
    stride = stride or window
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    n, c, h, w = xd.shape
    wh, ww = window
    sh, sw = stride
    if wh > h or ww > w:
        raise ShapeError(f"maxpool window {window} larger than input {h}x{w}")
    oh = (h - wh) // sh + 1
    ow = (w - ww) // sw + 1
    # patches: (N,C,OH,OW,wh*ww) built in scan order so argmax tie-break is first index
    patches = np.empty((n, c, oh, ow, wh * ww), dtype=xd.dtype)
    k = 0
    for a in range(wh):
        for b in range(ww):
            patches[..., k] = xd[:, :, a : a + sh * oh : sh, b : b + sw * ow : sw]
            k += 1
    arg = patches.argmax(axis=-1)
    data4 = np.take_along_axis(patches, arg[..., None], axis=-1)[..., 0]
    data = data4[0] if squeeze else data4

    def backward(g):
        gb = g[None] if squeeze else g
        gx = np.zeros_like(xd)
        aa, bb = np.divmod(arg, ww)
        ni, ci, oi, oj = np.indices(arg.shape)
        np.add.at(gx, (ni, ci, oi * sh + aa, oj * sw + bb), gb)
        return ((x, gx[0] if squeeze else gx),)

    return Tensor._result(data, (x,), backward, "maxpool2d")


def global_avg_pool(x):
    """Per-channel mean over all spatial positions. (N,C,H,W)->(N,C) or (C,H,W)->(C,)."""
    x = _wrap(x)
    data = x.data.mean(axis=(-2, -1))
    h, w = x.data.shape[-2:]

    def backward(g):
        return ((x, np.broadcast_to((g / (h * w))[..., None, None], x.data.shape).copy()),)

    return Tensor._result(data, (x,), backward, "global_avg_pool")


# -- randomness ------------------------------------------------------------


class Prng:
    """Deterministic PCG64 stream; identical seed gives an identical stream everywhere."""

    def __init__(self, seed):
        if isinstance(seed, (tuple, list)):
            self.seed = tuple(int(s) for s in seed)
        else:
            self.seed = (int(seed),)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(self.seed))))

    def spawn(self, key):
        """Independent child stream derived from (seed..., key)."""
        return Prng(self.seed + (int(key),))

    def gaussian(self, shape, sigma, dtype=np.float32):
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        return self._gen.normal(0.0, sigma, size=shape).astype(dtype)

    def uniform(self, low, high, shape=None):
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low, high):
        return int(self._gen.integers(low, high))

    def random(self):
        return float(self._gen.random())

    def permutation(self, n):
        return self._gen.permutation(n)

    def state(self):
        return self._gen.bit_generator.state

    def set_state(self, state):
        self._gen.bit_generator.state = state


def gaussian_init(prng, shape, sigma, dtype=np.float32):
    """Zero-mean Gaussian parameter draw."""
    return Tensor(prng.gaussian(shape, sigma, dtype=dtype), requires_grad=True)
