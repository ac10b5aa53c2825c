"""Training recipe: end-of-sequence negative log likelihood, Nesterov
momentum SGD (lookahead form), L2 weight decay on weight tensors only,
global-norm gradient clipping, variable-length gradient weighting, and
masked mini-batches with seeded shuffling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .network import forward_video
from .tensor import NumericError

PROB_FLOOR = 1e-12


class TrainAbort(RuntimeError):
    """Non-finite loss; carries a parameter snapshot for post-mortem."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 8
    weight_decay: float = 0.0005
    clip_threshold: float = 10.0
    epochs: int = 100
    seed: int = 0
    precision: str = "f32"

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        for name in ("learning_rate", "batch_size", "weight_decay", "clip_threshold", "epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


class OptState:
    """Per-parameter velocity tensors, initialized to zero."""

    def __init__(self, params):
        self.velocity = {name: np.zeros_like(p.data) for name, p in params.items()}


def is_weight(name):
    """Weight decay targets: forward/recurrent weight tensors, never biases or gains."""
    leaf = name.rsplit(".", 1)[-1]
    return leaf == "W" or leaf.startswith(("W_", "U_"))


def nll_loss(probs, labels, weights=None):
    """Summed-over-heads negative log likelihood at the true classes.

    probs: list of (N, C_h) probability Tensors, one per head.
    labels: (N, n_heads) int array. weights: optional per-sample scale.
    Returns (total loss Tensor, per-sample loss array).
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    total = None
    for h, p in enumerate(probs):
        onehot = np.zeros(p.shape, dtype=p.dtype)
        onehot[np.arange(n), labels[:, h]] = 1.0
        term = -T.tsum(T.mul(T.log(T.clip_min(p, PROB_FLOOR)), T.constant(onehot)), axis=1)
        total = term if total is None else T.add(total, term)
    per_sample = total.data.copy()
    if weights is not None:
        total = T.mul(total, T.constant(np.asarray(weights, dtype=total.dtype)))
    return T.tsum(total), per_sample


def length_weight(t_i, t_max):
    """Gradient weight for a variable-length sample: T_max / T_i."""
    if not 1 <= t_i <= t_max:
        raise ValueError("need 1 <= T_i <= T_max")
    return t_max / t_i


def global_grad_norm(params):
    sq = 0.0
    for p in params.values():
        if p.grad is not None:
            sq += float(np.sum(p.grad.astype(np.float64) ** 2))
    return float(np.sqrt(sq))


def clip_gradient(params, threshold):
    """Rescale the global L2 norm of all gradients to `threshold` if exceeded."""
    norm = global_grad_norm(params)
    if not np.isfinite(norm):
        raise NumericError("non-finite gradient norm")
    if norm > threshold:
        scale = threshold / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


def nag_update(params, opt, cfg):
    """Nesterov momentum, lookahead form:
    v <- mu*v - lr*g ; theta <- theta + mu*v - lr*g."""
    mu, lr = cfg.momentum, cfg.learning_rate
    for name, p in sorted(params.items()):
        g = p.grad
        if g is None:
            continue
        v = opt.velocity[name]
        v *= mu
        v -= lr * g
        p.data += (mu * v - lr * g).astype(p.data.dtype)


def make_batches(dataset, batch_size, rng=None):
    """Seeded shuffle, then fixed-order batches of sample indices."""
    order = rng.permutation(len(dataset)) if rng is not None else np.arange(len(dataset))
    return [order[i : i + batch_size] for i in range(0, len(order), batch_size)]


def collate(samples, dtype=np.float32, augment=None, rng=None):
    """Pad a batch to its longest sequence; returns (frames, lengths, labels)."""
    lengths = np.array([s.length for s in samples], dtype=int)
    t_max = int(lengths.max())
    views = []
    for s in samples:
        f = s.frames
        if augment is not None:
            f = augment(f, rng)
        views.append(f)
    frames = np.zeros((len(samples), t_max) + views[0].shape[1:], dtype=dtype)
    for i, f in enumerate(views):
        frames[i, : f.shape[0]] = f
    labels = np.array([s.labels for s in samples], dtype=int)
    return frames, lengths, labels


def _accuracies(probs, labels):
    labels = np.asarray(labels)
    per_head = []
    joint = np.ones(labels.shape[0], dtype=bool)
    for h, p in enumerate(probs):
        pred = p.data.argmax(axis=1)
        hit = pred == labels[:, h]
        per_head.append(hit)
        joint &= hit
    return per_head, joint


def train_epoch(model, dataset, cfg, opt, rng, t_max_data=None, augment=None, diag=None):
    """One pass over the dataset. Returns epoch metrics.

    `rng` drives shuffling and augmentation and is part of checkpointed state.
    `diag`, if given, receives per-iteration gradient/detrended-output norms.
    """
    params = model.named_params()
    dtype = np.float64 if cfg.precision == "f64" else np.float32
    if t_max_data is None:
        t_max_data = max(s.length for s in dataset)
    batches = make_batches(dataset, cfg.batch_size, rng)
    n_heads = len(model.config.heads)
    head_hits = [0] * n_heads
    joint_hits = 0
    loss_sum = 0.0
    n_seen = 0
    record = diag is not None and getattr(diag, "wants_records", False)

    for batch_idx in batches:
        samples = [dataset[i] for i in batch_idx]
        frames, lengths, labels = collate(samples, dtype=dtype, augment=augment, rng=rng)
        model.zero_grad()
        try:
            probs, _, records = forward_video(model, frames, lengths, train=True, record=record)
            weights = np.array([length_weight(int(l), t_max_data) for l in lengths])
            loss, per_sample = nll_loss(probs, labels, weights)
            loss.backward()
        except NumericError as err:
            snapshot = {name: p.data.copy() for name, p in params.items()}
            raise TrainAbort(f"non-finite loss/gradient: {err}", snapshot) from err
        for name, p in params.items():
            if is_weight(name):
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
                p.grad += (cfg.weight_decay * p.data).astype(p.data.dtype)
        grad_norm = clip_gradient(params, cfg.clip_threshold)
        nag_update(params, opt, cfg)

        if diag is not None:
            y_l2 = None
            if record:
                sq = 0.0
                for recs in records.values():
                    for rec in recs:
                        if rec.y is not None:
                            sq += float(np.sum(rec.y.data.astype(np.float64) ** 2))
                y_l2 = float(np.sqrt(sq))
            diag.on_iteration(grad_norm=grad_norm, detrended_l2=y_l2)

        per_head, joint = _accuracies(probs, labels)
        for h in range(n_heads):
            head_hits[h] += int(per_head[h].sum())
        joint_hits += int(joint.sum())
        loss_sum += float(per_sample.sum())
        n_seen += len(samples)

    return {
        "train_loss": loss_sum / n_seen,
        "train_acc": [h / n_seen for h in head_hits],
        "train_joint_acc": joint_hits / n_seen,
    }


def evaluate(model, dataset, batch_size=8, dtype=np.float32, transform=None):
    """Eval-mode accuracy and loss; no random augmentation, running stats for
    BN. `transform` is a deterministic per-video preprocessing step (e.g. a
    center crop matching the training crop size)."""
    n_heads = len(model.config.heads)
    head_hits = [0] * n_heads
    joint_hits = 0
    loss_sum = 0.0
    for i in range(0, len(dataset), batch_size):
        samples = dataset[i : i + batch_size]
        frames, lengths, labels = collate(samples, dtype=dtype, augment=transform)
        probs, _, _ = forward_video(model, frames, lengths, train=False)
        _, per_sample = nll_loss(probs, labels)
        per_head, joint = _accuracies(probs, labels)
        for h in range(n_heads):
            head_hits[h] += int(per_head[h].sum())
        joint_hits += int(joint.sum())
        loss_sum += float(per_sample.sum())
    n = len(dataset)
    return {
        "loss": loss_sum / n,
        "acc": [h / n for h in head_hits],
        "joint_acc": joint_hits / n,
    }
