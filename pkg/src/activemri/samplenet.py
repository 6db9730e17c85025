"""Policy network scoring every k-space line as the next one to acquire.

Convolutional blocks (conv3x3, batch norm, leaky ReLU, 2x2 max pooling)
halve the grid until it is 4x4 while doubling channels up to a cap; a
dense layer with batch norm and leaky ReLU follows, and a final dense
layer produces one logit per line.
"""

import numpy as np

from . import autodiff as ad

__all__ = [
    "ExhaustedBudgetError",
    "samplenet_widths",
    "init_samplenet",
    "samplenet_logits",
    "samplenet_forward",
    "policy",
    "mask_resampling",
    "extend_pattern",
    "policy_cross_entropy",
    "train_samplenet_step",
]


class ExhaustedBudgetError(ValueError):
    """Raised when every line is already sampled."""


def samplenet_widths(side, base_width=64, max_width=256):
    if side < 8 or side & (side - 1):
        raise ad.ShapeError(f"SampleNet needs a power-of-two side >= 8, got {side}")
    n_blocks = int(np.log2(side // 4))
    return [min(base_width * 2 ** i, max_width) for i in range(n_blocks)]


def init_samplenet(side, channels=1, base_width=64, max_width=256, dense_width=1024,
                   seed=0, dtype=np.float64, zero_final=False):
    rng = np.random.default_rng(seed)
    store = ad.ParameterStore(dtype)
    cin = channels
    widths = samplenet_widths(side, base_width, max_width)
    for i, c in enumerate(widths):
        store.add(f"block{i}.conv.w", ad.he_normal(rng, (c, cin, 3, 3), 9 * cin, dtype))
        store.add(f"block{i}.conv.b", np.zeros(c))
        store.add(f"block{i}.bn.gamma", np.ones(c))
        store.add(f"block{i}.bn.beta", np.zeros(c))
        store.add_bn_state(f"block{i}.bn", c)
        cin = c
    flat = 16 * cin
    assert side // 2 ** len(widths) == 4
    store.add("fc.w", ad.he_normal(rng, (dense_width, flat), flat, dtype))
    store.add("fc.b", np.zeros(dense_width))
    store.add("fc.bn.gamma", np.ones(dense_width))
    store.add("fc.bn.beta", np.zeros(dense_width))
    store.add_bn_state("fc.bn", dense_width)
    head = np.zeros((side, dense_width)) if zero_final else ad.he_normal(
        rng, (side, dense_width), dense_width, dtype)
    store.add("head.w", head)
    store.add("head.b", np.zeros(side))
    return store


def samplenet_logits(x, store, mode="eval", slope=ad.LEAKY_SLOPE,
                     bn_eps=ad.BN_EPS, bn_momentum=ad.BN_MOMENTUM):
    if not isinstance(x, ad.Tensor):
        x = np.asarray(x, dtype=store.dtype)
        if x.ndim == 3:
            x = x[None]
        x = ad.Tensor(x)
    side = store["head.w"].shape[0]
    if x.value.ndim != 4 or x.shape[2:] != (side, side):
        raise ad.ShapeError(f"SampleNet built for side {side}, got input {x.shape}")
    n_blocks = sum(1 for name in store.params if name.endswith(".conv.w"))
    h = x
    for i in range(n_blocks):
        h = ad.conv2d(h, store[f"block{i}.conv.w"], store[f"block{i}.conv.b"])
        h = ad.batchnorm2d(h, store[f"block{i}.bn.gamma"], store[f"block{i}.bn.beta"],
                           store.buffers[f"block{i}.bn"], mode, bn_eps, bn_momentum)
        h = ad.maxpool2x2(ad.leaky_relu(h, slope))
    h = ad.dense(ad.flatten(h), store["fc.w"], store["fc.b"])
    h = ad.batchnorm2d(h, store["fc.bn.gamma"], store["fc.bn.beta"],
                       store.buffers["fc.bn"], mode, bn_eps, bn_momentum)
    h = ad.leaky_relu(h, slope)
    return ad.dense(h, store["head.w"], store["head.b"])


def samplenet_forward(x, store, mode="eval", **kw):
    """Policy tensor of shape ``(N, side)``; rows sum to one."""
    return ad.softmax(samplenet_logits(x, store, mode, **kw))


def policy(store, recon, **kw):
    """Eval-mode policy vector for a single ``(C, side, side)`` image."""
    return samplenet_forward(recon, store, "eval", **kw).value[0]


def mask_resampling(pi, mask):
    """Zero the probability of already-sampled lines and renormalize."""
    pi = np.asarray(pi, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if pi.shape != mask.shape:
        raise ad.ShapeError(f"policy {pi.shape} and mask {mask.shape} differ")
    if mask.all():
        raise ExhaustedBudgetError("all lines are already sampled")
    out = np.where(mask, 0.0, pi)
    total = out.sum()
    if total <= 0:
        # all remaining mass underflowed: fall back to uniform over free lines
        out = (~mask).astype(np.float64)
        total = out.sum()
    return out / total


def extend_pattern(mask, pi):
    """Add the highest-probability unsampled line (lowest index on ties)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.all():
        raise ExhaustedBudgetError("all lines are already sampled")
    scores = np.where(mask, -np.inf, np.asarray(pi, dtype=np.float64))
    out = mask.copy()
    out[int(np.argmax(scores))] = True
    return out


def policy_cross_entropy(pred, target):
    """``-sum(target * log(pred))`` for plain probability vectors."""
    pred, target = np.asarray(pred), np.asarray(target)
    with np.errstate(divide="ignore"):
        logp = np.where(target > 0, np.log(pred), 0.0)
    return float(-np.sum(target * logp))


def _check_targets(targets):
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim != 2:
        raise ad.ShapeError(f"targets must be (N, side), got {targets.shape}")
    if np.any(targets < 0) or not np.allclose(targets.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError("target policies must be nonnegative and sum to one")
    return targets


def train_samplenet_step(store, inputs, targets, lr=1e-4, beta1=0.9, beta2=0.999,
                         eps=1e-8, weight_decay=1e-4, **fwd):
    """One ADAM step on the mean cross-entropy; returns the pre-step loss."""
    inputs = np.asarray(inputs, dtype=store.dtype)
    if len(inputs) == 0:
        raise ValueError("empty training batch")
    targets = _check_targets(targets)
    loss = ad.cross_entropy(samplenet_logits(inputs, store, "train", **fwd), targets)
    grads = store.gradients(ad.backward(loss))
    ad.adam_step(store, grads, lr, beta1, beta2, eps, weight_decay)
    return float(loss.value)
