"""Residual CNN mapping a zero-filled image to a de-aliased reconstruction.

Layout: a 1x1 linear convolution lifts the input to ``width`` channels,
then ``blocks`` residual blocks each apply conv3x3, batch norm and leaky
ReLU with the identity added after the activation, and a final 1x1 linear
convolution maps back to the input channel count.
"""

import numpy as np

from . import autodiff as ad

__all__ = [
    "init_reconnet",
    "reconnet_forward",
    "reconstruct",
    "reconnet_loss",
    "train_reconnet_step",
    "reconnet_param_count",
    "reconnet_arch",
]


def reconnet_param_count(channels, width=64, blocks=8):
    lift = channels * width + width
    block = 9 * width * width + width + 2 * width
    out = width * channels + channels
    return lift + blocks * block + out


def init_reconnet(channels=1, width=64, blocks=8, seed=0, dtype=np.float64, zero_output=False):
    rng = np.random.default_rng(seed)
    store = ad.ParameterStore(dtype)
    store.add("lift.w", ad.he_normal(rng, (width, channels, 1, 1), channels, dtype))
    store.add("lift.b", np.zeros(width))
    for i in range(blocks):
        store.add(f"block{i}.conv.w", ad.he_normal(rng, (width, width, 3, 3), 9 * width, dtype))
        store.add(f"block{i}.conv.b", np.zeros(width))
        store.add(f"block{i}.bn.gamma", np.ones(width))
        store.add(f"block{i}.bn.beta", np.zeros(width))
        store.add_bn_state(f"block{i}.bn", width)
    out_w = np.zeros((channels, width, 1, 1)) if zero_output else ad.he_normal(
        rng, (channels, width, 1, 1), width, dtype)
    store.add("out.w", out_w)
    store.add("out.b", np.zeros(channels))
    return store


def reconnet_arch(store):
    """``(channels, width, blocks)`` recovered from parameter shapes."""
    width, channels = store["lift.w"].shape[:2]
    blocks = sum(1 for name in store.params if name.endswith(".conv.w"))
    return channels, width, blocks


def _batch(x, dtype):
    if isinstance(x, ad.Tensor):
        return x
    x = np.asarray(x, dtype=dtype)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[2] != x.shape[3]:
        raise ad.ShapeError(f"expected (N, C, side, side) input, got {x.shape}")
    return ad.Tensor(x)


def reconnet_forward(zf, store, mode="eval", slope=ad.LEAKY_SLOPE,
                     bn_eps=ad.BN_EPS, bn_momentum=ad.BN_MOMENTUM):
    x = _batch(zf, store.dtype)
    channels, _, blocks = reconnet_arch(store)
    if x.shape[1] != channels:
        raise ad.ShapeError(f"ReconNet expects {channels} channels, got {x.shape[1]}")
    h = ad.conv2d(x, store["lift.w"], store["lift.b"])
    for i in range(blocks):
        y = ad.conv2d(h, store[f"block{i}.conv.w"], store[f"block{i}.conv.b"])
        y = ad.batchnorm2d(y, store[f"block{i}.bn.gamma"], store[f"block{i}.bn.beta"],
                           store.buffers[f"block{i}.bn"], mode, bn_eps, bn_momentum)
        h = ad.add(h, ad.leaky_relu(y, slope))
    return ad.conv2d(h, store["out.w"], store["out.b"])


def reconstruct(store, zf, **kw):
    """Eval-mode reconstruction of one ``(C, side, side)`` image."""
    return reconnet_forward(zf, store, "eval", **kw).value[0]


def reconnet_loss(pred, target):
    """Mean squared error; a Tensor prediction gives a differentiable loss."""
    if isinstance(pred, ad.Tensor):
        return ad.mse_loss(pred, target)
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ad.ShapeError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def train_reconnet_step(store, zf_batch, target_batch, lr=1e-4, beta1=0.9, beta2=0.999,
                        eps=1e-8, weight_decay=1e-4, **fwd):
    """One ADAM step on the mean batch MSE; returns the pre-step loss."""
    zf_batch = np.asarray(zf_batch, dtype=store.dtype)
    if len(zf_batch) == 0:
        raise ValueError("empty training batch")
    target_batch = np.asarray(target_batch, dtype=store.dtype)
    loss = reconnet_loss(reconnet_forward(zf_batch, store, "train", **fwd), target_batch)
    grads = store.gradients(ad.backward(loss))
    ad.adam_step(store, grads, lr, beta1, beta2, eps, weight_decay)
    return float(loss.value)
