"""Shared oracles for the test suite."""

import numpy as np

from activemri import autodiff as ad


def numeric_grad(f, arr, h=1e-5):
    """Central finite differences of scalar ``f()`` with respect to ``arr`` (in place)."""
    out = np.zeros_like(arr, dtype=np.float64)
    for i in np.ndindex(arr.shape):
        old = arr[i]
        arr[i] = old + h
        up = f()
        arr[i] = old - h
        down = f()
        arr[i] = old
        out[i] = (up - down) / (2 * h)
    return out


def rel_error(analytic, numeric):
    """Max absolute deviation scaled by the largest numeric entry."""
    scale = max(np.abs(numeric).max(), np.finfo(float).tiny)
    return float(np.abs(analytic - numeric).max() / scale)


def check_store_grads(loss_fn, store, h=1e-5):
    """Relative error of the whole parameter gradient of ``store``.

    ``loss_fn()`` must rebuild the graph and return a scalar Tensor. The
    error is measured over the concatenated gradient vector, so parameters
    whose exact gradient is zero (a bias feeding batch norm) are compared
    against the network's gradient scale rather than their own.
    """
    grads = store.gradients(ad.backward(loss_fn()))
    ana, num = [], []
    for name, t in store.params.items():
        num.append(numeric_grad(lambda: float(loss_fn().value), t.value, h).ravel())
        ana.append(grads[name].ravel())
    return rel_error(np.concatenate(ana), np.concatenate(num))


def leaf(arr):
    return ad.Tensor(np.array(arr, dtype=np.float64), requires_grad=True)


def gradcheck(build, *arrays, weight_seed=0):
    """Compare backward() against central differences for every input array.

    ``build(*tensors)`` returns a Tensor; the scalar under test is its inner
    product with a fixed random weight so every output entry matters.
    """
    tensors = [leaf(a) for a in arrays]
    out = build(*tensors)
    w = np.random.default_rng(weight_seed).normal(size=out.shape)

    grads = ad.backward(_weighted(build(*tensors), w))
    errs = []
    for t in tensors:
        num = numeric_grad(lambda: float(_weighted(build(*tensors), w).value), t.value)
        errs.append(rel_error(grads[id(t)], num))
    return max(errs)


def _weighted(t, w):
    # scalar probe sum(w * t) with its exact gradient w
    return ad.Tensor(np.asarray(np.sum(t.value * w)), (t,), lambda g: (g * w,), "probe")


def away_from_zero(rng, shape, gap=1e-3):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-12) * gap + x, x)


class DeceptiveOracle:
    """Six-line, budget-three reward oracle with a trap.

    ``{3, 4, 5}`` scores 1.0; any other pattern scores
    ``0.3 * |S & {0, 1}| + 0.05 * |S & {3, 4, 5}|``, so single lines 0 and
    1 look best to a greedy search while the optimum needs all of 3, 4, 5.
    """

    side = 6

    def __init__(self, prior=None):
        self.prior = np.full(6, 1 / 6) if prior is None else np.asarray(prior, dtype=float)
        self.calls = 0

    def policy(self, mask):
        return self.prior

    def reward(self, mask):
        self.calls += 1
        m = np.asarray(mask, dtype=bool)
        if m[3] and m[4] and m[5]:
            return 1.0
        return float(0.3 * (m[0] + m[1]) + 0.05 * (m[3] + m[4] + m[5]))


class EvenLinesOracle:
    """Reward = number of sampled even-indexed lines, uniform prior."""

    def __init__(self, side):
        self.side = side

    def policy(self, mask):
        return np.full(self.side, 1 / self.side)

    def reward(self, mask):
        return float(np.asarray(mask, dtype=bool)[::2].sum())
