"""A small reverse-mode autodiff engine over numpy arrays.

Only the layers needed by the two networks are provided: same-padded
convolution, batch normalization, leaky ReLU, 2x2 max pooling, dense
layers and softmax, plus the losses used for training. Feature maps use
the ``(N, C, H, W)`` layout.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "ShapeError",
    "Tensor",
    "ParameterStore",
    "backward",
    "conv2d",
    "batchnorm2d",
    "leaky_relu",
    "maxpool2x2",
    "dense",
    "flatten",
    "add",
    "softmax",
    "log_softmax",
    "tensor_sum",
    "half_sq_norm",
    "mse_loss",
    "cross_entropy",
    "adam_step",
    "he_normal",
]

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
LEAKY_SLOPE = 0.01


class ShapeError(ValueError):
    """Raised when operand shapes do not fit an operation."""


class Tensor:
    """An array node in the compute graph.

    Leaves are inputs or parameters; interior nodes keep references to
    their parents and a closure mapping the output gradient to parent
    gradients.
    """

    __slots__ = ("value", "parents", "grad_fn", "op", "requires_grad")

    def __init__(self, value, parents=(), grad_fn=None, op="leaf", requires_grad=False):
        self.value = value
        self.parents = parents
        self.grad_fn = grad_fn
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.value.shape})"


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _node(value, parents, grad_fn, op):
    return Tensor(value, tuple(parents), grad_fn, op)


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


class _Stats:
    visits = 0


backward_stats = _Stats()


def backward(loss):
    """Reverse-mode gradients of a scalar ``loss``.

    Returns a dict mapping ``id(tensor)`` to its gradient for every leaf
    that requires a gradient. Use :meth:`ParameterStore.gradients` to get
    the same keyed by parameter name.
    """
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.value)}
    leaves = {}
    visits = 0
    for node in reversed(order):
        visits += 1
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.grad_fn is None:
            leaves[id(node)] = g
            continue
        for parent, pg in zip(node.parents, node.grad_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    backward_stats.visits = visits
    return leaves


# ---------------------------------------------------------------- layers


def conv2d(x, weight, bias, pad="same"):
    """2D cross-correlation with optional zero ``same`` padding."""
    x, weight, bias = _wrap(x), _wrap(weight), _wrap(bias)
    n, c, h, w = x.shape
    o, ci, k, k2 = weight.shape
    if ci != c:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {ci}")
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square and odd, got {k}x{k2}")
    if bias.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({o},)")
    if pad == "same":
        p = k // 2
    elif pad == "none":
        p = 0
    else:
        raise ValueError(f"unknown padding {pad!r}")
    xv = x.value
    if k == 1:
        cols = xv.transpose(0, 2, 3, 1).reshape(-1, c)
        ho, wo = h, w
    else:
        xp = np.pad(xv, ((0, 0), (0, 0), (p, p), (p, p)))
        ho, wo = h + 2 * p - k + 1, w + 2 * p - k + 1
        win = sliding_window_view(xp, (k, k), axis=(2, 3))
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    wmat = weight.value.reshape(o, -1)
    out = (cols @ wmat.T + bias.value).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def grad_fn(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        dw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        db = g2.sum(axis=0) if bias.requires_grad else None
        dx = None
        if x.requires_grad:
            if k == 1:
                dx = (g2 @ wmat).reshape(n, h, w, c).transpose(0, 3, 1, 2)
            else:
                # full correlation of g with the flipped kernel
                q = k - 1 - p
                gp = np.pad(g, ((0, 0), (0, 0), (q, q), (q, q)))
                gwin = sliding_window_view(gp, (k, k), axis=(2, 3))
                gcols = gwin.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, o * k * k)
                wflip = weight.value[:, :, ::-1, ::-1].transpose(0, 2, 3, 1).reshape(o * k * k, c)
                dx = (gcols @ wflip).reshape(n, h, w, c).transpose(0, 3, 1, 2)
        return dx, dw, db

    return _node(np.ascontiguousarray(out), (x, weight, bias), grad_fn, "conv2d")


def batchnorm2d(x, gamma, beta, state, mode="train", eps=BN_EPS, momentum=BN_MOMENTUM):
    """Batch normalization over all axes but the channel axis.

    Works for ``(N, C, H, W)`` feature maps and ``(N, C)`` activations.
    ``state`` holds ``mean`` and ``var`` running statistics, updated in
    place in train mode as ``momentum * old + (1 - momentum) * batch``.
    """
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm: {c} channels but gamma {gamma.shape}, beta {beta.shape}")
    axes = (0,) + tuple(range(2, x.value.ndim))
    bshape = (1, c) + (1,) * (x.value.ndim - 2)
    xv = x.value
    if mode == "train":
        mean = xv.mean(axis=axes)
        var = xv.var(axis=axes)
        state["mean"] *= momentum
        state["mean"] += (1 - momentum) * mean
        state["var"] *= momentum
        state["var"] += (1 - momentum) * var
    elif mode == "eval":
        mean, var = state["mean"], state["var"]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mean.reshape(bshape)) * inv.reshape(bshape)
    out = gamma.value.reshape(bshape) * xhat + beta.value.reshape(bshape)
    m = xv.size // c

    def grad_fn(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dx = None
        if x.requires_grad:
            gx = g * gamma.value.reshape(bshape)
            if mode == "train":
                dx = (inv.reshape(bshape) / m) * (
                    m * gx
                    - gx.sum(axis=axes).reshape(bshape)
                    - xhat * (gx * xhat).sum(axis=axes).reshape(bshape)
                )
            else:
                dx = gx * inv.reshape(bshape)
        return dx, dgamma, dbeta

    return _node(out, (x, gamma, beta), grad_fn, "batchnorm")


def leaky_relu(x, slope=LEAKY_SLOPE):
    x = _wrap(x)
    pos = x.value >= 0
    out = np.where(pos, x.value, slope * x.value)
    return _node(out, (x,), lambda g: (np.where(pos, g, slope * g),), "leaky_relu")


def maxpool2x2(x):
    """Non-overlapping 2x2 max pooling; the gradient goes to the first argmax."""
    x = _wrap(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    blocks = x.value.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        d = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(d, idx[..., None], g[..., None], axis=-1)
        d = d.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (d.reshape(n, c, h, w),)

    return _node(out, (x,), grad_fn, "maxpool2x2")


def flatten(x):
    x = _wrap(x)
    shape = x.shape
    return _node(x.value.reshape(shape[0], -1), (x,), lambda g: (g.reshape(shape),), "flatten")


def dense(x, weight, bias):
    """Affine map ``x @ weight.T + bias`` on ``(N, in)`` rows."""
    x, weight, bias = _wrap(x), _wrap(weight), _wrap(bias)
    if x.value.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"dense: bias {bias.shape} incompatible with weight {weight.shape}")
    out = x.value @ weight.value.T + bias.value

    def grad_fn(g):
        return g @ weight.value, g.T @ x.value, g.sum(axis=0)

    return _node(out, (x, weight, bias), grad_fn, "dense")


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return _node(a.value + b.value, (a, b), lambda g: (g, g), "add")


def softmax(x):
    """Softmax along the last axis."""
    x = _wrap(x)
    e = np.exp(x.value - x.value.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _node(s, (x,), grad_fn, "softmax")


def log_softmax(x):
    x = _wrap(x)
    z = x.value - x.value.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    s = np.exp(out)

    def grad_fn(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return _node(out, (x,), grad_fn, "log_softmax")


def tensor_sum(x):
    x = _wrap(x)
    return _node(np.asarray(x.value.sum()), (x,), lambda g: (np.full(x.shape, g, dtype=x.value.dtype),), "sum")


def half_sq_norm(x):
    x = _wrap(x)
    return _node(np.asarray(0.5 * np.sum(x.value ** 2)), (x,), lambda g: (g * x.value,), "half_sq_norm")


def mse_loss(pred, target):
    """Mean squared difference against a constant target array."""
    pred = _wrap(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.value - target
    return _node(np.asarray(np.mean(diff ** 2)), (pred,), lambda g: (g * 2.0 * diff / diff.size,), "mse")


def cross_entropy(logits, target):
    """Mean over rows of ``-sum(target * log_softmax(logits))``."""
    logits = _wrap(logits)
    target = np.asarray(target)
    if logits.shape != target.shape:
        raise ShapeError(f"cross_entropy: shape mismatch {logits.shape} vs {target.shape}")
    z = logits.value - logits.value.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    n = logits.shape[0]
    loss = -np.sum(target * logp) / n

    def grad_fn(g):
        p = np.exp(logp)
        return (g * (p * target.sum(axis=-1, keepdims=True) - target) / n,)

    return _node(np.asarray(loss), (logits,), grad_fn, "cross_entropy")


# ---------------------------------------------------------- parameters


def he_normal(rng, shape, fan_in, dtype=np.float64):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class ParameterStore:
    """Named trainable tensors, batch-norm running statistics and ADAM state."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.params = {}
        self.buffers = {}
        self.m = {}
        self.v = {}
        self.step = 0

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.asarray(value, dtype=self.dtype)
        self.params[name] = Tensor(value, requires_grad=True)
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)
        return self.params[name]

    def add_bn_state(self, name, channels):
        self.buffers[name] = {
            "mean": np.zeros(channels, dtype=self.dtype),
            "var": np.ones(channels, dtype=self.dtype),
        }
        return self.buffers[name]

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def n_parameters(self):
        return sum(t.value.size for t in self.params.values())

    def gradients(self, leaf_grads):
        """Translate a :func:`backward` result into ``{name: grad}``."""
        return {
            name: leaf_grads.get(id(t), np.zeros_like(t.value))
            for name, t in self.params.items()
        }

    def copy(self):
        out = ParameterStore(self.dtype)
        for name, t in self.params.items():
            out.params[name] = Tensor(t.value.copy(), requires_grad=True)
            out.m[name] = self.m[name].copy()
            out.v[name] = self.v[name].copy()
        out.buffers = {k: {s: a.copy() for s, a in b.items()} for k, b in self.buffers.items()}
        out.step = self.step
        return out

    def state_arrays(self, prefix=""):
        """Flatten everything into ``{key: array}`` for serialization."""
        out = {}
        for name, t in self.params.items():
            out[f"{prefix}param/{name}"] = t.value
            out[f"{prefix}adam_m/{name}"] = self.m[name]
            out[f"{prefix}adam_v/{name}"] = self.v[name]
        for name, b in self.buffers.items():
            for stat, arr in b.items():
                out[f"{prefix}buffer/{name}/{stat}"] = arr
        out[f"{prefix}step"] = np.asarray(self.step, dtype=np.int64)
        return out

    def load_state_arrays(self, arrays, prefix=""):
        for name, t in self.params.items():
            val = arrays[f"{prefix}param/{name}"]
            if val.shape != t.value.shape:
                raise ShapeError(f"parameter {name}: stored shape {val.shape} != {t.value.shape}")
            t.value = np.array(val, dtype=self.dtype)
            self.m[name] = np.array(arrays[f"{prefix}adam_m/{name}"], dtype=self.dtype)
            self.v[name] = np.array(arrays[f"{prefix}adam_v/{name}"], dtype=self.dtype)
        for name, b in self.buffers.items():
            for stat in b:
                b[stat] = np.array(arrays[f"{prefix}buffer/{name}/{stat}"], dtype=self.dtype)
        self.step = int(arrays[f"{prefix}step"])


def adam_step(store, grads, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=1e-4):
    """One bias-corrected ADAM update in place.

    Weight decay enters as the gradient of ``weight_decay * ||param||^2``.
    """
    for name in grads:
        if name not in store.params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
    store.step += 1
    t = store.step
    for name, param in store.params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != param.value.shape:
            raise ShapeError(f"gradient for {name}: shape {g.shape} != {param.value.shape}")
        if weight_decay:
            g = g + 2.0 * weight_decay * param.value
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        param.value = param.value - lr * mhat / (np.sqrt(vhat) + eps)
    return store
