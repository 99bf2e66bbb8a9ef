"""Differentiable primitives.

Every function takes :class:`~sdalab.tensor.Tensor` (or array-like) operands,
computes its value with numpy and registers a vector-Jacobian product on the
active tape.
"""

from __future__ import annotations

import numpy as np

from sdalab.tensor import DTYPE, ShapeError, Tensor, as_tensor, record


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(primitive: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(primitive, a.shape, b.shape) from None


def identity(x) -> Tensor:
    x = as_tensor(x)
    return record("identity", x.data.copy(), (x,), lambda g: (g,))


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return record("add", a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return record("sub", a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    return record("mul", ad * bd, (a, b),
                  lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)))


def square(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return record("square", xd * xd, (x,), lambda g: (2.0 * xd * g,))


def matmul(a, b) -> Tensor:
    """``a @ b`` for ``a`` of shape (..., n) and 2-D ``b`` of shape (n, m)."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def vjp(g):
        ga = g @ bd.T
        a2 = ad.reshape(-1, ad.shape[-1])
        gb = a2.T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return record("matmul", ad @ bd, (a, b), vjp)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return record("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.data)
    return record("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def log_sigmoid(x) -> Tensor:
    """log(sigmoid(x)) in the overflow-free form -softplus(-x)."""
    x = as_tensor(x)
    xd = x.data
    y = np.minimum(xd, 0.0) - np.log1p(np.exp(-np.abs(xd)))
    s = _sigmoid(-xd)
    return record("log_sigmoid", y, (x,), lambda g: (g * s,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return record("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return record("exp", y, (x,), lambda g: (g * y,))


def log(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    if np.any(xd <= 0):
        raise ValueError("log: non-positive input")
    return record("log", np.log(xd), (x,), lambda g: (g / xd,))


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return record("sum", np.sum(x.data, axis=axis, keepdims=keepdims), (x,), vjp)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    n = x.data.size if axis is None else np.prod([shape[a] for a in np.atleast_1d(axis)])

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)

    return record("mean", np.mean(x.data, axis=axis, keepdims=keepdims), (x,), vjp)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record("softmax", y, (x,), vjp)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def vjp(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return record("log_softmax", y, (x,), vjp)


def max_over_time(x, axis: int = 1) -> Tensor:
    """Max-pool over ``axis``; the gradient goes to the first maximal entry."""
    x = as_tensor(x)
    idx = np.argmax(x.data, axis=axis)
    y = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)
    shape = x.shape

    def vjp(g):
        gx = np.zeros(shape, dtype=DTYPE)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return record("max_over_time", y, (x,), vjp)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax
        ):
            raise ShapeError("concat", ref, t.shape)
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=ax))

    return record("concat", np.concatenate([t.data for t in tensors], axis=ax), tensors, vjp)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise ShapeError("stack", tensors[0].shape, t.shape)

    def vjp(g):
        return tuple(np.moveaxis(g, axis, 0))

    return record("stack", np.stack([t.data for t in tensors], axis=axis), tensors, vjp)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", old, shape) from None
    return record("reshape", y, (x,), lambda g: (g.reshape(old),))


def index(x, key) -> Tensor:
    """Basic (slice / integer) indexing."""
    x = as_tensor(x)
    shape = x.shape

    def vjp(g):
        gx = np.zeros(shape, dtype=DTYPE)
        gx[key] = g
        return (gx,)

    return record("index", x.data[key].copy(), (x,), vjp)


def dropout(x, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; the identity when ``train`` is false or ``p == 0``."""
    x = as_tensor(x)
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an explicit rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return record("dropout", x.data * keep, (x,), lambda g: (g * keep,))


def conv1d(x, w) -> Tensor:
    """Valid 1-D cross-correlation.

    ``x``: (batch, length, c_in); ``w``: (k, c_in, c_out) -> (batch, length-k+1, c_out).
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1]:
        raise ShapeError("conv1d", x.shape, w.shape)
    b, length, cin = x.shape
    k, _, cout = w.shape
    if k > length:
        raise ShapeError("conv1d", x.shape, w.shape, "kernel longer than sequence")
    steps = length - k + 1
    win = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=1)  # (b, steps, cin, k)
    cols = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(b, steps, k * cin)
    wmat = w.data.reshape(k * cin, cout)
    y = cols @ wmat

    def vjp(g):
        gw = (cols.reshape(-1, k * cin).T @ g.reshape(-1, cout)).reshape(k, cin, cout)
        gcols = (g @ wmat.T).reshape(b, steps, k, cin)
        gx = np.zeros((b, length, cin), dtype=DTYPE)
        for j in range(k):
            gx[:, j:j + steps] += gcols[:, :, j]
        return gx, gw

    return record("conv1d", y, (x, w), vjp)


def embedding(table, ids: np.ndarray, padding_idx: int | None = 0) -> Tensor:
    """Row lookup ``table[ids]``; the padding row never receives gradient."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding: token id out of range [0, {table.shape[0]})")
    shape = table.shape

    def vjp(g):
        gt = np.zeros(shape, dtype=DTYPE)
        np.add.at(gt, ids.ravel(), g.reshape(-1, shape[1]))
        if padding_idx is not None:
            gt[padding_idx] = 0.0
        return (gt,)

    return record("embedding", table.data[ids], (table,), vjp)


def bce_with_logits(logits, labels) -> Tensor:
    """Mean binary cross-entropy computed from logits with log-sigmoid."""
    logits = as_tensor(logits)
    y = np.asarray(labels, dtype=DTYPE)
    if y.shape != logits.shape:
        raise ShapeError("bce_with_logits", logits.shape, y.shape)
    z = logits.data
    # -[y log s(z) + (1-y) log s(-z)] = softplus(z) - y z
    loss = np.mean(np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z))) - y * z)
    n = z.size
    p = _sigmoid(z)
    return record("bce_with_logits", np.array(loss), (logits,), lambda g: (g * (p - y) / n,))
