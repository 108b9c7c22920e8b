"""Differentiable primitives.

Every forward op returns a new :class:`Tensor`; when a tape is active and an
input requires grad, the op records a closure computing input gradients from
output gradients. Non-tensor operands (python scalars, numpy arrays) are
treated as constants.
"""
import numpy as np

from .. import kernels
from .tensor import Tensor, current_tape, get_dtype


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _record(op, data, inputs, fn):
    if not np.isfinite(data).all():
        raise FloatingPointError(f"non-finite values produced by {op}")
    tape = current_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, needs)
    if needs:
        tape.record(op, inputs, (out,), lambda gs: fn(gs[0]))
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}") from None


# ----------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _record("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _record("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def neg(a):
    return _record("neg", -a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return _record("mul", a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)))


elementwise_mul = mul


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    with np.errstate(divide="ignore", invalid="ignore"):  # _record rejects non-finite output
        out = a.data / b.data
    return _record("div", out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)))


def tanh(x):
    y = np.tanh(x.data)
    return _record("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x):
    z = x.data
    e = np.exp(-np.abs(z))
    y = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(z.dtype, copy=False)
    return _record("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def log(x, floor=None):
    """Natural log. With ``floor``, inputs below it are clamped (zero gradient there)."""
    d = x.data
    if floor is not None:
        clamped = d < floor
        d = np.where(clamped, floor, d)
    else:
        clamped = None
        if np.any(d <= 0):
            raise FloatingPointError("log of non-positive value")
    y = np.log(d)

    def fn(g):
        gx = g / d
        if clamped is not None:
            gx = np.where(clamped, 0.0, gx)
        return (gx,)

    return _record("log", y, (x,), fn)


# ----------------------------------------------------------------- linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0 or a.ndim > 2 or b.ndim > 2 \
            or a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    out = a.data @ b.data

    def fn(g):
        A = a.data if a.ndim == 2 else a.data[None, :]
        B = b.data if b.ndim == 2 else b.data[:, None]
        G = np.reshape(g, (A.shape[0], B.shape[1]))
        gA = G @ B.T
        gB = A.T @ G
        return gA.reshape(a.shape), gB.reshape(b.shape)

    return _record("matmul", out, (a, b), fn)


def transpose(x):
    if x.ndim != 2:
        raise ValueError(f"transpose needs a 2-d tensor, got shape {x.shape}")
    return _record("transpose", x.data.T, (x,), lambda g: (g.T,))


def reshape(x, shape):
    old = x.shape
    return _record("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


# ----------------------------------------------------------------- reductions

def sum(x, axis=None):  # noqa: A001 - mirrors numpy naming
    out = x.data.sum(axis=axis)

    def fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _record("sum", out, (x,), fn)


def mean(x, axis=None):
    n = x.size if axis is None else x.shape[axis]
    out = x.data.mean(axis=axis)

    def fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape),)

    return _record("mean", out, (x,), fn)


def max(x, axis=-1):  # noqa: A001
    """Max along ``axis``; the backward pass routes to the recorded argmax.

    Ties resolve to the lowest index.
    """
    idx = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def fn(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    res = _record("max", out, (x,), fn)
    return res


def argmax_of(x, axis=-1):
    return np.argmax(x.data, axis=axis)


def softmax(x, axis=-1, mask=None):
    """Softmax along ``axis``.

    ``mask`` is a 0/1 array broadcastable to ``x``; masked positions get exactly
    zero probability and the rest renormalize.
    """
    z = x.data
    if mask is None:
        shifted = z - z.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
    else:
        m = np.broadcast_to(np.asarray(mask) != 0, z.shape)
        if m.shape != z.shape:
            raise ValueError(f"softmax: mask shape {np.shape(mask)} vs {z.shape}")
        if np.any(~m.any(axis=axis)):
            raise ValueError("all positions masked")
        zm = np.where(m, z, -np.inf)
        shifted = np.where(m, z - zm.max(axis=axis, keepdims=True), 0.0)
        e = np.where(m, np.exp(shifted), 0.0)
    y = e / e.sum(axis=axis, keepdims=True)
    y = y.astype(z.dtype, copy=False)

    def fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record("softmax", y, (x,), fn)


# ----------------------------------------------------------------- structure

def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = " vs ".join(str(t.shape) for t in tensors)
        raise ValueError(f"concat: shape mismatch {shapes}") from None
    ax = axis % out.ndim
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def fn(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _record("concat", out, tuple(tensors), fn)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ValueError(f"stack: shape mismatch {' vs '.join(map(str, shapes))}")
    out = np.stack([t.data for t in tensors], axis=axis)

    def fn(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _record("stack", out, tuple(tensors), fn)


def getitem(x, idx):
    out = x.data[idx]

    def fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _record("getitem", np.array(out, copy=True), (x,), fn)


def take(x, indices):
    """Gather rows (axis 0) of ``x``; duplicate indices accumulate in backward."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError(f"take: index out of range for axis of size {x.shape[0]}")
    out = x.data[idx]

    def fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _record("take", out, (x,), fn)


def embedding_lookup(table, ids):
    return take(table, ids)


def scatter_add(x, indices, size):
    """Sum entries of the 1-d ``x`` into a length-``size`` vector at ``indices``."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.shape != x.shape:
        raise ValueError(f"scatter_add: shape mismatch {x.shape} vs {idx.shape}")
    out = np.zeros(size, dtype=x.dtype)
    np.add.at(out, idx, x.data)
    return _record("scatter_add", out, (x,), lambda g: (g[idx],))


def dropout(x, p, train, rng=None):
    """Inverted dropout. Identity when not training or when ``p == 0``."""
    if not train or p == 0:
        return x
    if not 0 <= p < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    rng = rng if rng is not None else np.random.default_rng()
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _record("dropout", x.data * keep, (x,), lambda g: (g * keep,))


def reweight(x, w):
    """``x * w / sum(x * w)`` for 1-d ``x`` and ``w``.

    A constant ``w`` cancels algebraically, so the output is ``x`` itself
    (bit for bit); the backward rule is the general one either way.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.shape != w.shape or x.ndim != 1:
        raise ValueError(f"reweight: shape mismatch {x.shape} vs {w.shape}")
    prod = x.data * w.data
    S = prod.sum()
    if not S > 0:
        raise ValueError("reweight: non-positive normalizer")
    y = x.data.copy() if np.all(w.data == w.data[0]) else prod / S

    def fn(g):
        r = (g - (g * y).sum()) / S
        return r * w.data, r * x.data

    return _record("reweight", y, (x, w), fn)


# ----------------------------------------------------------------- recurrent

def _sig(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def lstm_cell(x, h, c, Wx, Wh, b):
    """One LSTM step with gates ordered (input, forget, cell, output).

    Returns ``(h_new, c_new)``, recorded as a single two-output tape node.
    """
    x, h, c = as_tensor(x), as_tensor(h), as_tensor(c)
    n = h.shape[-1]
    if Wx.shape != (x.shape[-1], 4 * n) or Wh.shape != (n, 4 * n) or b.shape != (4 * n,):
        raise ValueError(f"lstm_cell: shape mismatch x{x.shape} h{h.shape} "
                         f"Wx{Wx.shape} Wh{Wh.shape} b{b.shape}")
    if c.shape != h.shape:
        raise ValueError(f"lstm_cell: shape mismatch {h.shape} vs {c.shape}")
    z = x.data @ Wx.data + h.data @ Wh.data + b.data
    i = _sig(z[..., :n])
    f = _sig(z[..., n:2 * n])
    gg = np.tanh(z[..., 2 * n:3 * n])
    o = _sig(z[..., 3 * n:])
    c_new = (f * c.data + i * gg).astype(z.dtype, copy=False)
    tc = np.tanh(c_new)
    h_new = (o * tc).astype(z.dtype, copy=False)

    inputs = (x, h, c, Wx, Wh, b)
    tape = current_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    h_out = Tensor._wrap(h_new, needs)
    c_out = Tensor._wrap(c_new, needs)
    if needs:
        def fn(gs):
            dh, dc = gs
            dc = dc + dh * o * (1.0 - tc * tc)
            dz = np.concatenate([
                dc * gg * i * (1.0 - i),
                dc * c.data * f * (1.0 - f),
                dc * i * (1.0 - gg * gg),
                dh * tc * o * (1.0 - o),
            ], axis=-1)
            X = np.atleast_2d(x.data)
            Hp = np.atleast_2d(h.data)
            D = np.atleast_2d(dz)
            return (
                (dz @ Wx.data.T).reshape(x.shape),
                (dz @ Wh.data.T).reshape(h.shape),
                (dc * f).reshape(c.shape),
                X.T @ D,
                Hp.T @ D,
                D.sum(axis=0),
            )

        tape.record("lstm_cell", inputs, (h_out, c_out), fn)
    return h_out, c_out


def lstm_sequence(X, Wx, Wh, b, reverse=False, h0=None, c0=None):
    """Run an LSTM over the rows of ``X`` (L x d) and return all hidden states (L x n).

    With ``reverse`` the sequence is consumed tail-to-head and row ``t`` of the
    result is the state after reading ``X[t:]``. The recurrence runs in the
    compiled kernel when available; it is numerically the same as unrolling
    :func:`lstm_cell`.
    """
    n = Wh.shape[0]
    if X.ndim != 2 or Wx.shape != (X.shape[1], 4 * n) or Wh.shape != (n, 4 * n) \
            or b.shape != (4 * n,):
        raise ValueError(f"lstm_sequence: shape mismatch X{X.shape} Wx{Wx.shape} "
                         f"Wh{Wh.shape} b{b.shape}")
    dtype = X.data.dtype
    h0 = as_tensor(np.zeros(n, dtype=dtype)) if h0 is None else h0
    c0 = as_tensor(np.zeros(n, dtype=dtype)) if c0 is None else c0
    Xd = X.data[::-1] if reverse else X.data
    xw = Xd @ Wx.data + b.data
    H, C, G = kernels.lstm_forward(xw, Wh.data, h0.data, c0.data)
    out = H[::-1].copy() if reverse else H

    def fn(g):
        dH = g[::-1] if reverse else g
        dxw, dwh, dh0, dc0 = kernels.lstm_backward(dH, Wh.data, h0.data, c0.data, H, C, G)
        dX = dxw @ Wx.data.T
        if reverse:
            dX = dX[::-1]
        return dX, Xd.T @ dxw, dwh, dxw.sum(axis=0), dh0, dc0

    return _record("lstm_sequence", out, (X, Wx, Wh, b, h0, c0), fn)


def constant(value, dtype=None):
    return Tensor(value, dtype=dtype or get_dtype())
