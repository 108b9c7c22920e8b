"""Dense tensors and the recording tape used for reverse-mode differentiation."""
import contextlib
import threading

import numpy as np

_DTYPES = {"float64": np.float64, "float32": np.float32}

_local = threading.local()


def _stack():
    st = getattr(_local, "tapes", None)
    if st is None:
        st = _local.tapes = []
    return st


def get_dtype():
    return getattr(_local, "dtype", np.float64)


def set_precision(name):
    """Set the default float width for new tensors ("float64" or "float32")."""
    if name not in _DTYPES:
        raise ValueError(f"unknown precision {name!r}; expected float64 or float32")
    _local.dtype = _DTYPES[name]


@contextlib.contextmanager
def precision(name):
    old = get_dtype()
    set_precision(name)
    try:
        yield
    finally:
        _local.dtype = old


def current_tape():
    st = _stack()
    return st[-1] if st else None


# op name -> multiplier applied to that op's input gradients. Test hook only.
_PERTURB = {}


@contextlib.contextmanager
def perturb_backward(op, factor=1.5):
    """Deliberately corrupt one primitive's backward rule (sensitivity checks)."""
    _PERTURB[op] = factor
    try:
        yield
    finally:
        _PERTURB.pop(op, None)


class Tensor:
    """A dense float array with an optional gradient.

    Tensors created by ops while a :class:`Tape` is active (and with at least
    one input requiring grad) are recorded on that tape.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "tape")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        self.data = np.asarray(data, dtype=dtype or get_dtype())
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self.tape = None

    @classmethod
    def _wrap(cls, data, requires_grad):
        t = cls.__new__(cls)
        t.data = data
        t.grad = None
        t.requires_grad = requires_grad
        t.name = None
        t.tape = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from . import ops
        return ops.matmul(other, self)

    def __getitem__(self, idx):
        from . import ops
        return ops.getitem(self, idx)

    @property
    def T(self):
        from . import ops
        return ops.transpose(self)

    def sum(self, axis=None):
        from . import ops
        return ops.sum(self, axis)


class Tape:
    """Ordered record of executed operations.

    Use as a context manager; ops executed inside record themselves here and
    :meth:`backward` replays them in exact reverse execution order.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        st = _stack()
        if st and st[-1] is self:
            st.pop()
        else:  # pragma: no cover
            st.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, op, inputs, outputs, backward_fn):
        for out in outputs:
            out.tape = self
        self.nodes.append((op, inputs, outputs, backward_fn))

    def clear(self):
        self.nodes.clear()

    def backward(self, loss):
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.nodes:
            raise RuntimeError("tape is empty")
        # intermediates get fresh gradients each pass; leaves accumulate
        for _, _, outputs, _ in self.nodes:
            for out in outputs:
                out.grad = None
        loss.grad = np.ones_like(loss.data)
        for op, inputs, outputs, fn in reversed(self.nodes):
            grads_out = [o.grad for o in outputs]
            if all(g is None for g in grads_out):
                continue
            grads_out = [np.zeros_like(o.data) if g is None else g
                         for o, g in zip(outputs, grads_out)]
            grads_in = fn(grads_out)
            scale = _PERTURB.get(op)
            for t, g in zip(inputs, grads_in):
                if g is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                if scale is not None:
                    g = g * scale
                if t.grad is None:
                    t.grad = np.array(g, dtype=t.data.dtype, copy=True).reshape(t.shape)
                else:
                    t.grad = t.grad + g


def backward(loss):
    """Populate ``.grad`` of every tensor that ``loss`` depends on."""
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape is None:
        raise RuntimeError("loss was not produced under an active Tape")
    loss.tape.backward(loss)


def no_grad():
    """Context in which ops do not record (inference)."""
    return _NoGrad()


class _NoGrad:
    def __enter__(self):
        _stack().append(None)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False
