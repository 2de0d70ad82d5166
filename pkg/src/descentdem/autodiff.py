"""Reverse-mode automatic differentiation over numpy arrays.

A small tape: every operation returns a `Tensor` holding its forward value
and, when gradients are enabled, a closure that routes the output gradient
back to its parents. `backward()` walks the graph once in reverse
topological order. Only first derivatives are supported.

All functions accept plain numpy arrays (or scalars) as well as Tensors;
when no argument is a Tensor the plain numpy result is returned, so the
same numeric code serves both the training path and gradient-free tools.
"""

from __future__ import annotations

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """Array node in the computation graph."""

    __slots__ = ("value", "grad", "parents", "vjp", "needs_grad", "name")

    # make numpy defer to the reflected operators instead of building
    # object arrays when an ndarray meets a Tensor
    __array_ufunc__ = None

    def __init__(self, value, needs_grad=False, parents=(), vjp=None, name=None):
        self.value = np.asarray(value)
        self.grad = None
        self.parents = parents
        self.vjp = vjp
        self.needs_grad = needs_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def size(self):
        return self.value.size

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, needs_grad={self.needs_grad})"

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.value.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.value)

    def item(self) -> float:
        return float(self.value)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, key):
        return getitem(self, key)


def parameter(value, name=None, dtype=None) -> Tensor:
    """Leaf tensor that receives gradients."""
    arr = np.array(value, dtype=dtype, copy=True)
    return Tensor(arr, needs_grad=True, name=name)


def constant(value, dtype=None) -> Tensor:
    return Tensor(np.asarray(value, dtype=dtype))


def value_of(x):
    """Raw numpy value of a Tensor or array-like."""
    return x.value if isinstance(x, Tensor) else np.asarray(x)


def _is_tensor(*xs):
    return any(isinstance(x, Tensor) for x in xs)


def _needs(*xs):
    return _grad_enabled and any(
        isinstance(x, Tensor) and x.needs_grad for x in xs
    )


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _make(value, parents, vjp):
    if _grad_enabled and any(p.needs_grad for p in parents):
        return Tensor(value, needs_grad=True, parents=parents, vjp=vjp)
    return Tensor(value)


def _binary(x, y, fwd, vjp_builder):
    if not _is_tensor(x, y):
        return fwd(np.asarray(x), np.asarray(y))
    xt = x if isinstance(x, Tensor) else Tensor(x)
    yt = y if isinstance(y, Tensor) else Tensor(y)
    out = fwd(xt.value, yt.value)
    return _make(out, (xt, yt), vjp_builder(xt, yt, out))


def _unary(x, fwd, vjp_builder):
    if not isinstance(x, Tensor):
        return fwd(np.asarray(x))
    out = fwd(x.value)
    return _make(out, (x,), vjp_builder(x, out))


# ---------------------------------------------------------------- arithmetic


def add(x, y):
    def vjp(xt, yt, out):
        def back(g):
            if xt.needs_grad:
                xt._accum(_unbroadcast(g, xt.value.shape))
            if yt.needs_grad:
                yt._accum(_unbroadcast(g, yt.value.shape))

        return back

    return _binary(x, y, np.add, vjp)


def sub(x, y):
    def vjp(xt, yt, out):
        def back(g):
            if xt.needs_grad:
                xt._accum(_unbroadcast(g, xt.value.shape))
            if yt.needs_grad:
                yt._accum(_unbroadcast(-g, yt.value.shape))

        return back

    return _binary(x, y, np.subtract, vjp)


def mul(x, y):
    def vjp(xt, yt, out):
        def back(g):
            if xt.needs_grad:
                xt._accum(_unbroadcast(g * yt.value, xt.value.shape))
            if yt.needs_grad:
                yt._accum(_unbroadcast(g * xt.value, yt.value.shape))

        return back

    return _binary(x, y, np.multiply, vjp)


def div(x, y):
    def vjp(xt, yt, out):
        def back(g):
            if xt.needs_grad:
                xt._accum(_unbroadcast(g / yt.value, xt.value.shape))
            if yt.needs_grad:
                yt._accum(_unbroadcast(-g * out / yt.value, yt.value.shape))

        return back

    return _binary(x, y, np.divide, vjp)


def power(x, p: float):
    p = float(p)

    def vjp(xt, out):
        def back(g):
            xt._accum(g * p * xt.value ** (p - 1.0))

        return back

    return _unary(x, lambda v: v**p, vjp)


def square(x):
    def vjp(xt, out):
        def back(g):
            xt._accum(g * (2.0 * xt.value))

        return back

    return _unary(x, np.square, vjp)


def sqrt(x):
    def vjp(xt, out):
        def back(g):
            xt._accum(g * (0.5 / out))

        return back

    return _unary(x, np.sqrt, vjp)


def exp(x):
    def vjp(xt, out):
        def back(g):
            xt._accum(g * out)

        return back

    return _unary(x, np.exp, vjp)


def log(x):
    def vjp(xt, out):
        def back(g):
            xt._accum(g / xt.value)

        return back

    return _unary(x, np.log, vjp)


def tanh(x):
    def vjp(xt, out):
        def back(g):
            xt._accum(g * (1.0 - out * out))

        return back

    return _unary(x, np.tanh, vjp)


def _sigmoid_np(v):
    # piecewise form avoids overflow in exp for large |v|
    out = np.empty_like(v, dtype=v.dtype if v.dtype.kind == "f" else np.float64)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x):
    def vjp(xt, out):
        def back(g):
            xt._accum(g * out * (1.0 - out))

        return back

    return _unary(
        x, lambda v: _sigmoid_np(np.asarray(v, dtype=np.result_type(v, np.float32))), vjp
    )


def softplus(x):
    def fwd(v):
        return np.logaddexp(np.zeros((), dtype=v.dtype), v)

    def vjp(xt, out):
        def back(g):
            xt._accum(g * _sigmoid_np(xt.value))

        return back

    return _unary(x, fwd, vjp)


def relu(x):
    def vjp(xt, out):
        def back(g):
            xt._accum(g * (xt.value > 0))

        return back

    return _unary(x, lambda v: np.maximum(v, 0), vjp)


def absolute(x):
    def vjp(xt, out):
        def back(g):
            xt._accum(g * np.sign(xt.value))

        return back

    return _unary(x, np.abs, vjp)


def clip(x, lo, hi):
    """Clamp with zero gradient outside [lo, hi]."""

    def vjp(xt, out):
        mask = (xt.value >= lo) & (xt.value <= hi)

        def back(g):
            xt._accum(g * mask)

        return back

    return _unary(x, lambda v: np.clip(v, lo, hi), vjp)


def where(cond, x, y):
    """Select by a plain boolean array (cond carries no gradient)."""
    cond = np.asarray(value_of(cond), dtype=bool)

    def vjp(xt, yt, out):
        def back(g):
            if xt.needs_grad:
                xt._accum(_unbroadcast(np.where(cond, g, 0.0), xt.value.shape))
            if yt.needs_grad:
                yt._accum(_unbroadcast(np.where(cond, 0.0, g), yt.value.shape))

        return back

    return _binary(x, y, lambda a, b: np.where(cond, a, b), vjp)


# ---------------------------------------------------------------- reductions


def tsum(x, axis=None, keepdims=False):
    def vjp(xt, out):
        def back(g):
            if axis is None:
                xt._accum(np.broadcast_to(g, xt.value.shape))
            else:
                ge = np.expand_dims(g, axis) if not keepdims else g
                xt._accum(np.broadcast_to(ge, xt.value.shape))

        return back

    return _unary(x, lambda v: v.sum(axis=axis, keepdims=keepdims), vjp)


def tmean(x, axis=None, keepdims=False):
    v = value_of(x)
    if axis is None:
        n = v.size
    else:
        n = v.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def cumsum(x, axis=-1):
    def vjp(xt, out):
        def back(g):
            rev = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
            xt._accum(rev)

        return back

    return _unary(x, lambda v: np.cumsum(v, axis=axis), vjp)


# ------------------------------------------------------------ linear algebra


def matmul(x, y):
    """2-D matrix product; gradients for either operand."""

    def vjp(xt, yt, out):
        def back(g):
            if xt.needs_grad:
                xt._accum(g @ yt.value.T)
            if yt.needs_grad:
                yt._accum(xt.value.T @ g)

        return back

    return _binary(x, y, np.matmul, vjp)


# ------------------------------------------------------- shape and indexing


def reshape(x, shape):
    def vjp(xt, out):
        def back(g):
            xt._accum(g.reshape(xt.value.shape))

        return back

    return _unary(x, lambda v: v.reshape(shape), vjp)


def getitem(x, key):
    """Basic (slice / integer) indexing with scatter-back gradient."""

    def vjp(xt, out):
        def back(g):
            full = np.zeros_like(xt.value)
            np.add.at(full, key, g)
            xt._accum(full)

        return back

    return _unary(x, lambda v: v[key], vjp)


def concatenate(xs, axis=0):
    if not _is_tensor(*xs):
        return np.concatenate([np.asarray(x) for x in xs], axis=axis)
    ts = [x if isinstance(x, Tensor) else Tensor(x) for x in xs]
    out = np.concatenate([t.value for t in ts], axis=axis)
    sizes = [t.value.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        parts = np.split(g, splits, axis=axis)
        for t, p in zip(ts, parts):
            if t.needs_grad:
                t._accum(p)

    return _make(out, tuple(ts), back)


def take_rows(table, idx):
    """Gather rows of a 1-D or 2-D table by an integer index array.

    Output has shape idx.shape (+ (F,) for a 2-D table). The gradient is a
    scatter-add into the table, computed with bincount per feature column so
    the reduction order is fixed.
    """
    idx = np.asarray(value_of(idx))
    if not isinstance(table, Tensor):
        return np.asarray(table)[idx]
    tv = table.value
    flat = idx.reshape(-1)
    if tv.ndim == 1:
        out = np.take(tv, flat).reshape(idx.shape)
    else:
        cols = [np.take(tv[:, f], flat) for f in range(tv.shape[1])]
        out = np.stack(cols, axis=-1).reshape(idx.shape + (tv.shape[1],))
    if not (_grad_enabled and table.needs_grad):
        return Tensor(out)

    def back(g):
        if tv.ndim == 1:
            acc = np.bincount(
                flat, weights=g.reshape(-1).astype(np.float64), minlength=tv.shape[0]
            )
            table._accum(acc.astype(tv.dtype))
        else:
            gf = g.reshape(-1, tv.shape[1])
            acc = np.empty_like(tv)
            for f in range(tv.shape[1]):
                acc[:, f] = np.bincount(
                    flat, weights=gf[:, f].astype(np.float64), minlength=tv.shape[0]
                ).astype(tv.dtype)
            table._accum(acc)

    return Tensor(out, needs_grad=True, parents=(table,), vjp=back)


def stack(xs, axis=0):
    if not _is_tensor(*xs):
        return np.stack([np.asarray(x) for x in xs], axis=axis)
    ts = [x if isinstance(x, Tensor) else Tensor(x) for x in xs]
    out = np.stack([t.value for t in ts], axis=axis)

    def back(g):
        parts = np.split(g, len(ts), axis=axis)
        for t, p in zip(ts, parts):
            if t.needs_grad:
                t._accum(np.squeeze(p, axis=axis))

    return _make(out, tuple(ts), back)


# ------------------------------------------------------------------ backward


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into .grad of every reachable leaf.

    The graph is a DAG by construction (ops always create new nodes), so an
    iterative post-order walk suffices; no cycle can occur.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward() expects a Tensor")
    if not loss.needs_grad:
        return
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if p.needs_grad and id(p) not in seen:
                stack_.append((p, False))

    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node.vjp is not None and node.grad is not None:
            node.vjp(node.grad)
        if node.parents:
            # intermediate gradients are not needed once propagated
            node.grad = None


def numeric_gradient(fn, param: Tensor, eps: float = 1e-4):
    """Central finite differences of fn() with respect to every param entry.

    fn must evaluate the loss using param.value and return a float. Used as
    the independent oracle for gradient tests; O(param.size) evaluations.
    """
    base = param.value
    g = np.zeros_like(base, dtype=np.float64)
    flat = base.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        step = eps * max(1.0, abs(float(orig)))
        flat[i] = orig + step
        hi = fn()
        flat[i] = orig - step
        lo = fn()
        flat[i] = orig
        gf[i] = (hi - lo) / (2.0 * step)
    return g


def relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    """Max elementwise relative disagreement between two gradients."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
