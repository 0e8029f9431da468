"""Reverse-mode automatic differentiation over dense float64 arrays.

Every network in this package is trained through this module. A ``Tensor``
wraps an ``np.float64`` array together with an op tag and references to its
parent tensors; calling an op appends a node to the implicit DAG, and
``backward()`` on a scalar loss walks the DAG in reverse topological order,
accumulating ``grad`` arrays (shape-matched to ``data``) on every ancestor.

Evaluation order is the construction order: no fusion, no reordering, so a
fixed seed gives bit-identical values and grads on a single thread.

The public op set lives in the ``OPS`` registry so tests can enumerate it
for finite-difference checks.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

__all__ = [
    "Tensor",
    "as_tensor",
    "parameter",
    "constant",
    "add", "sub", "mul", "div", "matmul", "broadcast_to", "concat",
    "reshape", "transpose", "sum_", "mean_", "max_", "relu", "softplus",
    "sigmoid", "exp", "log", "sin", "cos", "sqrt", "absolute", "clip_min",
    "softmax", "layer_norm", "cumsum", "gather_rows", "scatter_add",
    "OPS",
]


class Tensor:
    """A node in the computation DAG: float64 values plus grad bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, op="leaf", parents=(), name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self.op = op
        self.parents = parents
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"<Tensor op={self.op}{tag} shape={self.shape} grad={self.grad is not None}>"

    # -- graph traversal ---------------------------------------------------

    def _toposort(self):
        # Iterative DFS; graphs can exceed the recursion limit.
        order, visited, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in visited:
                    stack.append((p, False))
        return order

    def backward(self):
        """Populate ``grad`` on every ancestor with d(self)/d(ancestor).

        ``self`` must hold a single scalar. Grads accumulate, so zero them
        (``grad = None``) between training steps.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {self.shape}")
        order = self._toposort()
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __neg__(self):
        return mul(self, as_tensor(-1.0))

    def __getitem__(self, key):
        return _getitem(self, key)

    def item(self):
        return float(self.data.reshape(-1)[0])

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x):
    """Wrap a scalar/array as a constant leaf; pass tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def constant(x, name=None):
    return Tensor(x, requires_grad=False, name=name)


def parameter(x, name=None):
    """A trainable leaf node."""
    return Tensor(x, requires_grad=True, name=name)


# -- internals ---------------------------------------------------------------


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back down to ``shape`` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _binary_shapes_ok(a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
        return True
    except ValueError:
        return False


def _check_binary(opname, a, b):
    if not _binary_shapes_ok(a, b):
        raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} do not broadcast")


def _node(op, data, parents, backward):
    out = Tensor(data, op=op, parents=parents)
    if out.requires_grad:
        out._backward = backward
    return out


# -- elementwise binary ops ---------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("add", a, b)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    return _node("add", a.data + b.data, (a, b), bwd)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("sub", a, b)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.shape))

    return _node("sub", a.data - b.data, (a, b), bwd)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("mul", a, b)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return _node("mul", a.data * b.data, (a, b), bwd)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("div", a, b)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _node("div", a.data / b.data, (a, b), bwd)


def matmul(a, b):
    """Matrix product; supports stacked (batched) operands of ndim >= 2."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must have ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} vs {b.shape}")

    def bwd(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a.accumulate_grad(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b.accumulate_grad(_unbroadcast(gb, b.shape))

    return _node("matmul", a.data @ b.data, (a, b), bwd)


# -- shape ops ----------------------------------------------------------------


def broadcast_to(a, shape):
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        data = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast: cannot broadcast {a.shape} to {shape}") from None

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))

    return _node("broadcast", np.ascontiguousarray(data), (a,), bwd)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty input list")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat: incompatible shapes {[t.shape for t in tensors]} along axis {axis}"
        ) from None
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate_grad(g[tuple(idx)])

    return _node("concat", data, tuple(tensors), bwd)


def reshape(a, shape):
    a = as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.shape))

    return _node("reshape", data, (a,), bwd)


def transpose(a, axes):
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(np.transpose(g, inv))

    return _node("transpose", np.transpose(a.data, axes), (a,), bwd)


def _getitem(a, key):
    a = as_tensor(a)
    data = a.data[key]

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, key, g)
            a.accumulate_grad(full)

    return _node("slice", data, (a,), bwd)


# -- reductions ----------------------------------------------------------------


def _restore_axes(g, axis, shape, keepdims):
    if keepdims or axis is None:
        return g
    if isinstance(axis, int):
        axis = (axis,)
    for ax in sorted(a % len(shape) for a in axis):
        g = np.expand_dims(g, ax)
    return g


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if a.requires_grad:
            g2 = _restore_axes(np.asarray(g), axis, a.shape, keepdims)
            a.accumulate_grad(np.broadcast_to(g2, a.shape).copy())

    return _node("sum", data, (a,), bwd)


def mean_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size / max(data.size, 1)

    def bwd(g):
        if a.requires_grad:
            g2 = _restore_axes(np.asarray(g), axis, a.shape, keepdims)
            a.accumulate_grad(np.broadcast_to(g2 / n, a.shape).copy())

    return _node("mean", data, (a,), bwd)


def max_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.max(axis=axis, keepdims=keepdims)

    def bwd(g):
        if a.requires_grad:
            expanded = _restore_axes(np.asarray(data), axis, a.shape, keepdims)
            mask = (a.data == expanded).astype(np.float64)
            counts = mask.sum(axis=axis, keepdims=True)
            g2 = _restore_axes(np.asarray(g), axis, a.shape, keepdims)
            a.accumulate_grad(mask / counts * g2)

    return _node("max", data, (a,), bwd)


# -- elementwise unary ops ------------------------------------------------------


def relu(a):
    a = as_tensor(a)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * (a.data > 0))

    return _node("relu", np.maximum(a.data, 0.0), (a,), bwd)


def softplus(a, beta=1.0):
    """log(1 + exp(beta*x)) / beta, computed without overflow."""
    a = as_tensor(a)
    z = beta * a.data
    data = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(z))) / beta

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * _sigmoid_np(z))

    return _node("softplus", data, (a,), bwd)


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    a = as_tensor(a)
    y = _sigmoid_np(a.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * y * (1.0 - y))

    return _node("sigmoid", y, (a,), bwd)


def exp(a):
    a = as_tensor(a)
    y = np.exp(a.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * y)

    return _node("exp", y, (a,), bwd)


def log(a):
    a = as_tensor(a)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g / a.data)

    return _node("log", np.log(a.data), (a,), bwd)


def sin(a):
    a = as_tensor(a)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * np.cos(a.data))

    return _node("sin", np.sin(a.data), (a,), bwd)


def cos(a):
    a = as_tensor(a)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(-g * np.sin(a.data))

    return _node("cos", np.cos(a.data), (a,), bwd)


def sqrt(a):
    a = as_tensor(a)
    y = np.sqrt(a.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * 0.5 / y)

    return _node("sqrt", y, (a,), bwd)


def absolute(a):
    a = as_tensor(a)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * np.sign(a.data))

    return _node("abs", np.abs(a.data), (a,), bwd)


def clip_min(a, floor):
    """max(x, floor); gradient passes only where x > floor."""
    a = as_tensor(a)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * (a.data > floor))

    return _node("clip_min", np.maximum(a.data, floor), (a,), bwd)


# -- normalizations --------------------------------------------------------------


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        if a.requires_grad:
            dot = (g * y).sum(axis=axis, keepdims=True)
            a.accumulate_grad(y * (g - dot))

    return _node("softmax", y, (a,), bwd)


def layer_norm(a, axis=-1, eps=1e-6):
    """Zero-mean unit-variance normalization along one axis (no affine)."""
    a = as_tensor(a)
    mu = a.data.mean(axis=axis, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def bwd(g):
        if a.requires_grad:
            gm = g.mean(axis=axis, keepdims=True)
            gy = (g * y).mean(axis=axis, keepdims=True)
            a.accumulate_grad(inv * (g - gm - y * gy))

    return _node("layer-norm", y, (a,), bwd)


# -- scans and indexed ops ---------------------------------------------------------


def cumsum(a, axis=-1, exclusive=False):
    """Cumulative sum; ``exclusive`` shifts the scan right by one (first = 0)."""
    a = as_tensor(a)
    c = np.cumsum(a.data, axis=axis)
    if exclusive:
        c = np.roll(c, 1, axis=axis)
        idx = [slice(None)] * c.ndim
        idx[axis] = 0
        c[tuple(idx)] = 0.0

    def bwd(g):
        if a.requires_grad:
            rev = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
            if exclusive:
                rev = rev - g
            a.accumulate_grad(rev)

    return _node("cumsum", c, (a,), bwd)


def gather_rows(a, idx):
    """Select rows ``a[idx]`` along axis 0; backward scatter-adds."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a.accumulate_grad(full)

    return _node("gather", a.data[idx], (a,), bwd)


def scatter_add(a, idx, n_rows):
    """Sum rows of ``a`` into an ``(n_rows, ...)`` output at positions ``idx``."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.shape[0] != a.shape[0]:
        raise ShapeError(f"scatter_add: index length {idx.shape[0]} != rows {a.shape[0]}")
    out = np.zeros((n_rows,) + a.shape[1:], dtype=np.float64)
    np.add.at(out, idx, a.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g[idx])

    return _node("scatter_add", out, (a,), bwd)


# Registry used by the gradient-check suite to enumerate the op set.
OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "matmul": matmul,
    "broadcast": broadcast_to,
    "concat": concat,
    "slice": _getitem,
    "reshape": reshape,
    "transpose": transpose,
    "sum": sum_,
    "mean": mean_,
    "max": max_,
    "relu": relu,
    "softplus": softplus,
    "sigmoid": sigmoid,
    "exp": exp,
    "log": log,
    "sin": sin,
    "cos": cos,
    "sqrt": sqrt,
    "abs": absolute,
    "clip_min": clip_min,
    "softmax": softmax,
    "layer-norm": layer_norm,
    "cumsum": cumsum,
    "gather": gather_rows,
    "scatter_add": scatter_add,
}
