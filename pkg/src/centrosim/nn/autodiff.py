"""Minimal reverse-mode automatic differentiation over numpy arrays.

Define-by-run: each op returns a Tensor holding the forward value, its parent
tensors, and a vector-Jacobian callback; backward() walks the tape. Ops are
dtype-generic (float32 nets, float64 where precision matters); explicit
reductions (sum, mean, logsumexp) accumulate in float64 and cast back.
"""

from __future__ import annotations

import numpy as np


class GraphError(ValueError):
    """Malformed graph construction (shape mismatch, non-scalar loss, ...)."""


class Tensor:
    __slots__ = ("values", "grad", "_parents", "_vjp")

    def __init__(self, values, _parents=(), _vjp=None):
        self.values = np.asarray(values)
        self.grad = None
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, dtype={self.values.dtype})"


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    return Tensor(arr)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(k for k, n in enumerate(shape) if n == 1 and g.shape[k] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary(a, b, fwd, vjp_a, vjp_b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = fwd(a.values, b.values)
    except ValueError as err:
        raise GraphError(f"incompatible shapes {a.shape} and {b.shape}") from err

    def vjp(g):
        return (_unbroadcast(vjp_a(g, a.values, b.values), a.shape),
                _unbroadcast(vjp_b(g, a.values, b.values), b.shape))

    return Tensor(out, (a, b), vjp)


def add(a, b):
    return _binary(a, b, np.add, lambda g, av, bv: g, lambda g, av, bv: g)


def sub(a, b):
    return _binary(a, b, np.subtract, lambda g, av, bv: g, lambda g, av, bv: -g)


def mul(a, b):
    return _binary(a, b, np.multiply,
                   lambda g, av, bv: g * bv, lambda g, av, bv: g * av)


def neg(a):
    a = as_tensor(a)
    return Tensor(-a.values, (a,), lambda g: (-g,))


def scale(a, c: float):
    a = as_tensor(a)
    return Tensor(a.values * c, (a,), lambda g: (g * c,))


def add_const(a, c):
    a = as_tensor(a)
    c = np.asarray(c)
    return Tensor(a.values + c, (a,), lambda g: (_unbroadcast(g, a.shape),))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise GraphError(f"matmul needs (m,k)@(k,n), got {a.shape} @ {b.shape}")
    out = a.values @ b.values

    def vjp(g):
        return (g @ b.values.T, a.values.T @ g)

    return Tensor(out, (a, b), vjp)


def relu(a):
    a = as_tensor(a)
    out = np.maximum(a.values, 0)
    return Tensor(out, (a,), lambda g: (g * (a.values > 0), ))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.values)
    return Tensor(out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.values)
    return Tensor(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    out = np.log(a.values)
    return Tensor(out, (a,), lambda g: (g / a.values,))


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.values.reshape(shape)
    except ValueError as err:
        raise GraphError(f"cannot reshape {a.shape} to {shape}") from err
    return Tensor(out, (a,), lambda g: (g.reshape(a.shape),))


def tsum(a, axis=None, keepdims=False):
    """Sum with float64 accumulation, cast back to the input dtype."""
    a = as_tensor(a)
    out = a.values.sum(axis=axis, keepdims=keepdims, dtype=np.float64)
    out = np.asarray(out).astype(a.dtype)

    def vjp(g):
        if axis is None:
            return (np.full(a.shape, g, dtype=g.dtype),)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(ge, a.shape).copy(),)

    return Tensor(out, (a,), vjp)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.values.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def logsumexp(a, axis):
    """log(sum(exp(a))) along one axis, keepdims=False, float64 accumulation."""
    a = as_tensor(a)
    m = np.max(a.values, axis=axis, keepdims=True)
    e = np.exp(a.values - m)
    s = e.sum(axis=axis, keepdims=True, dtype=np.float64).astype(a.dtype)
    out = np.squeeze(np.log(s) + m, axis=axis)

    def vjp(g):
        w = e / s
        return (np.expand_dims(g, axis) * w,)

    return Tensor(out, (a,), vjp)


def permute_cols(a, perm):
    a = as_tensor(a)
    perm = np.asarray(perm)
    if a.values.ndim != 2 or perm.shape != (a.shape[1],):
        raise GraphError("permute_cols needs a 2D tensor and a full column permutation")
    inv = np.argsort(perm)
    return Tensor(a.values[:, perm], (a,), lambda g: (g[:, inv],))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.values for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(out, tuple(tensors), vjp)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    n, h, w, c = x.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    s0, s1, s2, s3 = x.strides
    win = np.lib.stride_tricks.as_strided(
        x, (n, ho, wo, kh, kw, c),
        (s0, s1 * stride, s2 * stride, s1, s2, s3), writeable=False)
    return np.ascontiguousarray(win).reshape(n, ho, wo, kh * kw * c)


def conv2d(x, w, stride: int = 1):
    """Valid 2D convolution; x is (N, H, W, Cin), w is (kh, kw, Cin, Cout)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.values.ndim != 4 or w.values.ndim != 4 or x.shape[3] != w.shape[2]:
        raise GraphError(f"conv2d shapes {x.shape} and {w.shape} do not compose")
    kh, kw, cin, cout = w.shape
    if x.shape[1] < kh or x.shape[2] < kw:
        raise GraphError(f"input {x.shape} smaller than kernel ({kh},{kw})")
    cols = _im2col(x.values, kh, kw, stride)
    n, ho, wo, k = cols.shape
    out = (cols.reshape(-1, k) @ w.values.reshape(k, cout)).reshape(n, ho, wo, cout)

    def vjp(g):
        g2 = g.reshape(-1, cout)
        dw = (cols.reshape(-1, k).T @ g2).reshape(w.shape)
        dcols = (g2 @ w.values.reshape(k, cout).T).reshape(n, ho, wo, kh, kw, cin)
        dx = np.zeros(x.shape, dtype=g.dtype)
        for a in range(kh):
            for b in range(kw):
                dx[:, a:a + stride * ho:stride, b:b + stride * wo:stride, :] += dcols[:, :, :, a, b, :]
        return (dx, dw)

    return Tensor(out, (x, w), vjp)


def backward(loss: Tensor) -> None:
    """Reverse sweep; accumulates dloss/dnode into .grad over the whole tape."""
    if loss.values.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.values)
    for node in reversed(topo):
        if node._vjp is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            if g is None:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g


def zero_grads(params) -> None:
    for p in params:
        p.grad = None
