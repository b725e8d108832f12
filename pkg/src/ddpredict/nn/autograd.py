"""Tape-free reverse-mode differentiation over float64 numpy arrays.

Every ``Tensor`` produced by an op remembers its parents and a closure that
pushes the incoming gradient back to them.  ``backward`` walks the graph in
reverse topological order.  Ops are deliberately coarse (a whole linear
layer, a whole attention core, a whole layer norm) so the Python overhead
per training step stays small.
"""
from __future__ import annotations

import math

import numpy as np

DTYPE = np.float64


class GraphError(RuntimeError):
    """Raised when backward is requested on something with no forward record."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def numpy(self):
        return self.data

    # arithmetic sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    parents = tuple(parents)
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    if loss._backward is None:
        raise GraphError("loss has no recorded forward computation to differentiate")

    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            _accum(node, g)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# elementwise -----------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul needs operands of rank >= 2")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), bw)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0

    def bw(g):
        return (g * mask,)

    return _make(np.where(mask, x.data, 0.0), (x,), bw)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x):
    """Tanh-approximated GELU as used by GPT-style MLPs."""
    x = as_tensor(x)
    xd = x.data
    x2 = xd * xd
    th = np.tanh(_GELU_C * xd * (1.0 + 0.044715 * x2))
    out = 0.5 * xd * (1.0 + th)

    def bw(g):
        # float ** is a slow generic pow in numpy; stick to products
        dinner = _GELU_C * (1.0 + 0.134145 * x2)
        d = 0.5 * (1.0 + th) + 0.5 * xd * (1.0 - th * th) * dinner
        return (g * d,)

    return _make(out, (x,), bw)


# shape -----------------------------------------------------------------

def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape

    def bw(g):
        return (g.reshape(old),)

    return _make(x.data.reshape(shape), (x,), bw)


def swapaxes(x, a, b):
    x = as_tensor(x)

    def bw(g):
        return (np.swapaxes(g, a, b),)

    return _make(np.swapaxes(x.data, a, b), (x,), bw)


def tsum(x, axis=None):
    x = as_tensor(x)
    shape = x.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape),)

    return _make(x.data.sum(axis=axis), (x,), bw)


def tmean(x, axis=None):
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis), 1.0 / float(n))


# fused layers ----------------------------------------------------------

def linear(x, W, b=None):
    """Column-wise affine map ``W @ x + b`` for x of shape (..., in, T)."""
    x, W = as_tensor(x), as_tensor(W)
    if W.data.ndim != 2 or x.data.ndim < 2 or x.shape[-2] != W.shape[1]:
        raise ValueError(f"linear: cannot apply W{W.shape} to x{x.shape}")
    if b is not None:
        b = as_tensor(b)
        if b.shape != (W.shape[0],):
            raise ValueError(f"linear: bias shape {b.shape} does not match W{W.shape}")
    xd = x.data
    lead = xd.shape[:-2]
    T = xd.shape[-1]
    # (..., in, T) -> (N, in) rows so a single GEMM covers the batch
    rows = np.swapaxes(xd, -1, -2).reshape(-1, W.shape[1])
    out_rows = rows @ W.data.T
    if b is not None:
        out_rows += b.data
    out = np.swapaxes(out_rows.reshape(lead + (T, W.shape[0])), -1, -2)

    def bw(g):
        g_rows = np.swapaxes(g, -1, -2).reshape(-1, W.shape[0])
        gx = np.swapaxes((g_rows @ W.data).reshape(lead + (T, W.shape[1])), -1, -2)
        gW = g_rows.T @ rows
        gb = g_rows.sum(axis=0) if b is not None else None
        return gx, gW, gb

    parents = (x, W) if b is None else (x, W, b)
    return _make(np.ascontiguousarray(out), parents, (lambda g: bw(g)[:2]) if b is None else bw)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalise each column of x (..., d, T) over its d features."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-2]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ValueError(f"layer_norm: gamma/beta must have shape ({d},)")
    mu = x.data.mean(axis=-2, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gcol = gamma.data[:, None]
    out = xhat * gcol + beta.data[:, None]

    def bw(g):
        red = tuple(range(g.ndim - 2)) + (g.ndim - 1,)
        ggamma = (g * xhat).sum(axis=red)
        gbeta = g.sum(axis=red)
        gx_hat = g * gcol
        gx = inv * (gx_hat - gx_hat.mean(axis=-2, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-2, keepdims=True))
        return gx, ggamma, gbeta

    return _make(out, (x, gamma, beta), bw)


def softmax(scores, axis=-1, mask=None):
    """Numerically safe softmax; ``mask`` marks entries to exclude (True = drop)."""
    s = np.where(mask, -np.inf, scores) if mask is not None else scores
    s = s - s.max(axis=axis, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=axis, keepdims=True)


def attention_core(q, k, v, causal=False):
    """Scaled dot-product attention for q, k, v of shape (..., d_h, T).

    Returns the attended values (..., d_h, T) and, as a plain array, the
    attention weights (..., T_query, T_key).
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    dh, T = q.shape[-2], q.shape[-1]
    scale = 1.0 / math.sqrt(dh)
    qt = np.swapaxes(q.data, -1, -2)                 # (..., T, dh)
    scores = (qt @ k.data) * scale                   # (..., T, T)
    mask = np.triu(np.ones((T, T), dtype=bool), 1) if causal else None
    A = softmax(scores, axis=-1, mask=mask)
    out = v.data @ np.swapaxes(A, -1, -2)            # (..., dh, T)

    def bw(g):
        gv = g @ A                                   # (..., dh, T)
        gA = np.swapaxes(g, -1, -2) @ v.data         # (..., T, T)
        gs = A * (gA - (gA * A).sum(axis=-1, keepdims=True)) * scale
        gq = np.swapaxes(gs @ np.swapaxes(k.data, -1, -2), -1, -2)
        gk = qt.swapaxes(-1, -2) @ gs
        return gq, gk, gv

    return _make(out, (q, k, v), bw), A


def mse_loss(pred, target):
    pred = as_tensor(pred)
    t = np.asarray(target, dtype=DTYPE)
    if pred.shape != t.shape:
        raise ValueError(f"mse_loss: shape mismatch {pred.shape} vs {t.shape}")
    diff = pred.data - t
    n = diff.size

    def bw(g):
        return (g * (2.0 / n) * diff,)

    return _make(np.array((diff * diff).sum() / n), (pred,), bw)
