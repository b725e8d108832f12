"""Neural building blocks in column layout: features on axis -2, tokens on axis -1."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor


@dataclass
class ParamGroup:
    """A named bundle of tensors that is either trained or frozen as a unit."""

    name: str
    tensors: dict = field(default_factory=dict)
    trainable: bool = True

    def __post_init__(self):
        self.set_trainable(self.trainable)

    def set_trainable(self, flag):
        self.trainable = bool(flag)
        for t in self.tensors.values():
            t.requires_grad = self.trainable
            if not self.trainable:
                t.grad = None

    def items(self):
        return self.tensors.items()

    def num_params(self):
        return int(sum(t.size for t in self.tensors.values()))


def linear(x, W, b=None):
    """Apply ``W @ x + b`` to every column of ``x`` (shape (..., in, T))."""
    return ag.linear(x, W, b)


def layer_norm(x, gamma, beta, eps=1e-5):
    return ag.layer_norm(x, gamma, beta, eps)


def self_attention(X, Wq, Wk, Wv, heads, causal=False, Wo=None, return_weights=False):
    """Multi-head scaled dot-product self-attention.

    X has shape (..., d, T).  Projections are (d, d) matrices applied column
    wise; heads split the feature axis into ``heads`` blocks of d // heads.
    ``Wo`` is an optional output projection applied after the heads are
    concatenated.
    """
    X = ag.as_tensor(X)
    d, T = X.shape[-2], X.shape[-1]
    if heads < 1 or d % heads:
        raise ValueError(f"d_model={d} is not divisible by heads={heads}")
    dh = d // heads
    lead = X.shape[:-2]

    def split(t):
        return t.reshape(lead + (heads, dh, T))

    q = split(linear(X, Wq))
    k = split(linear(X, Wk))
    v = split(linear(X, Wv))
    out, weights = ag.attention_core(q, k, v, causal=causal)
    out = out.reshape(lead + (d, T))
    if Wo is not None:
        out = linear(out, Wo)
    if return_weights:
        return out, weights
    return out


def positional_encoding(T, d):
    """Sinusoidal table of shape (d, T); even rows sine, odd rows cosine."""
    if T < 1 or d < 1:
        raise ValueError("positional_encoding needs T >= 1 and d >= 1")
    pos = np.arange(T, dtype=np.float64)[None, :]
    i2 = np.arange(0, d, 2, dtype=np.float64)[:, None]
    angle = pos / np.power(10000.0, i2 / d)
    pe = np.zeros((d, T))
    pe[0::2] = np.sin(angle)
    pe[1::2] = np.cos(angle[: d // 2])
    return pe


def init_linear(rng, n_out, n_in, bias=True, scale=None):
    """Glorot-uniform weights, zero bias."""
    lim = scale if scale is not None else np.sqrt(6.0 / (n_in + n_out))
    W = Tensor(rng.uniform(-lim, lim, size=(n_out, n_in)), requires_grad=True)
    b = Tensor(np.zeros(n_out), requires_grad=True) if bias else None
    return W, b
