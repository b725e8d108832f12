"""Comparison predictors sharing the estimator interface of the main model.

* ablation: the transformer with the descriptor branch removed
* tmlp: temporal mixer O = W_out ReLU(W x) applied to each feature row
* linear_ar: per-feature least-squares AR(p) rolled forward recursively
* persistence: repeat the last observed frame
"""
from __future__ import annotations

import enum
import logging
from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import chansim
from ._validation import as_frames, check_windows, check_xy
from .errors import ConfigError
from .model import ChannelPredictorMixin, GradientTrainedMixin, PhysicsAwarePredictor, Predictor, reconstruct_complex
from .nn import autograd as ag
from .nn.layers import ParamGroup, init_linear

log = logging.getLogger(__name__)

RIDGE = 1e-8


class BaselineKind(str, enum.Enum):
    ABLATION = "ablation"
    TMLP = "tmlp"
    LINEAR_AR = "linear_ar"
    PERSISTENCE = "persistence"


def ablation_predictor(cfg, seed=0):
    """The predictor network with the physics branch switched off."""
    return Predictor(replace(cfg, physics_enabled=False), seed=seed)


def _check_shapes(self, X, y):
    L2 = 2 * self.channel_len
    X, y = check_xy(X, y, n_y_rows=L2)
    if X.shape[1] < L2:
        raise ValueError(f"X needs at least 2L={L2} rows")
    return X, y, X.shape[1] - L2


# TMLP ---------------------------------------------------------------------

def tmlp_forward(X, W, W_out):
    """Temporal mixing of each row of X: ReLU(X W^T) W_out^T.

    X is (..., F, N_P), W is (m, N_P), W_out is (N_F, m); returns (..., F, N_F).
    Accepts arrays or Tensors; returns the same kind.
    """
    tensor_in = any(isinstance(a, ag.Tensor) for a in (X, W, W_out))
    Xt, Wt, Wot = ag.as_tensor(X), ag.as_tensor(W), ag.as_tensor(W_out)
    if Wt.data.ndim != 2 or Wot.data.ndim != 2 or Xt.data.ndim < 2:
        raise ValueError("tmlp_forward expects X (..., F, N_P), W (m, N_P), W_out (N_F, m)")
    if Xt.shape[-1] != Wt.shape[1] or Wot.shape[1] != Wt.shape[0]:
        raise ValueError(f"tmlp_forward: X{Xt.shape}, W{Wt.shape}, W_out{Wot.shape} do not conform")
    hidden = ag.relu(ag.matmul(Xt, ag.swapaxes(Wt, 0, 1)))
    out = ag.matmul(hidden, ag.swapaxes(Wot, 0, 1))
    return out if tensor_in else out.data


class TMLPPredictor(GradientTrainedMixin, ChannelPredictorMixin, BaseEstimator):
    """Bias-free temporal MLP over the history rows; ignores descriptors.

    ``hidden=None`` uses 4 * N_P mixing units.
    """

    def __init__(self, channel_len=10, hidden=None, epochs=100, batch_size=64, lr=1e-3,
                 lr_schedule="cosine", optimizer="adam", early_stop_patience=20,
                 augment=None, random_state=0, warm_start=False, verbose=0):
        self.channel_len = channel_len
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_schedule = lr_schedule
        self.optimizer = optimizer
        self.early_stop_patience = early_stop_patience
        self.augment = augment
        self.random_state = random_state
        self.warm_start = warm_start
        self.verbose = verbose

    def _setup(self, X, y):
        X, y, k_d = _check_shapes(self, X, y)
        n_p, n_f = X.shape[2], y.shape[2]
        if self.warm_start and hasattr(self, "params_"):
            if (self.n_p_, self.n_f_, self.k_d_) != (n_p, n_f, k_d):
                raise ValueError("warm_start with different window shapes")
            return X, y
        m = self.hidden if self.hidden is not None else 4 * n_p
        if m < 1:
            raise ConfigError("hidden must be >= 1")
        rng = chansim.stream(self.random_state, 0)
        W, _ = init_linear(rng, m, n_p, bias=False)
        W_out, _ = init_linear(rng, n_f, m, bias=False)
        self.params_ = ParamGroup("tmlp", {"W": W, "W_out": W_out})
        self.n_p_, self.n_f_, self.k_d_ = n_p, n_f, k_d
        return X, y

    def _forward(self, Xb):
        t = self.params_.tensors
        return tmlp_forward(ag.Tensor(Xb[:, :2 * self.channel_len]), t["W"], t["W_out"])

    def _groups(self):
        return [self.params_]

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_windows(X, n_rows=2 * self.channel_len + self.k_d_, n_cols=self.n_p_)
        t = self.params_.tensors
        return tmlp_forward(X[:, :2 * self.channel_len], t["W"].data, t["W_out"].data)


# linear AR ------------------------------------------------------------------

def ar_fit(series, order, ridge=RIDGE):
    """Least-squares AR(order) without intercept for one or more real series.

    ``series`` is (n_series, T); all series share one coefficient vector.
    Returns (coeffs (order,), used_ridge).  coeffs[i] multiplies lag i+1.
    """
    S = np.atleast_2d(np.asarray(series, dtype=np.float64))
    T = S.shape[1]
    if not 1 <= order < T:
        raise ConfigError(f"AR order {order} needs 1 <= order < series length {T}")
    # lag matrix: row (series, t) = [x[t-1], ..., x[t-order]]
    A = np.stack([S[:, order - i - 1:T - i - 1] for i in range(order)], axis=-1).reshape(-1, order)
    b = S[:, order:].reshape(-1)
    G = A.T @ A
    rhs = A.T @ b
    used_ridge = np.linalg.matrix_rank(G) < order
    if used_ridge:
        G = G + ridge * np.eye(order)
    return np.linalg.solve(G, rhs), bool(used_ridge)


def ar_rollout(history, coeffs, steps):
    """Recursive AR prediction. history (..., T) -> (..., steps)."""
    buf = list(np.moveaxis(np.asarray(history, dtype=np.float64), -1, 0))
    p = len(coeffs)
    out = []
    for _ in range(steps):
        nxt = sum(coeffs[i] * buf[-1 - i] for i in range(p))
        out.append(nxt)
        buf.append(nxt)
    return np.stack(out, axis=-1)


class LinearARPredictor(ChannelPredictorMixin, BaseEstimator):
    """Per-feature AR(p) fit on the concatenated history+target series.

    Features whose normal equations are rank deficient (for instance inactive
    taps, which are identically zero) are solved with a small ridge term and
    listed in ``ridge_features_``.
    """

    def __init__(self, channel_len=10, order=4, ridge=RIDGE):
        self.channel_len = channel_len
        self.order = order
        self.ridge = ridge

    def fit(self, X, y, eval_set=None, scoring=None):
        X, y, k_d = _check_shapes(self, X, y)
        L2 = 2 * self.channel_len
        if not 1 <= self.order < X.shape[2]:
            raise ConfigError(f"AR order {self.order} must satisfy 1 <= p < N_P={X.shape[2]}")
        full = np.concatenate([X[:, :L2], y], axis=2)         # (n, 2L, N_P + N_F)
        coefs, ridged = [], []
        for f in range(L2):
            c, r = ar_fit(full[:, f], self.order, self.ridge)
            coefs.append(c)
            if r:
                ridged.append(f)
        self.coef_ = np.array(coefs)                           # (2L, p)
        self.ridge_features_ = ridged
        if ridged:
            log.info("linear AR: ridge fallback (lambda=%g) on features %s", self.ridge, ridged)
        self.n_p_, self.n_f_, self.k_d_ = X.shape[2], y.shape[2], k_d
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_windows(X, n_rows=2 * self.channel_len + self.k_d_, n_cols=self.n_p_)
        H = X[:, :2 * self.channel_len]
        out = np.empty((X.shape[0], H.shape[1], self.n_f_))
        for f in range(H.shape[1]):
            out[:, f] = ar_rollout(H[:, f], self.coef_[f], self.n_f_)
        return out


# persistence -----------------------------------------------------------------

def persistence_predict(history, n_f, channel_len=None):
    """Repeat the last complex frame of ``history`` (frames, L) n_f times -> (L, n_f)."""
    H = np.asarray(getattr(history, "frames", history))
    if H.ndim != 2 or H.shape[0] < 1:
        raise ValueError("history must be a non-empty (frames, L) array")
    if channel_len is not None:
        H = as_frames(H, channel_len, "history")
    if n_f < 1:
        raise ValueError("n_f must be >= 1")
    return np.repeat(H[-1][:, None], n_f, axis=1)


class PersistencePredictor(ChannelPredictorMixin, BaseEstimator):
    """Sanity floor: every future frame equals the last observed one."""

    def __init__(self, channel_len=10, n_f=None):
        self.channel_len = channel_len
        self.n_f = n_f

    def fit(self, X, y=None, eval_set=None, scoring=None):
        X = check_windows(X)
        L2 = 2 * self.channel_len
        if X.shape[1] < L2:
            raise ValueError(f"X needs at least 2L={L2} rows")
        n_f = self.n_f
        if n_f is None:
            if y is None:
                raise ValueError("need y or n_f to know the horizon")
            n_f = np.shape(y)[2]
        self.n_p_, self.n_f_, self.k_d_ = X.shape[2], int(n_f), X.shape[1] - L2
        return self

    def predict(self, X):
        check_is_fitted(self, "n_f_")
        X = check_windows(X, n_rows=2 * self.channel_len + self.k_d_)
        last = X[:, :2 * self.channel_len, -1:]
        return np.repeat(last, self.n_f_, axis=2)

    def predict_channel(self, history, track=None, stats=None):
        check_is_fitted(self, "n_f_")
        return persistence_predict(history, self.n_f_, self.channel_len)

    def predict_samples(self, samples, stats=None):
        # skip the normalise/denormalise round trip so the result is exact
        check_is_fitted(self, "n_f_")
        truth = np.stack([s.target for s in samples])
        last = np.stack([s.history[:, -1:] for s in samples])
        return reconstruct_complex(truth), reconstruct_complex(np.repeat(last, self.n_f_, axis=2))


# registry --------------------------------------------------------------------

METHODS = ("physics", "ablation", "tmlp", "linear_ar", "persistence")
_CLASSES = {
    "physics": PhysicsAwarePredictor,
    "ablation": PhysicsAwarePredictor,
    "tmlp": TMLPPredictor,
    "linear_ar": LinearARPredictor,
    "persistence": PersistencePredictor,
}


def make_method(tag, **params):
    """Unfitted estimator for ``tag``; parameters the estimator lacks are dropped."""
    tag = getattr(tag, "value", tag)
    if tag not in _CLASSES:
        raise ConfigError(f"unknown method {tag!r}; choose from {METHODS}")
    cls = _CLASSES[tag]
    accepted = cls._get_param_names()
    est = cls(**{k: v for k, v in params.items() if k in accepted})
    if tag == "ablation":
        est.set_params(physics_enabled=False)
    elif tag == "physics":
        est.set_params(physics_enabled=True)
    return est
