"""Physics-aware transformer channel predictor.

The network embeds the stacked real/imaginary history X_H (2L x N_P) and the
descriptor track X_D (K_d x N_P) with two fully connected maps, sums them,
adds a sinusoidal positional table, runs a stack of causal pre-norm
transformer blocks and reads the whole token matrix out through one linear
head into the (2L x N_F) future representation.

``PhysicsAwarePredictor`` wraps the network in the scikit-learn estimator
protocol; ``pretrain_then_finetune`` implements the two-phase schedule where
the attention/MLP weights are frozen while layer norms, embeddings and the
head adapt to a target scenario.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_is_fitted

from . import chansim
from ._validation import as_frames, check_windows, check_xy
from .dataset import complex_to_real
from .errors import ConfigError, TrainingDivergedError
from .metrics import dataset_nmse
from .nn import autograd as ag
from .nn import checkpoint
from .nn.layers import ParamGroup, init_linear, layer_norm, linear, positional_encoding, self_attention
from .nn.optim import lr_at, make_optimizer

log = logging.getLogger(__name__)

# init stream ids; kept fixed so that toggling the physics branch leaves the
# initial values of every other group untouched
_INIT_EMBED_H = 0
_INIT_EMBED_D = 1
_INIT_HEAD = 2
_INIT_BLOCK = 100
_SHUFFLE = 7
_AUGMENT = 8


@dataclass(frozen=True)
class PredictorConfig:
    l: int = 10
    n_p: int = 16
    n_f: int = 4
    k_d: int = 1
    d_model: int = 64
    depth: int = 2
    heads: int = 4
    mlp_ratio: float = 4.0
    physics_enabled: bool = True
    freeze_core: bool = False
    final_norm: bool = False

    def __post_init__(self):
        if self.heads < 1 or self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} must be divisible by heads={self.heads}")
        if min(self.l, self.n_p, self.n_f, self.depth) < 1:
            raise ConfigError("l, n_p, n_f and depth must be >= 1")
        if self.physics_enabled and self.k_d < 1:
            raise ConfigError("physics conditioning needs k_d >= 1")
        if self.mlp_ratio <= 0:
            raise ConfigError("mlp_ratio must be positive")

    @property
    def hidden(self):
        return max(1, int(round(self.mlp_ratio * self.d_model)))


class Predictor:
    """Parameters and forward pass of the predictor network."""

    def __init__(self, cfg, seed=0):
        self.cfg = cfg
        d, L2 = cfg.d_model, 2 * cfg.l
        self.pos = positional_encoding(cfg.n_p, d)
        self.mask_causal = True

        rng = chansim.stream(seed, _INIT_EMBED_H)
        Wh, bh = init_linear(rng, d, L2)
        groups = [ParamGroup("embed_h", {"W": Wh, "b": bh})]
        if cfg.physics_enabled:
            # no bias: any constant offset is already carried by embed_h.b
            Wd, _ = init_linear(chansim.stream(seed, _INIT_EMBED_D), d, cfg.k_d, bias=False)
            groups.append(ParamGroup("embed_d", {"W": Wd}))

        rescale = 1.0 / math.sqrt(2.0 * cfg.depth)
        for i in range(cfg.depth):
            rng = chansim.stream(seed, _INIT_BLOCK + i)
            ln = {
                "ln1_g": ag.Tensor(np.ones(d), True), "ln1_b": ag.Tensor(np.zeros(d), True),
                "ln2_g": ag.Tensor(np.ones(d), True), "ln2_b": ag.Tensor(np.zeros(d), True),
            }
            attn = {k: init_linear(rng, d, d, bias=False)[0] for k in ("Wq", "Wk", "Wv", "Wo")}
            attn["Wo"].data *= rescale
            W1, b1 = init_linear(rng, cfg.hidden, d)
            W2, b2 = init_linear(rng, d, cfg.hidden)
            W2.data *= rescale
            groups += [
                ParamGroup(f"block{i}.ln", ln),
                ParamGroup(f"block{i}.attn", attn),
                ParamGroup(f"block{i}.mlp", {"W1": W1, "b1": b1, "W2": W2, "b2": b2}),
            ]
        if cfg.final_norm:
            groups.append(ParamGroup("ln_f", {"g": ag.Tensor(np.ones(d), True), "b": ag.Tensor(np.zeros(d), True)}))
        Wo, bo = init_linear(chansim.stream(seed, _INIT_HEAD), L2 * cfg.n_f, d * cfg.n_p)
        groups.append(ParamGroup("head", {"W": Wo, "b": bo}))
        self.groups = groups
        self._by_name = {g.name: g for g in groups}
        self.set_freeze(cfg.freeze_core)

    # parameter bookkeeping ----------------------------------------------
    def group(self, name):
        return self._by_name[name]

    @property
    def core_groups(self):
        return [g for g in self.groups if g.name.endswith((".attn", ".mlp"))]

    def set_freeze(self, frozen):
        for g in self.core_groups:
            g.set_trainable(not frozen)

    def num_params(self, trainable_only=False):
        return sum(g.num_params() for g in self.groups if g.trainable or not trainable_only)

    def snapshot(self):
        return {g.name: {k: t.data.copy() for k, t in g.items()} for g in self.groups}

    def restore(self, snap):
        for g in self.groups:
            for k, t in g.items():
                t.data = snap[g.name][k].copy()

    def digest(self, groups=None):
        """SHA-256 over the raw bytes of the selected groups (all by default)."""
        h = hashlib.sha256()
        for g in groups if groups is not None else self.groups:
            for k, t in g.items():
                h.update(f"{g.name}.{k}".encode())
                h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    def to_bytes(self, extra=None):
        return checkpoint.dump_archive(self.groups, config=asdict(self.cfg), extra=extra)

    @classmethod
    def from_bytes(cls, buf):
        header, arrays = checkpoint.parse_archive(buf)
        net = cls(PredictorConfig(**header["config"]))
        checkpoint.load_into(net.groups, header, arrays)
        return net, header.get("extra", {})

    # forward --------------------------------------------------------------
    def _batched(self, X_H, X_D):
        X_H = np.asarray(X_H, dtype=np.float64)
        single = X_H.ndim == 2
        if single:
            X_H = X_H[None]
            X_D = None if X_D is None else np.asarray(X_D, dtype=np.float64)[None]
        cfg = self.cfg
        if X_H.shape[1:] != (2 * cfg.l, cfg.n_p):
            raise ValueError(f"X_H must be (2L={2 * cfg.l}, N_P={cfg.n_p}), got {X_H.shape[1:]}")
        if cfg.physics_enabled:
            if X_D is None or np.shape(X_D)[1:] != (cfg.k_d, cfg.n_p):
                raise ValueError(f"X_D must be (K_d={cfg.k_d}, N_P={cfg.n_p})")
        if not np.all(np.isfinite(X_H)) or (X_D is not None and not np.all(np.isfinite(X_D))):
            raise ValueError("inputs contain NaN or Inf")
        return X_H, X_D, single

    def embed(self, X_H, X_D=None):
        """E_in = FC_H(X_H) [+ FC_D(X_D)] + positional table, shape (..., d, N_P)."""
        X_H, X_D, single = self._batched(X_H, X_D)
        out = self._embed(X_H, X_D)
        return out.reshape(out.shape[1:]) if single else out

    def _embed(self, X_H, X_D):
        g = self._by_name["embed_h"]
        E = linear(X_H, g.tensors["W"], g.tensors["b"])
        if self.cfg.physics_enabled:
            E = E + linear(X_D, self._by_name["embed_d"].tensors["W"])
        return E + self.pos

    def backbone(self, E):
        cfg = self.cfg
        x = E
        for i in range(cfg.depth):
            ln = self._by_name[f"block{i}.ln"].tensors
            at = self._by_name[f"block{i}.attn"].tensors
            mp = self._by_name[f"block{i}.mlp"].tensors
            a = self_attention(layer_norm(x, ln["ln1_g"], ln["ln1_b"]), at["Wq"], at["Wk"], at["Wv"],
                               cfg.heads, causal=self.mask_causal, Wo=at["Wo"])
            x = x + a
            hdn = ag.gelu(linear(layer_norm(x, ln["ln2_g"], ln["ln2_b"]), mp["W1"], mp["b1"]))
            x = x + linear(hdn, mp["W2"], mp["b2"])
        if cfg.final_norm:
            f = self._by_name["ln_f"].tensors
            x = layer_norm(x, f["g"], f["b"])
        return x

    def head(self, Z):
        cfg = self.cfg
        B = Z.shape[0]
        flat = Z.reshape(B, cfg.d_model * cfg.n_p, 1)
        h = self._by_name["head"].tensors
        out = linear(flat, h["W"], h["b"])
        return out.reshape(B, 2 * cfg.l, cfg.n_f)

    def forward(self, X_H, X_D=None):
        """Predicted future representation X_hat (..., 2L, N_F) as a Tensor."""
        X_H, X_D, single = self._batched(X_H, X_D)
        out = self.head(self.backbone(self._embed(X_H, X_D)))
        return out.reshape(out.shape[1:]) if single else out

    def predict_array(self, X_H, X_D=None, batch_size=512):
        X_H = np.asarray(X_H, dtype=np.float64)
        outs = []
        for s in range(0, X_H.shape[0], batch_size):
            xd = None if X_D is None else X_D[s:s + batch_size]
            outs.append(self.forward(X_H[s:s + batch_size], xd).data)
        return np.concatenate(outs, axis=0)


def reconstruct_complex(X_hat, stats=None):
    """De-normalise (2L, N_F) predictions and fold them into complex (L, N_F)."""
    X_hat = np.asarray(X_hat, dtype=np.float64)
    if X_hat.shape[-2] % 2:
        raise ValueError("prediction needs an even number of rows")
    if stats is not None:
        if stats.mean.size != X_hat.shape[-2]:
            raise ValueError(f"stats cover {stats.mean.size} features, prediction has {X_hat.shape[-2]}")
        X_hat = X_hat * stats.std[:, None] + stats.mean[:, None]
    L = X_hat.shape[-2] // 2
    return X_hat[..., :L, :] + 1j * X_hat[..., L:, :]


def normalize_inputs(history, track, stats, l, n_p, k_d):
    """Shared complex_to_real -> z-score front end for a single window."""
    H = as_frames(history, l, "history")
    if H.shape[0] != n_p:
        raise ValueError(f"history must hold exactly N_P={n_p} frames, got {H.shape[0]}")
    X_H = (complex_to_real(H.T) - stats.mean[:, None]) / stats.std[:, None]
    if track is None or k_d == 0:
        X_D = np.zeros((k_d, n_p))
    else:
        D = as_frames(track, k_d, "track")
        if D.shape[0] != n_p:
            raise ValueError(f"track must hold exactly N_P={n_p} frames, got {D.shape[0]}")
        X_D = (D.T - stats.physics_mean[:, None]) / stats.physics_std[:, None]
    return X_H, X_D


class ChannelPredictorMixin:
    """Common complex-domain interface of every predictor in the package.

    Subclasses implement ``predict`` on stacked arrays (see
    ``dataset.to_arrays``); this mixin adds the window-level helpers used by
    the evaluation harness.
    """

    def _window_shape(self):
        return self.channel_len, self.n_p_, self.k_d_

    def predict_channel(self, history, track, stats):
        """Predict complex (L, N_F) from N_P history frames and their descriptors."""
        check_is_fitted(self)
        l, n_p, k_d = self._window_shape()
        X_H, X_D = normalize_inputs(history, track, stats, l, n_p, k_d)
        X = np.concatenate([X_H, X_D], axis=0)[None]
        return reconstruct_complex(self.predict(X)[0], stats)

    def predict_samples(self, samples, stats):
        """Complex predictions (n, L, N_F) for raw samples, plus the truth."""
        from .dataset import to_arrays

        X, y = to_arrays(samples, stats)
        pred = reconstruct_complex(self.predict(X), stats)
        truth = reconstruct_complex(y, stats)
        return truth, pred

    def score(self, X, y):
        """Negative mean NMSE of the predictions in the arrays' own space."""
        return -dataset_nmse(np.asarray(y), self.predict(X))[0]


def rotate_phases(X, y, channel_len, rng):
    """Multiply every tap of X's channel rows and of y by an independent random
    unit phasor (one per sample and tap).  Rayleigh taps are circularly
    symmetric, so the rotated windows follow the same distribution."""
    L = channel_len
    phi = rng.uniform(0.0, 2 * np.pi, size=(X.shape[0], L, 1))
    c, s = np.cos(phi), np.sin(phi)

    def rot(A):
        re, im = A[:, :L], A[:, L:2 * L]
        out = A.copy()
        out[:, :L] = c * re - s * im
        out[:, L:2 * L] = s * re + c * im
        return out

    return rot(X), rot(y)


class GradientTrainedMixin:
    """Minibatch training loop shared by the gradient-trained estimators.

    Subclasses provide ``_setup(X, y)`` (validate shapes, build the network
    unless warm starting), ``_forward(Xb)`` mapping a batch of X to a Tensor,
    and ``_groups()``.  ``augment="phase"`` applies ``rotate_phases`` to
    every training batch.
    """

    def _batch_predict(self, X, batch_size=512):
        outs = [self._forward(X[s:s + batch_size]).data for s in range(0, X.shape[0], batch_size)]
        return np.concatenate(outs, axis=0)

    def fit(self, X, y, eval_set=None, scoring=None):
        """Minibatch training on MSE; keeps the best epoch by validation score.

        ``eval_set`` is an optional (X_val, y_val) pair.  ``scoring`` maps
        (y_true, y_pred) arrays to a lower-is-better number and defaults to the
        mean NMSE of the arrays; without an eval set the epoch's mean training
        loss drives model selection.
        """
        X, y = self._setup(X, y)
        if self.batch_size < 1 or not self.lr >= 0:
            raise ConfigError("batch_size must be >= 1 and lr >= 0")
        if self.augment not in (None, "phase"):
            raise ConfigError(f"augment must be None or 'phase', got {self.augment!r}")
        if eval_set is not None:
            Xv, yv = check_xy(eval_set[0], eval_set[1], X.shape[1], X.shape[2], y.shape[1], y.shape[2])
        scoring = scoring or (lambda yt, yp: dataset_nmse(yt, yp)[0])
        groups = self._groups()

        opt = make_optimizer(self.optimizer, groups, self.lr)
        rng = chansim.stream(self.random_state, _SHUFFLE, getattr(self, "n_fits_", 0))
        aug_rng = chansim.stream(self.random_state, _AUGMENT, getattr(self, "n_fits_", 0))
        n = X.shape[0]
        n_batches = -(-n // self.batch_size)
        total = self.epochs * n_batches
        step = 0
        self.loss_curve_, self.val_curve_ = [], []

        def evaluate():
            if eval_set is None:
                return None
            return float(scoring(yv, self._batch_predict(Xv)))

        def snapshot():
            return [{k: t.data.copy() for k, t in g.items()} for g in groups]

        best_score = evaluate()
        if best_score is not None:
            self.val_curve_.append(best_score)
        best_snap = snapshot() if best_score is not None else None
        self.best_epoch_ = 0
        stale = 0
        epoch = 0
        for epoch in range(1, self.epochs + 1):
            order = rng.permutation(n)
            running = 0.0
            for b in range(n_batches):
                idx = order[b * self.batch_size:(b + 1) * self.batch_size]
                Xb, yb = X[idx], y[idx]
                if self.augment == "phase":
                    Xb, yb = rotate_phases(Xb, yb, self.channel_len, aug_rng)
                loss = ag.mse_loss(self._forward(Xb), yb)
                val = float(loss.data)
                if not math.isfinite(val):
                    raise TrainingDivergedError(
                        f"non-finite loss {val} at epoch {epoch}, batch {b}, lr {self.lr}")
                opt.zero_grad()
                ag.backward(loss)
                opt.step(lr_at(self.lr, step, total, self.lr_schedule))
                step += 1
                running += val * idx.size
            self.loss_curve_.append(running / n)
            score = evaluate()
            if score is None:
                score = self.loss_curve_[-1]
            else:
                self.val_curve_.append(score)
            if self.verbose and epoch % self.verbose == 0:
                log.info("epoch %d loss %.3e score %.3e", epoch, self.loss_curve_[-1], score)
            if best_score is None or score < best_score:
                best_score, best_snap, self.best_epoch_ = score, snapshot(), epoch
                stale = 0
            else:
                stale += 1
                if self.early_stop_patience and stale >= self.early_stop_patience:
                    break
        if best_snap is not None:
            for g, saved in zip(groups, best_snap):
                for k, t in g.items():
                    t.data = saved[k]
        self.best_score_ = best_score
        self.n_epochs_ = epoch
        self.n_fits_ = getattr(self, "n_fits_", 0) + 1
        return self


class PhysicsAwarePredictor(GradientTrainedMixin, ChannelPredictorMixin, BaseEstimator):
    """Transformer channel predictor conditioned on physical descriptors.

    Parameters
    ----------
    channel_len : int
        Number of delay taps L; X must carry 2L channel rows followed by
        K_d descriptor rows.
    physics_enabled : bool
        When False the descriptor rows of X are ignored (ablation model).
    descriptor_rows : tuple of int or None
        Which descriptor rows feed the physics branch; None uses all of them.
    freeze_core : bool
        Freeze the attention and MLP weights during ``fit``.
    augment : None or "phase"
        Random per-tap phase rotation of each training batch.
    warm_start : bool
        Continue from the current network instead of re-initialising.
    """

    def __init__(self, channel_len=10, d_model=64, depth=2, heads=4, mlp_ratio=4.0,
                 physics_enabled=True, descriptor_rows=None, freeze_core=False, final_norm=False,
                 epochs=100, batch_size=64, lr=1e-3, lr_schedule="cosine", optimizer="adam",
                 early_stop_patience=20, augment=None, random_state=0, warm_start=False, verbose=0):
        self.channel_len = channel_len
        self.d_model = d_model
        self.depth = depth
        self.heads = heads
        self.mlp_ratio = mlp_ratio
        self.physics_enabled = physics_enabled
        self.descriptor_rows = descriptor_rows
        self.freeze_core = freeze_core
        self.final_norm = final_norm
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

    def _rows(self, k_d):
        if self.descriptor_rows is None:
            return list(range(k_d))
        rows = [int(r) for r in self.descriptor_rows]
        if not rows or min(rows) < 0 or max(rows) >= k_d:
            raise ValueError(f"descriptor_rows {rows} out of range for {k_d} descriptor rows")
        return rows

    def _forward(self, Xb):
        L2 = 2 * self.channel_len
        X_D = Xb[:, L2:][:, self._rows(self.k_d_)] if self.physics_enabled else None
        return self.net_.forward(Xb[:, :L2], X_D)

    def _groups(self):
        return self.net_.groups

    def _setup(self, X, y):
        L2 = 2 * self.channel_len
        X, y = check_xy(X, y, n_y_rows=L2)
        if X.shape[1] < L2:
            raise ValueError(f"X needs at least 2L={L2} rows")
        n_p, n_f, k_d = X.shape[2], y.shape[2], X.shape[1] - L2
        if self.physics_enabled and k_d < 1:
            raise ValueError("physics_enabled=True but X has no descriptor rows")
        if self.warm_start and hasattr(self, "net_"):
            if (self.net_.cfg.n_p, self.net_.cfg.n_f) != (n_p, n_f) or k_d != self.k_d_:
                raise ValueError("warm_start with different window shapes")
            self.net_.set_freeze(self.freeze_core)
            return X, y
        self.k_d_, self.n_p_, self.n_f_ = k_d, n_p, n_f
        n_phys = len(self._rows(k_d)) if self.physics_enabled else 0
        cfg = PredictorConfig(l=self.channel_len, n_p=n_p, n_f=n_f, k_d=n_phys,
                              d_model=self.d_model, depth=self.depth, heads=self.heads,
                              mlp_ratio=self.mlp_ratio, physics_enabled=self.physics_enabled,
                              freeze_core=self.freeze_core, final_norm=self.final_norm)
        self.net_ = Predictor(cfg, seed=self.random_state)
        return X, y

    def predict(self, X):
        check_is_fitted(self, "net_")
        X = check_windows(X, n_rows=2 * self.channel_len + self.k_d_, n_cols=self.n_p_)
        return self._batch_predict(X)

    def save(self, path):
        from .persist import save_estimator

        save_estimator(self, path)

    @classmethod
    def load(cls, path):
        from .persist import load_estimator

        est = load_estimator(path)
        if not isinstance(est, cls):
            raise TypeError(f"{path} holds a {type(est).__name__}, not a {cls.__name__}")
        return est


def predict(p, history, track, stats):
    """Window-level prediction through any fitted predictor."""
    return p.predict_channel(history, track, stats)


def pretrain_then_finetune(p, broad, target, finetune_epochs=None):
    """Phase 1: train everything on ``broad``.  Phase 2: continue on ``target``
    with the core frozen when ``p.freeze_core`` is set.

    Both arguments are (X_train, y_train, X_val, y_val) tuples already in the
    normalised space of their own split.  Returns (phase-1 model, phase-2 model).
    """
    phase1 = clone(p).set_params(freeze_core=False, warm_start=False)
    phase1.fit(broad[0], broad[1], eval_set=(broad[2], broad[3]))
    frozen = p.freeze_core
    phase2 = clone(phase1).set_params(freeze_core=frozen, warm_start=True)
    phase2.net_ = _copy_net(phase1.net_)
    phase2.k_d_, phase2.n_p_, phase2.n_f_ = phase1.k_d_, phase1.n_p_, phase1.n_f_
    if finetune_epochs is not None:
        phase2.set_params(epochs=finetune_epochs)
    phase2.fit(target[0], target[1], eval_set=(target[2], target[3]))
    return phase1, phase2


def _copy_net(net):
    clone_net, _ = Predictor.from_bytes(net.to_bytes())
    return clone_net
