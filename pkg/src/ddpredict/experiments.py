"""Training entry point and the two evaluation sweeps (NMSE vs. velocity and
NMSE vs. prediction horizon).

A sweep seed ``s`` fixes both the channel realizations (``rng_seed = s``) and
the model initialisation (``random_state = s``).  Test windows for a sweep
point come from realization ids far above any training id, so they never
overlap the training data but share its tap mask and normalisation.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from sklearn.utils.validation import check_is_fitted

from . import chansim
from . import dataset as ds
from .baselines import METHODS, make_method
from .errors import ConfigError
from .metrics import per_sample_nmse
from .model import reconstruct_complex

log = logging.getLogger(__name__)

SWEEP_VARIABLES = ("velocity_kmh", "horizon")
DEFAULT_SEEDS = (1, 2, 3)
_TEST_ID_BASE = 1 << 40


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 64
    lr: float = 2e-3
    lr_schedule: str = "cosine"
    optimizer: str = "adam"
    early_stop_patience: int = 20
    augment: str = "phase"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if not self.lr >= 0:
            raise ConfigError("lr must be >= 0")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"lr_schedule must be constant or cosine, got {self.lr_schedule!r}")
        if self.optimizer not in ("adam", "adam_moments", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.early_stop_patience < 0:
            raise ConfigError("early_stop_patience must be >= 0")
        if self.augment not in (None, "phase"):
            raise ConfigError(f"augment must be none or phase, got {self.augment!r}")

    def estimator_params(self):
        p = asdict(self)
        p["random_state"] = p.pop("seed")
        return p


@dataclass(frozen=True)
class ExperimentConfig:
    sim: chansim.SimConfig = field(default_factory=chansim.SimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    n_samples: int = 2500
    split_ratios: tuple = (0.8, 0.1, 0.1)
    n_p: int = 16
    n_f: int = 4
    stride: int = 4
    windows_per_realization: int = 1
    descriptors: tuple = ("max_doppler_hz",)
    velocities: tuple = ds.DEFAULT_VELOCITIES
    history_noise_var: float = 1e-3
    test_samples: int = 300
    d_model: int = 64
    depth: int = 2
    heads: int = 4
    mlp_ratio: float = 4.0
    ar_order: int = 4
    horizon_velocity: float = 300.0
    retrain_per_horizon: bool = True

    def __post_init__(self):
        if self.n_samples < 3 or self.test_samples < 1:
            raise ConfigError("need n_samples >= 3 and test_samples >= 1")
        if not self.history_noise_var >= 0:
            raise ConfigError("history_noise_var must be >= 0")

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class ReportPoint:
    x: float
    nmse_mean: float
    nmse_std: float
    n_seeds: int
    nmse_median: float
    n_excluded: int = 0


@dataclass
class EvalReport:
    method: str
    sweep_variable: str
    points: list
    runtime_s: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if self.sweep_variable not in SWEEP_VARIABLES:
            raise ValueError(f"sweep_variable must be one of {SWEEP_VARIABLES}")
        self.points = sorted(self.points, key=lambda p: p.x)

    def xs(self):
        return [p.x for p in self.points]

    def medians(self):
        return np.array([p.nmse_median for p in self.points])

    def point(self, x):
        for p in self.points:
            if p.x == x:
                return p
        raise KeyError(x)


# building blocks -------------------------------------------------------------

def method_params(cfg):
    """Estimator keyword arguments shared by every method, from the config."""
    params = cfg.train.estimator_params()
    params.update(channel_len=cfg.sim.channel_len, d_model=cfg.d_model, depth=cfg.depth,
                  heads=cfg.heads, mlp_ratio=cfg.mlp_ratio, order=cfg.ar_order)
    return params


def build_method(method, cfg, seed=None):
    params = method_params(cfg)
    if seed is not None:
        params["random_state"] = seed
    return make_method(method, **params)


def build_split(cfg, seed=None, n_f=None):
    """Training mixture over ``cfg.velocities``; stats fit on the train part."""
    sim = cfg.sim if seed is None else cfg.sim.with_(rng_seed=seed)
    samples = ds.build_samples(sim, cfg.n_samples, n_p=cfg.n_p, n_f=n_f or cfg.n_f,
                               descriptors=cfg.descriptors, velocities=cfg.velocities,
                               windows_per_realization=cfg.windows_per_realization,
                               stride=cfg.stride, history_noise_var=cfg.history_noise_var)
    out = ds.split(samples, cfg.split_ratios, seed=sim.rng_seed)
    out.info.update(rng_seed=sim.rng_seed, n_f=n_f or cfg.n_f)
    return out


def held_out_samples(cfg, velocity, seed=None, n_f=None, n=None):
    """Held-out windows at a single velocity."""
    sim = cfg.sim if seed is None else cfg.sim.with_(rng_seed=seed)
    offset = _TEST_ID_BASE + int(round(velocity * 1000)) * (1 << 20)
    return ds.build_samples(sim, n or cfg.test_samples, n_p=cfg.n_p, n_f=n_f or cfg.n_f,
                            descriptors=cfg.descriptors, velocities=(velocity,),
                            windows_per_realization=cfg.windows_per_realization,
                            stride=cfg.stride, history_noise_var=cfg.history_noise_var,
                            id_offset=offset)


def nmse_scorer(stats):
    """Lower-is-better NMSE of normalised arrays, measured in complex channel space."""
    def score(y_true, y_pred):
        vals = per_sample_nmse(reconstruct_complex(y_true, stats), reconstruct_complex(y_pred, stats))
        return float(np.nanmean(vals))
    return score


def train(p, split, tc=None):
    """Fit ``p`` on ``split.train`` (validation on ``split.val``); returns (p, loss curve)."""
    if tc is not None:
        accepted = p._get_param_names()
        p.set_params(**{k: v for k, v in tc.estimator_params().items() if k in accepted})
    X, y = ds.to_arrays(split.train, split.stats)
    eval_set = ds.to_arrays(split.val, split.stats) if split.val else None
    p.fit(X, y, eval_set=eval_set, scoring=nmse_scorer(split.stats))
    return p, list(getattr(p, "loss_curve_", []))


def evaluate(p, samples, stats, horizon=None):
    """Per-sample NMSE over the first ``horizon`` predicted frames (all by default).

    Returns (mean NMSE, number of zero-energy samples excluded, per-sample values).
    """
    check_is_fitted(p)
    if not samples:
        raise ValueError("no samples to evaluate")
    truth, pred = p.predict_samples(samples, stats)
    if horizon is not None:
        if horizon < 1 or horizon > pred.shape[-1] or horizon > truth.shape[-1]:
            raise ValueError(f"horizon {horizon} exceeds the model's {pred.shape[-1]}-frame output")
        truth, pred = truth[..., :horizon], pred[..., :horizon]
    vals = per_sample_nmse(truth, pred)
    ok = ~np.isnan(vals)
    if not ok.any():
        raise ZeroDivisionError("every test sample has zero energy")
    return float(vals[ok].mean()), int((~ok).sum()), vals


def aggregate(method, variable, table, runtime):
    """table: {x: [(nmse, excluded) per seed]} -> EvalReport."""
    pts = []
    for x, rows in table.items():
        v = np.array([r[0] for r in rows])
        pts.append(ReportPoint(float(x), float(v.mean()), float(v.std()), len(v),
                               float(np.median(v)), int(sum(r[1] for r in rows))))
    return EvalReport(method, variable, pts, runtime)


def _check_methods(methods):
    methods = [getattr(m, "value", m) for m in methods]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise ConfigError(f"unknown or empty method list {bad}; choose from {METHODS}")
    return methods


def _run_parallel(fn, jobs, n_jobs):
    if n_jobs == 1 or len(jobs) == 1:
        return [fn(*j) for j in jobs]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs)(delayed(fn)(*j) for j in jobs)


# velocity sweep -------------------------------------------------------------

def _velocity_job(methods, velocities, seed, cfg, models):
    split = build_split(cfg, seed)
    tests = {v: held_out_samples(cfg, v, seed) for v in velocities}
    out = {}
    for m in methods:
        t0 = time.perf_counter()
        if models is not None:
            est = models[(m, seed)]
            check_is_fitted(est)
        else:
            est, _ = train(build_method(m, cfg, seed), split)
        res = {v: evaluate(est, s, split.stats)[:2] for v, s in tests.items()}
        out[m] = (res, time.perf_counter() - t0)
        log.info("velocity sweep seed %d %s: %s", seed, m,
                 " ".join(f"{v:g}:{r[0]:.3e}" for v, r in res.items()))
    return out


def sweep_velocity(methods, velocities=None, seeds=DEFAULT_SEEDS, cfg=None, n_jobs=1, models=None):
    """NMSE vs. velocity.  Each seed trains every method once on the velocity
    mixture and scores it on fresh windows at each velocity.

    ``models`` optionally maps (method, seed) to an already fitted estimator;
    an unfitted one raises ``NotFittedError``.
    """
    cfg = cfg or ExperimentConfig()
    methods = _check_methods(methods)
    velocities = sorted(float(v) for v in (velocities if velocities is not None else cfg.velocities))
    if not velocities or not seeds:
        raise ConfigError("need at least one velocity and one seed")
    per_seed = _run_parallel(_velocity_job, [(methods, velocities, s, cfg, models) for s in seeds], n_jobs)
    reports = []
    for m in methods:
        table = {v: [job[m][0][v] for job in per_seed] for v in velocities}
        reports.append(aggregate(m, "velocity_kmh", table, sum(job[m][1] for job in per_seed)))
    return reports


# horizon sweep --------------------------------------------------------------

def _horizon_job(methods, horizons, seed, cfg, retrain, models):
    out = {m: ({}, 0.0) for m in methods}
    if retrain:
        plan = [(h, [h]) for h in horizons]
    else:
        plan = [(max(horizons), list(horizons))]
    for n_f, evals in plan:
        split = build_split(cfg, seed, n_f=n_f)
        test = held_out_samples(cfg, cfg.horizon_velocity, seed, n_f=n_f)
        for m in methods:
            t0 = time.perf_counter()
            if models is not None:
                est = models[(m, seed)]
                check_is_fitted(est)
            else:
                est, _ = train(build_method(m, cfg, seed), split)
            cap = getattr(est, "n_f_", n_f)
            for h in evals:
                if h > cap:
                    raise ValueError(f"horizon {h} exceeds {m}'s {cap}-frame output")
                out[m][0][h] = evaluate(est, test, split.stats, horizon=h)[:2]
            out[m] = (out[m][0], out[m][1] + time.perf_counter() - t0)
    return out


def sweep_horizon(methods, horizons=tuple(range(1, 11)), seeds=DEFAULT_SEEDS, cfg=None,
                  retrain=None, n_jobs=1, models=None):
    """NMSE vs. prediction horizon at ``cfg.horizon_velocity``.

    With ``retrain`` (default ``cfg.retrain_per_horizon``) a model is trained
    per horizon h with N_F = h; otherwise one model with N_F = max(horizons)
    is trained and scored on its first h output frames.
    """
    cfg = cfg or ExperimentConfig()
    methods = _check_methods(methods)
    horizons = sorted(int(h) for h in horizons)
    if not horizons or horizons[0] < 1 or not seeds:
        raise ConfigError("horizons must be positive and seeds non-empty")
    retrain = cfg.retrain_per_horizon if retrain is None else retrain
    if retrain and models is not None:
        raise ConfigError("pre-fitted models can only be used with retrain=False")
    per_seed = _run_parallel(_horizon_job, [(methods, horizons, s, cfg, retrain, models) for s in seeds], n_jobs)
    reports = []
    for m in methods:
        table = {h: [job[m][0][h] for job in per_seed] for h in horizons}
        reports.append(aggregate(m, "horizon", table, sum(job[m][1] for job in per_seed)))
    return reports


def config_dict(cfg):
    """Flat, JSON-friendly view of an ExperimentConfig (used in manifests)."""
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name in ("sim", "train"):
            out.update(asdict(v))
        else:
            out[f.name] = list(v) if isinstance(v, tuple) else v
    return out
