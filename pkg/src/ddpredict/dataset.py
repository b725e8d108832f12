"""Supervised windows over simulated tap sequences, z-score statistics and the
``DDP1`` dataset file format.

A sample stores its history as a real ``(2L, N_P)`` matrix whose upper half
holds real parts and lower half imaginary parts, one column per frame.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import chansim
from .errors import BadMagicError, ConfigError, ShapeMismatchError, TruncatedFileError, VersionMismatchError

STD_FLOOR = 1e-8
DEFAULT_VELOCITIES = tuple(range(100, 501, 50))


@dataclass
class Sample:
    history: np.ndarray     # (2L, N_P)
    physics: np.ndarray     # (K_d, N_P)
    target: np.ndarray      # (2L, N_F)
    velocity_kmh: float = 0.0
    max_doppler_hz: float = 0.0
    sample_id: int = 0

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.sample_id == other.sample_id
            and self.velocity_kmh == other.velocity_kmh
            and self.max_doppler_hz == other.max_doppler_hz
            and np.array_equal(self.history, other.history)
            and np.array_equal(self.physics, other.physics)
            and np.array_equal(self.target, other.target)
        )


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    physics_mean: np.ndarray
    physics_std: np.ndarray

    @classmethod
    def identity(cls, n_features, k_d):
        return cls(np.zeros(n_features), np.ones(n_features), np.zeros(k_d), np.ones(k_d))

    def __eq__(self, other):
        if not isinstance(other, NormStats):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("mean", "std", "physics_mean", "physics_std"))


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list
    stats: NormStats
    info: dict = field(default_factory=dict, compare=False)

    @property
    def shape(self):
        """(L, N_P, N_F, K_d) read off the first sample."""
        s = next(iter(self.train or self.val or self.test), None)
        if s is None:
            raise ValueError("empty dataset")
        return s.history.shape[0] // 2, s.history.shape[1], s.target.shape[1], s.physics.shape[0]


def complex_to_real(h):
    h = np.asarray(h)
    return np.concatenate([h.real, h.imag], axis=0).astype(np.float64)


def real_to_complex(x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] % 2:
        raise ValueError("real representation needs an even leading dimension")
    L = x.shape[0] // 2
    return x[:L] + 1j * x[L:]


def make_samples(seq, track, n_p, n_f, stride=4, id_offset=0, velocity_kmh=0.0, max_doppler_hz=0.0):
    """Sliding (history, target) windows; too-short sequences give no samples."""
    if stride < 1 or n_p < 1 or n_f < 1:
        raise ConfigError("n_p, n_f and stride must be >= 1")
    if len(track) != len(seq):
        raise ConfigError("physics track and tap sequence differ in length")
    X = complex_to_real(seq.frames.T)           # (2L, T)
    D = track.frames.T                          # (K_d, T)
    out = []
    span = n_p + n_f
    for k, start in enumerate(range(0, len(seq) - span + 1, stride)):
        out.append(Sample(
            history=X[:, start:start + n_p].copy(),
            physics=D[:, start:start + n_p].copy(),
            target=X[:, start + n_p:start + span].copy(),
            velocity_kmh=float(velocity_kmh),
            max_doppler_hz=float(max_doppler_hz),
            sample_id=id_offset + k,
        ))
    return out


def build_samples(cfg, n_samples, n_p=16, n_f=4, descriptors=("max_doppler_hz",),
                  velocities=DEFAULT_VELOCITIES, windows_per_realization=1, stride=4,
                  history_noise_var=0.0, id_offset=0):
    """Simulate ``n_samples`` windows, velocities drawn uniformly from ``velocities``.

    Realization ``r`` always uses the private stream (seed, r), so any subset
    of realizations can be produced independently and in any order.
    """
    velocities = tuple(float(v) for v in velocities)
    if not velocities:
        raise ConfigError("need at least one velocity")
    n_real = -(-n_samples // windows_per_realization)
    frames = n_p + n_f + (windows_per_realization - 1) * stride
    samples = []
    for r in range(n_real):
        rid = id_offset + r
        pick = chansim.stream(cfg.rng_seed, 3, rid)
        v = velocities[int(pick.integers(len(velocities)))]
        c = cfg.with_(velocity_kmh=v)
        seq = chansim.generate_taps(c, frames, realization=rid)
        track = chansim.physics_track(seq, c, descriptors, realization=rid)
        win = make_samples(seq, track, n_p, n_f, stride, id_offset=rid * windows_per_realization,
                           velocity_kmh=v, max_doppler_hz=c.max_doppler_hz)
        if history_noise_var > 0:
            active = np.concatenate([seq.tap_mask, seq.tap_mask])[:, None]
            for s in win:
                noise = pick.standard_normal(s.history.shape) * np.sqrt(history_noise_var / 2)
                s.history = s.history + noise * active
        samples.extend(win)
    return samples[:n_samples]


def _stack(samples, attr):
    return np.stack([getattr(s, attr) for s in samples])


def fit_norm(train):
    """Per-feature mean/std over every history column of every train sample."""
    if not train:
        raise ConfigError("cannot fit normalisation on an empty training set")
    H = np.concatenate([s.history for s in train], axis=1)
    D = np.concatenate([s.physics for s in train], axis=1)
    return NormStats(
        mean=H.mean(axis=1),
        std=np.maximum(H.std(axis=1), STD_FLOOR),
        physics_mean=D.mean(axis=1),
        physics_std=np.maximum(D.std(axis=1), STD_FLOOR),
    )


def _check_dims(s, stats):
    if s.history.shape[0] != stats.mean.size or s.target.shape[0] != stats.mean.size:
        raise ShapeMismatchError(f"sample has {s.history.shape[0]} channel features, stats {stats.mean.size}")
    if s.physics.shape[0] != stats.physics_mean.size:
        raise ShapeMismatchError(f"sample has {s.physics.shape[0]} descriptors, stats {stats.physics_mean.size}")


def apply_norm(s, stats):
    _check_dims(s, stats)
    m, sd = stats.mean[:, None], stats.std[:, None]
    return Sample(
        history=(s.history - m) / sd,
        physics=(s.physics - stats.physics_mean[:, None]) / stats.physics_std[:, None],
        target=(s.target - m) / sd,
        velocity_kmh=s.velocity_kmh, max_doppler_hz=s.max_doppler_hz, sample_id=s.sample_id,
    )


def invert_norm(s, stats):
    _check_dims(s, stats)
    m, sd = stats.mean[:, None], stats.std[:, None]
    return Sample(
        history=s.history * sd + m,
        physics=s.physics * stats.physics_std[:, None] + stats.physics_mean[:, None],
        target=s.target * sd + m,
        velocity_kmh=s.velocity_kmh, max_doppler_hz=s.max_doppler_hz, sample_id=s.sample_id,
    )


def to_arrays(samples, stats=None):
    """Stack samples into estimator arrays.

    Returns ``X`` of shape (n, 2L + K_d, N_P), channel rows above descriptor
    rows, and ``y`` of shape (n, 2L, N_F).  With ``stats`` the arrays are
    z-scored first.
    """
    if stats is not None:
        samples = [apply_norm(s, stats) for s in samples]
    X = np.concatenate([_stack(samples, "history"), _stack(samples, "physics")], axis=1)
    return X, _stack(samples, "target")


def split(samples, ratios=(0.8, 0.1, 0.1), seed=0):
    """Deterministic shuffled train/val/test split; stats fit on train only."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(samples)
    order = chansim.stream(seed, 4).permutation(n)
    n_tr = int(round(ratios[0] * n))
    n_va = int(round(ratios[1] * n))
    n_va = min(n_va, n - n_tr)
    pick = [samples[i] for i in order]
    train, val, test = pick[:n_tr], pick[n_tr:n_tr + n_va], pick[n_tr + n_va:]
    return DatasetSplit(train, val, test, fit_norm(train))


# file format --------------------------------------------------------------

MAGIC = b"DDP1"
VERSION = 1
_HEAD = struct.Struct("<4sI7I")


def dataset_bytes(ds):
    L, n_p, n_f, k_d = ds.shape
    parts = [_HEAD.pack(MAGIC, VERSION, L, n_p, n_f, k_d, len(ds.train), len(ds.val), len(ds.test))]
    st = ds.stats
    for arr in (st.mean, st.std, st.physics_mean, st.physics_std):
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    rec = struct.Struct("<Qdd")
    for part in (ds.train, ds.val, ds.test):
        for s in part:
            if s.history.shape != (2 * L, n_p) or s.physics.shape != (k_d, n_p) or s.target.shape != (2 * L, n_f):
                raise ShapeMismatchError(f"sample {s.sample_id} does not match dataset shape")
            parts.append(rec.pack(s.sample_id, s.velocity_kmh, s.max_doppler_hz))
            for arr in (s.history, s.physics, s.target):
                parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def save_dataset(ds, path):
    data = dataset_bytes(ds)
    with open(path, "wb") as fh:
        fh.write(data)


def parse_dataset(buf, expect_shape=None):
    """Decode ``DDP1`` bytes; ``expect_shape`` = (L, N_P, N_F, K_d) entries may be None."""
    if len(buf) < _HEAD.size:
        raise TruncatedFileError("file shorter than the dataset header")
    magic, version, L, n_p, n_f, k_d, n_tr, n_va, n_te = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionMismatchError(f"dataset version {version}, expected {VERSION}")
    if expect_shape is not None:
        for name, want, got in zip(("L", "N_P", "N_F", "K_d"), expect_shape, (L, n_p, n_f, k_d)):
            if want is not None and want != got:
                raise ShapeMismatchError(f"{name}: file has {got}, expected {want}")
    off = _HEAD.size

    def take(n):
        nonlocal off
        end = off + 8 * n
        if end > len(buf):
            raise TruncatedFileError("dataset payload truncated")
        a = np.frombuffer(buf, dtype="<f8", count=n, offset=off).astype(np.float64)
        off = end
        return a

    stats = NormStats(take(2 * L), take(2 * L), take(k_d), take(k_d))
    rec = struct.Struct("<Qdd")
    parts = []
    for count in (n_tr, n_va, n_te):
        cur = []
        for _ in range(count):
            if off + rec.size > len(buf):
                raise TruncatedFileError("dataset payload truncated")
            sid, vel, fd = rec.unpack_from(buf, off)
            off += rec.size
            h = take(2 * L * n_p).reshape(2 * L, n_p)
            d = take(k_d * n_p).reshape(k_d, n_p)
            t = take(2 * L * n_f).reshape(2 * L, n_f)
            cur.append(Sample(h, d, t, vel, fd, sid))
        parts.append(cur)
    if off != len(buf):
        raise TruncatedFileError(f"{len(buf) - off} trailing bytes after last sample")
    return DatasetSplit(parts[0], parts[1], parts[2], stats)


def load_dataset(path, expect_shape=None):
    with open(path, "rb") as fh:
        return parse_dataset(fh.read(), expect_shape)
