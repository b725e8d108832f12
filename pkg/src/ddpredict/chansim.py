"""Continuous-Doppler-spread tap channels with a Jakes spectrum.

Each active delay tap is a sum of ``num_clusters * num_rays`` sinusoids with
uniformly random arrival angles and phases, sampled once per frame.  The
module also fits the complex-exponential basis expansion (CE-BEM) to a tap
sequence and produces the per-frame physical descriptors the predictor is
conditioned on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, FitError

SPEED_OF_LIGHT = 299_792_458.0
DESCRIPTORS = ("max_doppler_hz", "velocity_kmh", "snr_db")

# spawn-key tags keep the independent random streams of one seed apart
_STREAM_FADING = 0
_STREAM_MASK = 1
_STREAM_OBS = 2


@dataclass(frozen=True)
class SimConfig:
    carrier_freq_hz: float = 3e9
    subcarrier_spacing_hz: float = 15e3
    delay_bins: int = 64
    doppler_bins: int = 16
    channel_len: int = 10
    nonzero_taps: int = 4
    velocity_kmh: float = 300.0
    num_rays: int = 20
    num_clusters: int = 21
    # None -> one full OTFS frame, N / subcarrier_spacing
    frame_spacing_s: float | None = 1e-4
    # None -> M * N, the full delay-Doppler grid
    transmit_power: float | None = None
    noise_power: float = 1.0
    rng_seed: int = 0
    num_frames: int = 20
    # e-folding length of the power-delay profile in taps; None -> L / 2
    pdp_decay_taps: float | None = None

    def __post_init__(self):
        if not 0 < self.nonzero_taps <= self.channel_len:
            raise ConfigError(f"need 0 < K <= L, got K={self.nonzero_taps}, L={self.channel_len}")
        for name in ("delay_bins", "doppler_bins", "num_rays", "num_clusters", "num_frames"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("carrier_freq_hz", "subcarrier_spacing_hz", "velocity_kmh", "noise_power"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("frame_spacing_s", "transmit_power", "pdp_decay_taps"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"{name} must be > 0")
        if not 0 <= int(self.rng_seed) < 2 ** 64:
            raise ConfigError("rng_seed must fit in 64 unsigned bits")

    @property
    def dt(self):
        if self.frame_spacing_s is not None:
            return float(self.frame_spacing_s)
        return self.doppler_bins / self.subcarrier_spacing_hz

    @property
    def power(self):
        if self.transmit_power is not None:
            return float(self.transmit_power)
        return float(self.delay_bins * self.doppler_bins)

    @property
    def total_rays(self):
        return self.num_clusters * self.num_rays

    @property
    def max_doppler_hz(self):
        return max_doppler(self.velocity_kmh, self.carrier_freq_hz)

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass
class TapSequence:
    frames: np.ndarray          # (T, L) complex
    frame_spacing_s: float
    tap_mask: np.ndarray        # (L,) bool

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.complex128)
        self.tap_mask = np.asarray(self.tap_mask, dtype=bool)
        if self.frames.ndim != 2 or self.frames.shape[1] != self.tap_mask.size:
            raise ValueError("frames must have shape (T, L) matching tap_mask")

    def __len__(self):
        return self.frames.shape[0]

    @property
    def channel_len(self):
        return self.frames.shape[1]


@dataclass
class BemFit:
    order: int
    coeffs: np.ndarray          # (Q, L) complex
    window_len: int
    residual_energy: float
    window_start: int = 0

    def basis(self, t_local):
        return ce_basis(self.order, self.window_len, t_local)


@dataclass
class PhysicsTrack:
    frames: np.ndarray          # (T, K_d) real
    descriptor_names: list = field(default_factory=list)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != len(self.descriptor_names):
            raise ValueError("physics frames must have shape (T, K_d)")

    def __len__(self):
        return self.frames.shape[0]


@dataclass
class FrameObservation:
    y: complex
    x: np.ndarray
    noise_var: float
    snr_db: float


def max_doppler(velocity_kmh, carrier_freq_hz):
    """Maximum Doppler shift f_d = v f_c / c in hertz."""
    if not (velocity_kmh > 0 and carrier_freq_hz > 0):
        raise ConfigError("velocity and carrier frequency must be positive")
    return (velocity_kmh / 3.6) * carrier_freq_hz / SPEED_OF_LIGHT


def stream(seed, *key):
    """Independent generator for (seed, key...) via SeedSequence spawn keys."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))))


def tap_mask(cfg):
    """K active taps; tap 0 is always active, the rest drawn without replacement."""
    L, K = cfg.channel_len, cfg.nonzero_taps
    mask = np.zeros(L, dtype=bool)
    mask[0] = True
    if K > 1:
        rng = stream(cfg.rng_seed, _STREAM_MASK)
        mask[1 + rng.choice(L - 1, size=K - 1, replace=False)] = True
    return mask


def power_delay_profile(cfg, mask):
    decay = cfg.pdp_decay_taps if cfg.pdp_decay_taps is not None else cfg.channel_len / 2.0
    p = np.where(mask, np.exp(-np.arange(cfg.channel_len) / decay), 0.0)
    return p / p.sum()


def generate_taps(cfg, num_frames=None, realization=0):
    """One Jakes-faded tap sequence; deterministic in (cfg, realization)."""
    T = cfg.num_frames if num_frames is None else int(num_frames)
    if T < 1:
        raise ConfigError("num_frames must be >= 1")
    mask = tap_mask(cfg)
    powers = power_delay_profile(cfg, mask)
    active = np.flatnonzero(mask)
    R = cfg.total_rays
    rng = stream(cfg.rng_seed, _STREAM_FADING, realization)
    theta = rng.uniform(0.0, 2 * np.pi, size=(active.size, R))
    psi = rng.uniform(0.0, 2 * np.pi, size=(active.size, R))
    w = 2 * np.pi * cfg.max_doppler_hz * cfg.dt * np.cos(theta)      # rad / frame
    t = np.arange(T, dtype=np.float64)
    phase = w[:, :, None] * t[None, None, :] + psi[:, :, None]       # (K, R, T)
    gains = np.exp(1j * phase).sum(axis=1)                            # (K, T)
    gains *= np.sqrt(powers[active] / R)[:, None]
    frames = np.zeros((T, cfg.channel_len), dtype=np.complex128)
    frames[:, active] = gains.T
    return TapSequence(frames, cfg.dt, mask)


def ce_basis(order, window_len, t_local):
    """Complex-exponential basis, shape (len(t), Q): exp(j2pi(q - Q//2) t / W)."""
    t = np.asarray(t_local, dtype=np.float64).reshape(-1)
    q = np.arange(order) - order // 2
    return np.exp(2j * np.pi * np.outer(t, q) / window_len)


def bem_fit(seq, order, window=None):
    """Least-squares CE-BEM fit of ``seq`` over the half-open frame range ``window``."""
    start, stop = (0, len(seq)) if window is None else window
    if not 0 <= start < stop <= len(seq):
        raise FitError(f"window {window} outside sequence of {len(seq)} frames")
    W = stop - start
    if not 1 <= order <= W:
        raise FitError(f"BEM order {order} must lie in [1, {W}]")
    H = seq.frames[start:stop]
    Phi = ce_basis(order, W, np.arange(W))
    coeffs, *_ = np.linalg.lstsq(Phi, H, rcond=None)
    resid = H - Phi @ coeffs
    return BemFit(order, coeffs, W, float(np.sum(np.abs(resid) ** 2)), start)


def bem_reconstruct(fit, t):
    """Channel vector at absolute frame index ``t`` from a BEM fit."""
    local = t - fit.window_start
    if not 0 <= local < fit.window_len:
        raise IndexError(f"frame {t} outside fit window [{fit.window_start}, {fit.window_start + fit.window_len})")
    return (fit.basis([local]) @ fit.coeffs)[0]


def observe_frame(h, cfg, rng, snr_floor_db=-60.0):
    """Received sample y = h^T x + n for a random unit-modulus transmit vector."""
    h = np.asarray(h, dtype=np.complex128)
    if h.shape != (cfg.channel_len,):
        raise ValueError(f"h must have length {cfg.channel_len}")
    L = h.size
    x = np.sqrt(cfg.power / L) * np.exp(2j * np.pi * rng.uniform(size=L))
    n = np.sqrt(cfg.noise_power / 2) * (rng.standard_normal() + 1j * rng.standard_normal())
    y = complex(h @ x + n)
    energy = float(np.vdot(h, h).real)
    snr = cfg.power * energy / cfg.noise_power
    snr_db = 10 * math.log10(snr) if snr > 0 else -math.inf
    return FrameObservation(y, x, cfg.noise_power, max(snr_db, snr_floor_db))


def physics_track(seq, cfg, descriptors, realization=0, snr_floor_db=-60.0):
    """Per-frame descriptor vectors for the requested labels."""
    names = list(descriptors)
    if not names:
        raise ConfigError("at least one physical descriptor is required")
    unknown = [n for n in names if n not in DESCRIPTORS]
    if unknown:
        raise ConfigError(f"unknown descriptor(s) {unknown}; choose from {DESCRIPTORS}")
    T = len(seq)
    out = np.empty((T, len(names)))
    snr = None
    if "snr_db" in names:
        rng = stream(cfg.rng_seed, _STREAM_OBS, realization)
        snr = np.array([observe_frame(h, cfg, rng, snr_floor_db).snr_db for h in seq.frames])
    for j, name in enumerate(names):
        if name == "max_doppler_hz":
            out[:, j] = cfg.max_doppler_hz
        elif name == "velocity_kmh":
            out[:, j] = cfg.velocity_kmh
        else:
            out[:, j] = snr
    return PhysicsTrack(out, names)
