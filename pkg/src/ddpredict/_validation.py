"""Input checks shared by the estimators."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_windows(X, n_rows=None, n_cols=None, name="X"):
    """Validate a stack of windows shaped (n_samples, rows, frames)."""
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_min_samples=1, input_name=name)
    if X.ndim != 3:
        raise ValueError(f"{name} must be 3-D (n_samples, rows, frames), got shape {X.shape}")
    if n_rows is not None and X.shape[1] != n_rows:
        raise ValueError(f"{name} has {X.shape[1]} rows, expected {n_rows}")
    if n_cols is not None and X.shape[2] != n_cols:
        raise ValueError(f"{name} has {X.shape[2]} frames, expected {n_cols}")
    return X


def check_xy(X, y, n_rows=None, n_p=None, n_y_rows=None, n_f=None):
    X = check_windows(X, n_rows, n_p, "X")
    y = check_windows(y, n_y_rows, n_f, "y")
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"X and y hold {X.shape[0]} and {y.shape[0]} samples")
    return X, y


def as_frames(obj, width, name):
    """Accept a TapSequence/PhysicsTrack or a (T, width) array and return the array."""
    frames = getattr(obj, "frames", obj)
    frames = np.asarray(frames)
    if frames.ndim != 2 or frames.shape[1] != width:
        raise ValueError(f"{name} must have shape (frames, {width}), got {frames.shape}")
    return frames
