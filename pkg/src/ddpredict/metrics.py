"""Normalised mean-square error between channel matrices."""
from __future__ import annotations

import numpy as np


def nmse(truth, pred):
    """||truth - pred||_F^2 / ||truth||_F^2 for one matrix pair."""
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    if truth.shape != pred.shape:
        raise ValueError(f"shape mismatch {truth.shape} vs {pred.shape}")
    energy = float(np.sum(np.abs(truth) ** 2))
    if energy == 0.0:
        raise ZeroDivisionError("truth has zero energy")
    return float(np.sum(np.abs(truth - pred) ** 2)) / energy


def per_sample_nmse(truth, pred):
    """NMSE of each leading-axis sample; zero-energy samples come back as NaN."""
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    if truth.shape != pred.shape:
        raise ValueError(f"shape mismatch {truth.shape} vs {pred.shape}")
    axes = tuple(range(1, truth.ndim))
    energy = np.sum(np.abs(truth) ** 2, axis=axes)
    err = np.sum(np.abs(truth - pred) ** 2, axis=axes)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(energy > 0, err / np.where(energy > 0, energy, 1.0), np.nan)


def dataset_nmse(truth, pred):
    """Mean NMSE over samples, and the number of zero-energy samples excluded."""
    vals = per_sample_nmse(truth, pred)
    ok = ~np.isnan(vals)
    excluded = int(vals.size - ok.sum())
    if not ok.any():
        raise ZeroDivisionError("every sample has zero energy")
    return float(vals[ok].mean()), excluded
