"""Displacement metrics over predicted and true trajectories [m, T, 2]."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DimensionError, HorizonError, MetricError


def _stack(x) -> np.ndarray:
    if hasattr(x, "trajectories"):
        return np.asarray(x.trajectories, dtype=np.float64)
    if isinstance(x, (list, tuple)) and x and hasattr(x[0], "trajectories"):
        return np.concatenate([np.asarray(p.trajectories, dtype=np.float64) for p in x])
    arr = np.asarray(x, dtype=np.float64)
    return arr[None] if arr.ndim == 2 else arr


def displacements(pred, truth) -> np.ndarray:
    """Euclidean error per target and step, shape [m, T]."""
    p, t = _stack(pred), _stack(truth)
    if p.ndim != 3 or p.shape[-1] != 2:
        raise DimensionError(f"trajectories must be [m, T, 2], got {p.shape}")
    if p.shape != t.shape:
        raise DimensionError(f"prediction {p.shape} and truth {t.shape} differ")
    if p.shape[0] == 0 or p.shape[1] == 0:
        raise MetricError("metric undefined for an empty target set")
    return np.sqrt(np.sum((p - t) ** 2, axis=-1))


def ade(pred, truth) -> float:
    """Mean over targets of each target's average displacement."""
    return float(np.mean(displacements(pred, truth)))


def fde(pred, truth) -> float:
    """Mean over targets of the displacement at the last step."""
    return float(np.mean(displacements(pred, truth)[:, -1]))


def rmse_at(pred, truth, step: int) -> float:
    """Root-mean-square displacement at 1-based horizon ``step`` over all samples."""
    d = displacements(pred, truth)
    if not 1 <= step <= d.shape[1]:
        raise HorizonError(f"step {step} outside horizon 1..{d.shape[1]}")
    return float(np.sqrt(np.mean(d[:, step - 1] ** 2)))


def rmse_by_second(pred, truth, steps_per_second: int = 10) -> list:
    """RMSE at every whole second that fits in the horizon."""
    horizon = displacements(pred, truth).shape[1]
    return [rmse_at(pred, truth, s) for s in range(steps_per_second, horizon + 1, steps_per_second)]


def summarize(pred, truth, steps_per_second: int = 10) -> dict:
    return {
        "ade": ade(pred, truth),
        "fde": fde(pred, truth),
        "rmse_by_second": rmse_by_second(pred, truth, steps_per_second),
    }
