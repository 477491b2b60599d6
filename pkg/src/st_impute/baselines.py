"""Classical imputation baselines operating per channel on ``[n x f]`` series.

Missing entries are NaN unless an explicit boolean ``mask`` (True = missing)
is given. Observed entries are never modified.
"""

from __future__ import annotations

import numpy as np


def _prepare(series, mask):
    x = np.array(series, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    missing = np.isnan(x) if mask is None else np.asarray(mask, dtype=bool).reshape(x.shape)
    return x, missing, squeeze


def _finish(x, squeeze):
    return x[:, 0] if squeeze else x


def impute_mean(series, mask=None, fallback: float | np.ndarray = 0.0) -> np.ndarray:
    """Write each channel's observed mean into its missing slots.

    A channel with no observations takes ``fallback`` (a scalar or one value
    per channel), typically the cross-series mean.
    """
    x, missing, squeeze = _prepare(series, mask)
    fb = np.broadcast_to(np.asarray(fallback, dtype=np.float64), (x.shape[1],))
    for j in range(x.shape[1]):
        obs = ~missing[:, j]
        fill = x[obs, j].mean() if obs.any() else fb[j]
        x[missing[:, j], j] = fill
    return _finish(x, squeeze)


def impute_last(series, mask=None, fallback: float | np.ndarray = 0.0) -> np.ndarray:
    """Carry the last observation forward; leading gaps take the first observation."""
    x, missing, squeeze = _prepare(series, mask)
    fb = np.broadcast_to(np.asarray(fallback, dtype=np.float64), (x.shape[1],))
    n = x.shape[0]
    for j in range(x.shape[1]):
        obs = np.flatnonzero(~missing[:, j])
        if obs.size == 0:
            x[:, j] = fb[j]
            continue
        # index of the most recent observation at or before each step
        last = np.maximum.accumulate(np.where(~missing[:, j], np.arange(n), -1))
        last[last < 0] = obs[0]
        x[:, j] = x[last, j]
    return _finish(x, squeeze)


def impute_linear(series, mask=None, fallback: float | np.ndarray = 0.0) -> np.ndarray:
    """Linear interpolation between flanking observations, ends held constant."""
    x, missing, squeeze = _prepare(series, mask)
    fb = np.broadcast_to(np.asarray(fallback, dtype=np.float64), (x.shape[1],))
    t = np.arange(x.shape[0], dtype=np.float64)
    for j in range(x.shape[1]):
        obs = ~missing[:, j]
        if not obs.any():
            x[:, j] = fb[j]
            continue
        x[~obs, j] = np.interp(t[~obs], t[obs], x[obs, j])
    return _finish(x, squeeze)


BASELINES = {"mean": impute_mean, "last": impute_last, "linear": impute_linear}
