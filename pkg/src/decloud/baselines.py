"""Comparison reconstruction methods.

Temporal interpolation plus three presets of the same ALM engine:

* ``mc``       squared loss, no time smoothing (classic matrix completion)
* ``rmc``      l1 loss, no time smoothing (robust matrix completion)
* ``tecmac``   squared loss with time smoothing
* ``tecromac`` l1 loss with time smoothing (the full model)
"""

from __future__ import annotations

import numpy as np

from .solver import Solution, SolverConfig, solve
from .tensor_ops import DataMatrix, ObservationMask

__all__ = [
    "NoObservationsError",
    "interpolate_temporal",
    "solve_mc",
    "solve_rmc",
    "solve_tecmac",
    "solve_tecromac",
]


class NoObservationsError(ValueError):
    """The mask admits no observed entries at all."""


def interpolate_temporal(y, mask, channels: int = 1):
    """Fill masked entries of each (pixel, channel) series by linear
    interpolation in time.

    Observed entries are kept exactly; leading/trailing gaps take the nearest
    observed value; series with no observations are filled with the mean of
    all observed entries of the whole sequence.
    """
    if isinstance(y, DataMatrix):
        values, channels, dims = y.values, y.channels, y.dims
    else:
        values, dims = np.asarray(y, dtype=np.float64), None
    omega = mask.to_matrix(channels) if isinstance(mask, ObservationMask) else np.asarray(mask, dtype=bool)
    if omega.shape != values.shape:
        raise ValueError(f"mask shape {omega.shape} != data shape {values.shape}")
    if not omega.any():
        raise NoObservationsError("cannot interpolate: no observed entries")
    rows, cols = values.shape
    t = cols // channels
    v = values.reshape(rows, channels, t)
    o = omega.reshape(rows, channels, t)
    out = v.copy()
    global_mean = float(values[omega].mean())
    grid = np.arange(t, dtype=np.float64)
    for r in range(rows):
        for k in range(channels):
            obs = o[r, k]
            if obs.all():
                continue
            if not obs.any():
                out[r, k] = global_mean
                continue
            out[r, k, ~obs] = np.interp(grid[~obs], grid[obs], v[r, k, obs])
    result = out.reshape(rows, cols)
    if dims is not None:
        return DataMatrix(result, dims)
    return result


def _preset(y, mask, lambda1, lambda2, loss, overrides) -> Solution:
    opts = dict(overrides or {})
    channels = opts.pop("channels", None)
    opts.setdefault("algorithm", "ipg")
    cfg = SolverConfig(lambda1=lambda1, lambda2=lambda2, loss=loss, **opts)
    return solve(y, mask, cfg, channels=channels)


def solve_mc(y, mask, lambda1: float, **overrides) -> Solution:
    """Matrix completion: squared loss, lambda2 = 0."""
    return _preset(y, mask, lambda1, 0.0, "squared", overrides)


def solve_rmc(y, mask, lambda1: float, **overrides) -> Solution:
    """Robust matrix completion: l1 loss, lambda2 = 0."""
    return _preset(y, mask, lambda1, 0.0, "absolute", overrides)


def solve_tecmac(y, mask, lambda1: float, lambda2: float, **overrides) -> Solution:
    """Matrix completion with the time-smoothness penalty (squared loss)."""
    return _preset(y, mask, lambda1, lambda2, "squared", overrides)


def solve_tecromac(y, mask, lambda1: float, lambda2: float, **overrides) -> Solution:
    """The full robust model: l1 loss plus time smoothness."""
    return _preset(y, mask, lambda1, lambda2, "absolute", overrides)
