"""Shared low-level numerics: RK4 on a fixed grid, grid interpolation,
reverse cumulative quadrature, and tail-stable Gaussian interval
probabilities."""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy.special import log_ndtr


def rk4(f: Callable[[float, np.ndarray], np.ndarray],
        y0: np.ndarray,
        times: np.ndarray,
        backward: bool = False,
        postprocess: Callable[[np.ndarray], np.ndarray] | None = None,
        check: Callable[[np.ndarray, float], None] | None = None) -> np.ndarray:
    """Classical RK4 over the given time nodes.

    Forward mode integrates from times[0] with initial value y0; backward
    mode integrates from times[-1] with terminal value y0.  Returns the
    state at every node, indexed like `times` in both modes.  `postprocess`
    is applied to the state after each full step (e.g. symmetrization) and
    `check` may raise on blow-up.
    """
    times = np.asarray(times, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    out = np.empty((len(times),) + y0.shape)
    order = range(len(times) - 1, 0, -1) if backward else range(len(times) - 1)
    out[-1 if backward else 0] = y0
    y = y0
    for i in order:
        if backward:
            t0, t1 = times[i], times[i - 1]
        else:
            t0, t1 = times[i], times[i + 1]
        h = t1 - t0
        k1 = f(t0, y)
        k2 = f(t0 + 0.5 * h, y + 0.5 * h * k1)
        k3 = f(t0 + 0.5 * h, y + 0.5 * h * k2)
        k4 = f(t1, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if postprocess is not None:
            y = postprocess(y)
        if check is not None:
            check(y, t1)
        out[i - 1 if backward else i + 1] = y
    return out


def interp_series(times: np.ndarray, series: np.ndarray, t: float) -> np.ndarray:
    """Linear interpolation of a node-indexed series; clamps to the ends.

    `series` has shape (len(times), ...); the leading axis is time.
    """
    t0 = times[0]
    dt = times[1] - times[0]
    s = (float(t) - t0) / dt
    if s <= 0.0:
        return series[0]
    if s >= len(times) - 1:
        return series[-1]
    i = int(s)
    w = s - i
    if w == 0.0:
        return series[i]
    return (1.0 - w) * series[i] + w * series[i + 1]


def grid_index(times: np.ndarray, t: float) -> int:
    """Index of the grid node nearest to t (uniform grid)."""
    dt = times[1] - times[0]
    i = int(round((float(t) - times[0]) / dt))
    return min(max(i, 0), len(times) - 1)


def reverse_cumtrapz(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    """F[i] = trapezoidal integral of `values` from times[i] to times[-1].

    F[-1] is exactly zero.  `values` has the time axis first.
    """
    dt = np.diff(times)
    shape = [len(dt)] + [1] * (values.ndim - 1)
    seg = 0.5 * dt.reshape(shape) * (values[:-1] + values[1:])
    out = np.zeros_like(values)
    out[:-1] = np.cumsum(seg[::-1], axis=0)[::-1]
    return out


def log_gauss_interval_prob(z_lo, z_hi):
    """log P(z_lo <= Z <= z_hi) for standard normal Z, stable in far tails.

    Both tails are handled by reflecting the interval onto the side where
    log_ndtr is accurate, then using log1p on the difference of CDFs.
    Accepts arrays (broadcast); +/-inf bounds are allowed.
    """
    z_lo, z_hi = np.broadcast_arrays(np.asarray(z_lo, float), np.asarray(z_hi, float))
    with np.errstate(invalid="ignore"):
        flip = (z_lo + z_hi) > 0.0
    a = np.where(flip, -z_hi, z_lo)
    b = np.where(flip, -z_lo, z_hi)
    log_b = log_ndtr(b)
    log_a = log_ndtr(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        diff = np.minimum(log_a - log_b, 0.0)
        out = log_b + np.log1p(-np.exp(diff))
    # empty or lower-unbounded intervals
    out = np.where(np.isneginf(log_a), log_b, out)
    out = np.where(np.isneginf(log_b), -np.inf, out)
    return out
