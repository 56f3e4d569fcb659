"""Seasonal-trend decomposition of timestamp series, and periodic injection.

The decomposition is the classic STL inner loop (no outer robustness pass):
detrend, smooth cycle-subseries with LOESS, low-pass filter, subtract to get
the seasonal, then re-estimate the trend from the deseasonalized series.
The residual is defined as the remainder, so the additive identity
``y == trend + seasonal + residual`` holds exactly (bitwise) whenever a
representable remainder exists — always the case when the fit error stays
below the magnitude of the series values, as with timestamp series; the
rare elements beyond that reconstruct to within one ulp.

`inject_period` feeds the seasonal component back into the timestamps
(t̂s = ts + w·S) so that periodic sampling cadence becomes an explicit
feature for the sequence branch.  Injected timestamps are not guaranteed
to be monotone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import GpsPoint, Trajectory
from .errors import DataError


def _odd_at_least(x: float) -> int:
    n = max(3, int(math.ceil(x)))
    return n if n % 2 == 1 else n + 1


def default_trend_span(period: int, seasonal_span: int) -> int:
    return _odd_at_least(1.5 * period / (1.0 - 1.5 / seasonal_span))


def default_lowpass_span(period: int) -> int:
    return _odd_at_least(float(period))


@dataclass
class StlConfig:
    period: int = 24
    inner_iterations: int = 2
    seasonal_loess_span: int = 7
    trend_loess_span: Optional[int] = None      # default derived from period
    lowpass_loess_span: Optional[int] = None    # default derived from period

    def __post_init__(self):
        if self.period < 2:
            raise DataError("period must be at least 2")
        if self.inner_iterations < 1:
            raise DataError("inner_iterations must be at least 1")
        if self.trend_loess_span is None:
            self.trend_loess_span = default_trend_span(self.period, self.seasonal_loess_span)
        if self.lowpass_loess_span is None:
            self.lowpass_loess_span = default_lowpass_span(self.period)
        for name in ("seasonal_loess_span", "trend_loess_span", "lowpass_loess_span"):
            v = getattr(self, name)
            if v < 3 or v % 2 == 0:
                raise DataError(f"{name} must be an odd integer >= 3, got {v}")


@dataclass
class StlDecomposition:
    y: np.ndarray
    trend: np.ndarray
    seasonal: np.ndarray
    residual: np.ndarray


@dataclass(frozen=True)
class InjectionConfig:
    weight: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.weight) or self.weight < 0:
            raise DataError("injection weight must be finite and non-negative")


def _loess_at(y: np.ndarray, positions: np.ndarray, span: int) -> np.ndarray:
    """Degree-1 local regression of ``y`` (sampled at 0..n-1), evaluated at
    ``positions`` (which may lie one step outside the sample range).

    Each evaluation fits a weighted least-squares line over the ``span``
    nearest sample indices with tricube weights on distance normalized by
    the window's farthest point.  A degenerate fit (all weight on one
    point) falls back to the weighted mean.
    """
    n = len(y)
    span = min(span, n)
    if span % 2 == 0:
        span -= 1
    span = max(span, 1)
    half = span // 2
    lo = np.clip(positions - half, 0, n - span)
    idx = lo[:, None] + np.arange(span)[None, :]        # (m, span)
    t = (idx - positions[:, None]).astype(np.float64)   # offset from eval point
    d = np.abs(t)
    dmax = d.max(axis=1, keepdims=True)
    dmax[dmax == 0.0] = 1.0
    w = (1.0 - (d / dmax) ** 3) ** 3
    np.clip(w, 0.0, None, out=w)
    # a window can lose all its weight (single far point); use a plain mean there
    dead = w.sum(axis=1) == 0.0
    if dead.any():
        w[dead] = 1.0
    yy = y[idx]
    s0 = w.sum(axis=1)
    s1 = (w * t).sum(axis=1)
    s2 = (w * t * t).sum(axis=1)
    sy = (w * yy).sum(axis=1)
    sty = (w * t * yy).sum(axis=1)
    det = s0 * s2 - s1 * s1
    mean = sy / s0
    with np.errstate(divide="ignore", invalid="ignore"):
        b0 = (s2 * sy - s1 * sty) / det
    ok = np.abs(det) > 1e-12 * (s0 * s2 + 1e-300)
    return np.where(ok, b0, mean)


def loess_smooth(series, span: int, degree: int = 1) -> np.ndarray:
    """LOESS-smooth a regularly sampled series at its own sample points."""
    y = np.asarray(series, dtype=np.float64)
    if degree != 1:
        raise DataError("only degree-1 smoothing is supported")
    n = len(y)
    if n < 2:
        return y.copy()
    return _loess_at(y, np.arange(n), span)


def _moving_average(x: np.ndarray, window: int) -> np.ndarray:
    return np.convolve(x, np.full(window, 1.0 / window), mode="valid")


def _smooth_cycle_subseries(c: np.ndarray, period: int, span: int) -> np.ndarray:
    """Smooth each cycle-subseries of ``c`` and extend it one cycle forward
    and backward, returning the reassembled extended series (len + 2·period)."""
    n = len(c)
    ext = np.empty(n + 2 * period, dtype=np.float64)
    for s in range(period):
        sub = c[s::period]
        m = len(sub)
        # positions -1..m: one extra cycle at each end; slot s+k*period of the
        # extended series is subseries position k-1
        ext[s::period] = _loess_at(sub, np.arange(-1, m + 1), span)
    return ext


def _lowpass(c_ext: np.ndarray, period: int, span: int) -> np.ndarray:
    x = _moving_average(c_ext, period)
    x = _moving_average(x, period)
    x = _moving_average(x, 3)
    return loess_smooth(x, span)


def stl_decompose(y, cfg: StlConfig = None) -> StlDecomposition:
    """STL inner loop over a series; see the module docstring.

    Requires at least two full cycles of data.
    """
    if cfg is None:
        cfg = StlConfig()
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if n < 2 * cfg.period:
        raise DataError(
            f"series of length {n} is too short to decompose: need at least 2*period = {2 * cfg.period}"
        )
    p = cfg.period
    trend = np.zeros(n, dtype=np.float64)
    seasonal = np.zeros(n, dtype=np.float64)
    for _ in range(cfg.inner_iterations):
        detrended = y - trend
        c_ext = _smooth_cycle_subseries(detrended, p, cfg.seasonal_loess_span)
        low = _lowpass(c_ext, p, cfg.lowpass_loess_span)
        seasonal = c_ext[p : p + n] - low
        trend = loess_smooth(y - seasonal, cfg.trend_loess_span)
    residual = _exact_remainder(y, trend, seasonal)
    return StlDecomposition(y=y, trend=trend, seasonal=seasonal, residual=residual)


def _exact_remainder(y: np.ndarray, trend: np.ndarray, seasonal: np.ndarray) -> np.ndarray:
    """Residual making ``trend + seasonal + residual`` reproduce ``y`` bitwise
    under left-to-right evaluation wherever a representable residual exists.

    ``fl(y - q)`` (with q = trend + seasonal) is the float closest to the
    true remainder, so if *any* float reconstructs y exactly it must be that
    value or one of its two neighbours; all three are tried.  No exact
    residual can exist once |remainder| outgrows |y| with unlucky low bits
    (the sum then lives on a coarser grid than y), which only happens when
    the fit error exceeds the data itself; those elements keep the nearest
    value and reconstruct to within one ulp.
    """
    q = trend + seasonal
    residual = y - q
    recon = q + residual
    for i in np.nonzero(recon != y)[0]:
        r0 = residual[i]
        for r in (np.nextafter(r0, -np.inf), np.nextafter(r0, np.inf)):
            if q[i] + r == y[i]:
                residual[i] = r
                break
    return residual


def inject_period(traj: Trajectory, cfg: StlConfig = None, inj: InjectionConfig = InjectionConfig()) -> Trajectory:
    """Add the seasonal component of the timestamp series back onto the
    timestamps: t̂s_i = ts_i + w·S_i.

    Trajectories shorter than two periods are returned unchanged.
    """
    if cfg is None:
        cfg = StlConfig()
    if len(traj) < 2 * cfg.period:
        return traj
    ts = np.array([pt.ts for pt in traj.points], dtype=np.float64)
    dec = stl_decompose(ts, cfg)
    adjusted = ts + inj.weight * dec.seasonal
    points = [GpsPoint(pt.id, pt.lat, pt.lon, float(t)) for pt, t in zip(traj.points, adjusted)]
    return Trajectory(traj.traj_id, points, traj.mode)
