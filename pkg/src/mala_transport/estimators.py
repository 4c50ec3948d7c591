"""Diffusion estimates from MSD and force-correlation curves, and time-step sweeps.

Normalization: ``D = 1`` for a free particle. The Einstein routes divide the
mean-square displacement (summed over all ``d*N`` coordinates) by
``2 d N t``; the Green-Kubo route is ``1 - beta^2 dt / (d N) * sum_n C_n``.

Statistical errors are batch means over the statistic groups carried by the
curves (contiguous, i.i.d. blocks of replicas).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import DynamicsParams
from .ensemble import CorrelationCurve, MsdCurve, n_lag_steps
from .model import SimulationBox


@dataclass(frozen=True)
class DiffusionEstimate:
    value: float
    stat_err: float
    dt: float
    method: str  # einstein-slope | einstein-final-time | green-kubo


@dataclass(frozen=True)
class SweepFit:
    """``D(dt) ~ D0 + D1 dt`` and the fit residuals, one per point used."""

    D0: float
    D1: float
    residuals: np.ndarray
    D0_err: float = float("nan")
    D1_err: float = float("nan")

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residuals))) if len(self.residuals) else 0.0


def replica_stat_error(values) -> float:
    """Standard error of the mean: sample standard deviation over ``sqrt(M)``."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise ValueError("need at least two values for a standard error")
    return float(np.std(values, ddof=1) / math.sqrt(values.size))


def _group_error(estimates):
    return replica_stat_error(estimates) if len(estimates) >= 2 else 0.0


def _window(curve, window):
    n = len(curve.values)
    if window is None:
        start, stop = 0, n
    elif isinstance(window, slice):
        start, stop, _ = window.indices(n)
    else:
        start, stop = window
        stop = n if stop is None else min(stop, n)
    if stop - start < 2:
        raise ValueError("fit window needs at least two points")
    return start, stop


def msd_slope_fit(curve: MsdCurve, box: SimulationBox, window=None) -> DiffusionEstimate:
    """Least-squares line through the origin, ``MSD(t) ~ 2 d N D t``.

    ``window`` is a ``(start, stop)`` index pair or a slice; the default is the
    whole curve.
    """
    start, stop = _window(curve, window)
    t = curve.times[start:stop]
    tt = float(t @ t)
    if tt == 0.0:
        raise ValueError("fit window contains only t = 0")
    norm = 2.0 * box.n_coords * tt
    value = float(curve.values[start:stop] @ t) / norm
    groups = curve.group_means[:, start:stop] @ t / norm
    return DiffusionEstimate(value, _group_error(groups), curve.dt, "einstein-slope")


def einstein_final_time(curve: MsdCurve, box: SimulationBox, tau: float) -> DiffusionEstimate:
    """``MSD(floor(tau/dt)) / (2 d N tau)``."""
    n = n_lag_steps(tau, curve.dt)
    if not tau > 0 or n >= len(curve.values):
        raise ValueError(f"tau={tau} is outside the curve (t_max={curve.times[-1]})")
    norm = 2.0 * box.n_coords * tau
    groups = curve.group_means[:, n] / norm
    return DiffusionEstimate(float(curve.values[n]) / norm, _group_error(groups), curve.dt,
                             "einstein-final-time")


def green_kubo_sum(corr: CorrelationCurve, box: SimulationBox, p: DynamicsParams,
                   rule: str = "rectangle") -> DiffusionEstimate:
    """``1 - beta^2 dt/(d N) * sum_{n=0}^{floor(tau/dt)} C_n``.

    ``rule="rectangle"`` weights every lag by ``dt`` (the ``n = 0`` term
    included); ``rule="trapezoid"`` halves the two end weights.
    """
    if len(corr.values) == 0:
        raise ValueError("empty correlation curve")
    w = np.ones(len(corr.values))
    if rule == "trapezoid" and len(w) > 1:
        w[0] = w[-1] = 0.5
    elif rule != "rectangle" and rule != "trapezoid":
        raise ValueError(f"unknown quadrature rule {rule!r}")
    pref = p.beta**2 * corr.dt / box.n_coords
    value = 1.0 - pref * float(corr.values @ w)
    groups = 1.0 - pref * (corr.group_means @ w)
    return DiffusionEstimate(value, _group_error(groups), corr.dt, "green-kubo")


def loglog_slope(points) -> float:
    """Least-squares slope of ``log(rate)`` against ``log(dt)``."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) < 2:
        raise ValueError("need at least two (dt, rate) points")
    if np.any(pts[:, :2] <= 0):
        raise ValueError("log-log fit needs positive dt and rate")
    x, y = np.log(pts[:, 0]), np.log(pts[:, 1])
    x = x - x.mean()
    return float(x @ (y - y.mean()) / (x @ x))


def affine_fit(points, n_smallest: int | None = None) -> SweepFit:
    """Fit ``D(dt) = D0 + D1 dt`` by least squares.

    ``points`` holds ``(dt, D)`` or ``(dt, D, stat_err)`` rows. With errors the
    fit is weighted and ``D0_err``/``D1_err`` propagate them; without, they
    come from the residual scatter. Only the ``n_smallest`` smallest time
    steps are used when given.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) < 2:
        raise ValueError("need at least two (dt, D) points")
    pts = pts[np.argsort(pts[:, 0], kind="stable")]
    if n_smallest is not None:
        pts = pts[:n_smallest]
    dt, D = pts[:, 0], pts[:, 1]
    if np.ptp(dt) == 0:
        raise ValueError("all time steps are equal; the slope is undetermined")
    X = np.column_stack([np.ones_like(dt), dt])
    if pts.shape[1] > 2 and np.all(pts[:, 2] > 0):
        w = 1.0 / pts[:, 2] ** 2
        cov = np.linalg.inv(X.T @ (w[:, None] * X))
        coef = cov @ (X.T @ (w * D))
    else:
        cov = None
        coef = np.linalg.lstsq(X, D, rcond=None)[0]
    residuals = D - X @ coef
    if cov is None and len(D) > 2:
        s2 = residuals @ residuals / (len(D) - 2)
        cov = s2 * np.linalg.inv(X.T @ X)
    errs = np.sqrt(np.diag(cov)) if cov is not None else (math.nan, math.nan)
    return SweepFit(float(coef[0]), float(coef[1]), residuals, float(errs[0]), float(errs[1]))
