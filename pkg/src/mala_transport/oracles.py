"""Semi-analytic reference values for one-dimensional periodic potentials.

Potentials are passed either as objects with a ``derivative(q, order)``
method and a ``period`` attribute (e.g. ``TrigPotential1D``) or as plain
vectorized callables on ``[0, L)``; derivatives of the latter are taken
spectrally on the grid. All averages use the trapezoidal rule on a uniform
periodic grid, which is spectrally accurate for smooth periodic integrands.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dynamics import RngStream


@dataclass(frozen=True)
class GridFunction1D:
    """Values on the uniform grid ``x_i = i L / n_grid``."""

    L: float
    n_grid: int
    values: np.ndarray

    def __post_init__(self):
        if self.n_grid < 16:
            raise ValueError(f"n_grid must be at least 16, got {self.n_grid}")
        if len(self.values) != self.n_grid:
            raise ValueError("values must have one entry per node")

    @property
    def h(self) -> float:
        return self.L / self.n_grid

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_grid) * self.h

    def integral(self) -> float:
        return float(np.sum(self.values) * self.h)


def _period(V, L):
    if L is not None:
        return float(L)
    return float(getattr(V, "period", 1.0))


def _check_grid(n_grid):
    if n_grid < 16 or n_grid % 2:
        raise ValueError(f"n_grid must be even and at least 16, got {n_grid}")


def _derivatives(V, x, L, orders):
    """``[V^(k)(x) for k in orders]`` on the uniform grid ``x``."""
    if hasattr(V, "derivative"):
        out = [np.asarray(V.derivative(x, k), dtype=float) for k in orders]
    else:
        v = np.asarray(V(x), dtype=float) * np.ones_like(x)
        if not np.all(np.isfinite(v)):
            raise ValueError("potential is not finite on the grid")
        n = len(x)
        ik = 2j * np.pi * np.fft.rfftfreq(n, d=L / n)
        if n % 2 == 0:
            ik[-1] = 0.0  # drop the unpaired Nyquist mode for odd derivatives
        vh = np.fft.rfft(v)
        out = [v if k == 0 else np.fft.irfft(vh * ik**k, n) for k in orders]
    for f in out:
        if not np.all(np.isfinite(f)):
            raise ValueError("potential is not finite on the grid")
    return out


def _grid(n_grid, L):
    return np.arange(n_grid) * (L / n_grid)


def lifson_jackson_1d(V, beta: float = 1.0, n_grid: int = 4096, L: float | None = None) -> float:
    """Continuous-limit diffusion ``1 / (<e^{beta V}> <e^{-beta V}>)``.

    Both averages are over the uniform measure on one period. ``V`` and
    ``V + c`` give the same value.
    """
    _check_grid(n_grid)
    L = _period(V, L)
    (v,) = _derivatives(V, _grid(n_grid, L), L, (0,))
    bv = beta * (v - v.mean())  # shift for overflow safety
    return float(1.0 / (np.mean(np.exp(bv)) * np.mean(np.exp(-bv))))


def gibbs_density_1d(V, beta: float = 1.0, n_grid: int = 4096,
                     L: float | None = None) -> GridFunction1D:
    """Normalized ``e^{-beta V} / Z`` on the grid."""
    _check_grid(n_grid)
    L = _period(V, L)
    (v,) = _derivatives(V, _grid(n_grid, L), L, (0,))
    w = np.exp(-beta * (v - v.min()))
    return GridFunction1D(L, n_grid, w / (np.sum(w) * L / n_grid))


def gibbs_average_1d(V, f, beta: float = 1.0, n_grid: int = 4096, L: float | None = None) -> float:
    """``<f>_mu`` by quadrature; ``f`` is evaluated on the grid nodes."""
    rho = gibbs_density_1d(V, beta, n_grid, L)
    return float(np.sum(rho.values * f(rho.nodes)) * rho.h)


def poisson_gk_oracle_1d(V, beta: float = 1.0, n_grid: int = 4096, L: float | None = None) -> float:
    """Continuous-limit diffusion from the Poisson equation ``L Phi = -V'``.

    Solves ``Phi'' - beta V' Phi' = -V'`` with centered differences and the
    gauge ``<Phi>_mu = 0`` (bordered system), then returns
    ``1 - beta^2 <Phi, V'>_mu``.
    """
    _check_grid(n_grid)
    L = _period(V, L)
    x = _grid(n_grid, L)
    v, dv = _derivatives(V, x, L, (0, 1))
    h = L / n_grid
    n = n_grid
    i = np.arange(n)
    rows = np.concatenate([i, i, i])
    cols = np.concatenate([(i + 1) % n, (i - 1) % n, i])
    vals = np.concatenate([1 / h**2 - beta * dv / (2 * h),
                           1 / h**2 + beta * dv / (2 * h),
                           np.full(n, -2 / h**2)])
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    mu = np.exp(-beta * (v - v.min()))
    mu /= mu.sum()
    B = sp.bmat([[A, sp.csr_matrix(np.ones((n, 1)))],
                 [sp.csr_matrix(mu[None, :]), None]], format="csc")
    with np.errstate(all="raise"):
        try:
            sol = spla.spsolve(B, np.concatenate([-dv, [0.0]]))
        except (FloatingPointError, RuntimeError) as exc:
            raise np.linalg.LinAlgError("singular Poisson system") from exc
    if not np.all(np.isfinite(sol)):
        raise np.linalg.LinAlgError("singular Poisson system")
    phi = sol[:n]
    return float(1.0 - beta**2 * (mu @ (phi * dv)))


# --------------------------------------------------------------------------
# rejection-rate diagnostics


def _xi_from_derivatives(d1, d2, d3, G, beta):
    # beta enters through V -> beta V
    return (-(math.sqrt(2) / 6) * beta * d3 * G**3
            + (math.sqrt(2) / 2) * beta**2 * d1 * d2 * G)


def xi(q, G, V, beta: float = 1.0):
    """Leading term of ``alpha / dt^{3/2}`` for a Metropolized step from ``q``.

    ``xi(q, G) = -(sqrt 2 / 6) V'''(q) G^3 + (sqrt 2 / 2) V'(q) V''(q) G``
    at ``beta = 1``. ``V`` needs a ``derivative(q, order)`` method.
    """
    if not hasattr(V, "derivative"):
        raise TypeError("xi needs a potential with analytic derivatives")
    q = np.asarray(q, dtype=float)
    d1, d2, d3 = (V.derivative(q, k) for k in (1, 2, 3))
    out = _xi_from_derivatives(d1, d2, d3, np.asarray(G, dtype=float), beta)
    return float(out) if np.ndim(out) == 0 else out


def xi_bar_average(V, beta: float = 1.0, n_mc: int = 100_000, n_grid: int = 1024,
                   L: float | None = None, seed: int = 0, return_stderr: bool = False,
                   chunk: int = 64):
    """Gibbs average of ``xi_bar(q) = E_G[max(0, xi(q, G))]``.

    The same ``n_mc`` Gaussian draws are used at every node. With
    ``return_stderr`` the Monte Carlo standard error over the draws is also
    returned.
    """
    if n_mc < 10_000:
        raise ValueError(f"n_mc must be at least 1e4, got {n_mc}")
    _check_grid(n_grid)
    L = _period(V, L)
    x = _grid(n_grid, L)
    d1, d2, d3 = _derivatives(V, x, L, (1, 2, 3))
    rho = gibbs_density_1d(V, beta, n_grid, L)
    w = rho.values * rho.h
    G = RngStream(seed, (11,)).normal(n_mc)
    per_draw = np.zeros(n_mc)
    for s in range(0, n_grid, chunk):
        sl = slice(s, s + chunk)
        vals = _xi_from_derivatives(d1[sl, None], d2[sl, None], d3[sl, None], G[None, :], beta)
        per_draw += w[sl] @ np.maximum(vals, 0.0)
    mean = float(per_draw.mean())
    if return_stderr:
        return mean, float(per_draw.std(ddof=1) / math.sqrt(n_mc))
    return mean


# --------------------------------------------------------------------------
# finite time step


@dataclass(frozen=True)
class DiscreteTransport:
    """Exact finite-``dt`` quantities of the Metropolized chain on a grid."""

    dt: float
    green_kubo: float  # truncated at tau, rectangle rule; nan if tau is None
    einstein: float  # long-time limit of MSD / (2 t)
    rejection_rate: float


def discrete_transport_1d(V, beta: float, dt: float, n_grid: int = 1000,
                          tau: float | None = None, L: float | None = None) -> DiscreteTransport:
    """Transition matrix of the Metropolized scheme discretized on a grid.

    The proposal density is integrated over enough periodic images that the
    Gaussian tail is negligible. Memory is ``O(n_grid^2)``.
    """
    from .ensemble import n_lag_steps

    if n_grid < 16:
        raise ValueError("n_grid must be at least 16")
    L = _period(V, L)
    h = L / n_grid
    x = _grid(n_grid, L)
    v, g = _derivatives(V, x, L, (0, 1))
    v, g = beta * v, beta * g
    kmax = int(math.ceil(12 * math.sqrt(2 * dt) / L)) + 1
    P = np.zeros((n_grid, n_grid))
    Pd = np.zeros_like(P)
    Pd2 = np.zeros_like(P)
    for k in range(-kmax, kmax + 1):
        d = x[None, :] + k * L - x[:, None]
        T = np.exp(-(d + dt * g[:, None]) ** 2 / (4 * dt)) / math.sqrt(4 * math.pi * dt)
        a = (v[None, :] - v[:, None]) - 0.5 * d * (g[None, :] + g[:, None]) \
            + 0.25 * dt * (g[None, :] ** 2 - g[:, None] ** 2)
        w = T * np.exp(-np.maximum(a, 0.0)) * h
        P += w
        Pd += w * d
        Pd2 += w * d * d
    rej = 1.0 - P.sum(axis=1)
    P[np.diag_indices(n_grid)] += rej
    mu = np.exp(-(v - v.min()))
    mu /= mu.sum()
    # (I - P + 1 mu^T) is invertible and maps mean-zero to mean-zero
    A = np.eye(n_grid) - P + np.outer(np.ones(n_grid), mu)
    dbar = Pd.sum(axis=1)
    einstein = (mu @ Pd2.sum(axis=1) + 2 * (mu @ Pd) @ np.linalg.solve(A, dbar)) / (2 * dt)
    gk = math.nan
    if tau is not None:
        acc, f = 0.0, g.copy()
        for _ in range(n_lag_steps(tau, dt) + 1):
            acc += mu @ (g * f)
            f = P @ f
        gk = 1.0 - dt * acc
    return DiscreteTransport(dt, float(gk), float(einstein), float(mu @ rej))
