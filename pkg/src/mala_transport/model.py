"""Periodic boxes, potential-energy models and minimum-image geometry.

All potentials work on flat coordinate arrays of shape ``(..., d*N)`` so that
an ensemble of replicas can be evaluated in a single vectorized call. Each
leading index is treated independently; no reduction mixes replicas.

Units are Lennard-Jones reduced units (epsilon = sigma = mass = 1) unless the
parameters say otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class SingularityError(ArithmeticError):
    """Two interaction centres came closer than the overlap floor.

    Attributes:
        pair: ``(i, j)`` particle indices; ``j == -1`` denotes the fixed ion.
        replica: index along the leading batch axis, or ``None`` for a single
            configuration.
        distance: the offending separation.
    """

    def __init__(self, pair, distance, replica=None):
        self.pair = pair
        self.distance = distance
        self.replica = replica
        who = "ion" if pair[1] == -1 else f"particle {pair[1]}"
        where = "" if replica is None else f" in replica {replica}"
        super().__init__(
            f"particle {pair[0]} and {who} overlap at r={distance:.3e}{where}"
        )


@dataclass(frozen=True)
class SimulationBox:
    """Cubic periodic box of edge ``length`` holding ``n_particles`` in ``dim`` dimensions."""

    length: float
    dim: int = 1
    n_particles: int = 1

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError(f"box length must be positive, got {self.length}")
        if self.dim not in (1, 3):
            raise ValueError(f"dim must be 1 or 3, got {self.dim}")
        if self.n_particles < 1:
            raise ValueError(f"n_particles must be >= 1, got {self.n_particles}")

    @property
    def n_coords(self) -> int:
        return self.dim * self.n_particles

    @classmethod
    def from_density(cls, n_particles: int, density: float, dim: int = 3) -> "SimulationBox":
        return cls(length=(n_particles / density) ** (1.0 / dim), dim=dim, n_particles=n_particles)


@dataclass
class Configuration:
    """Wrapped particle positions, every coordinate in ``[0, box.length)``."""

    box: SimulationBox
    positions: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1)
        if self.positions.shape != (self.box.n_coords,):
            raise ValueError(
                f"expected {self.box.n_coords} coordinates, got {self.positions.size}"
            )
        if not np.all((self.positions >= 0.0) & (self.positions < self.box.length)):
            raise ValueError("configuration has coordinates outside [0, L)")

    def copy(self) -> "Configuration":
        return Configuration(self.box, self.positions.copy())


def minimum_image(box: SimulationBox, delta):
    """Map a coordinate difference to its representative in ``[-L/2, L/2)``.

    The half-box tie goes to ``-L/2``.
    """
    L = box.length
    delta = np.asarray(delta, dtype=float)
    out = delta - L * np.floor(delta / L + 0.5)
    # rounding in the floor argument can land exactly on +L/2
    out = np.where(out >= 0.5 * L, out - L, out)
    out = np.where(out < -0.5 * L, out + L, out)
    return out if out.ndim else float(out)


def wrap(box: SimulationBox, x):
    """Reduce every coordinate modulo ``L`` into ``[0, L)``."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot wrap non-finite coordinates")
    out = wrap_unchecked(box.length, x)
    return out if out.ndim else float(out)


def wrap_unchecked(L: float, x):
    """:func:`wrap` without the finiteness check; returns a new array."""
    out = np.atleast_1d(x - L * np.floor(x / L))
    # rounding can leave -tiny or exactly L
    out[out < 0.0] += L
    out[out >= L] = 0.0
    return out.reshape(np.shape(x))


# --------------------------------------------------------------------------
# potentials


class PotentialModel:
    """Energy/gradient capability on flat coordinate arrays.

    Subclasses implement :meth:`energy_gradient`. ``smoothness`` records the
    regularity at cutoffs; every model here is at least C1.
    """

    box: SimulationBox
    smoothness = "C1"
    pair_only = False

    def energy_gradient(self, x):
        raise NotImplementedError

    def energy(self, x):
        return self.energy_gradient(x)[0]

    def gradient(self, x):
        return self.energy_gradient(x)[1]

    def initial_positions(self) -> np.ndarray:
        return np.zeros(self.box.n_coords)


@dataclass
class FlatPotential(PotentialModel):
    """Constant potential ``V = value``: free Brownian motion."""

    box: SimulationBox = field(default_factory=lambda: SimulationBox(1.0))
    value: float = 0.0
    smoothness = "Cinf"

    def energy_gradient(self, x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], self.value), np.zeros_like(x)


@dataclass
class TrigPotential1D(PotentialModel):
    """Separable trigonometric polynomial on the torus of period ``period``.

    Each coordinate feels
    ``v(q) = sum_k a_k cos(2 pi k q / L) + b_k sin(2 pi k q / L)`` for
    ``k = 1..K``; the total energy is the sum over coordinates. Analytic
    derivatives of any order are available through :meth:`derivative`, which
    the oracles use.
    """

    cos_coeffs: tuple = (1.0,)
    sin_coeffs: tuple = ()
    period: float = 1.0
    n_coords: int = 1
    smoothness = "Cinf"

    def __post_init__(self):
        K = max(len(self.cos_coeffs), len(self.sin_coeffs))
        self._a = np.zeros(K)
        self._b = np.zeros(K)
        self._a[: len(self.cos_coeffs)] = self.cos_coeffs
        self._b[: len(self.sin_coeffs)] = self.sin_coeffs
        self._k = 2.0 * np.pi * np.arange(1, K + 1) / self.period
        self.box = SimulationBox(self.period, 1, self.n_coords)

    @classmethod
    def cosine(cls, amplitude: float = 1.0, n_coords: int = 1) -> "TrigPotential1D":
        """``V(q) = amplitude * cos(2 pi q)`` on the unit torus."""
        return cls(cos_coeffs=(amplitude,), n_coords=n_coords)

    def __call__(self, q):
        return self.derivative(q, 0)

    def derivative(self, q, order: int = 1):
        """``order``-th derivative of the single-coordinate profile ``v``."""
        q = np.asarray(q, dtype=float)
        phase = q[..., None] * self._k
        c, s = np.cos(phase), np.sin(phase)
        # d/dq cos = -k sin, d/dq sin = k cos; cycle of period 4
        kn = self._k**order
        r = order % 4
        if r == 0:
            terms = self._a * c + self._b * s
        elif r == 1:
            terms = -self._a * s + self._b * c
        elif r == 2:
            terms = -self._a * c - self._b * s
        else:
            terms = self._a * s - self._b * c
        return np.sum(kn * terms, axis=-1)

    def energy_gradient(self, x):
        x = np.asarray(x, dtype=float)
        if len(self._k) == 1:
            # fast path for the plain cosine
            phase = self._k[0] * x
            c, s = np.cos(phase), np.sin(phase)
            v = self._a[0] * c + self._b[0] * s
            dv = self._k[0] * (self._b[0] * c - self._a[0] * s)
        else:
            v = self.derivative(x, 0)
            dv = self.derivative(x, 1)
        return np.sum(v, axis=-1), dv


def cosine_potential(q):
    """``(cos(2 pi q), -2 pi sin(2 pi q))`` on the unit torus."""
    return math.cos(2 * math.pi * q), -2 * math.pi * math.sin(2 * math.pi * q)


# --------------------------------------------------------------------------
# pair potentials, C1-truncated by subtracting the value and the tangent at
# the cutoff: v(r) = u(r) - u(rc) - u'(rc) (r - rc) for r < rc, else 0.


@dataclass(frozen=True)
class LJParams:
    epsilon: float = 1.0
    sigma: float = 1.0
    r_cut: float = 1.76

    def __post_init__(self):
        for name in ("epsilon", "sigma", "r_cut"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.r_cut > self.sigma:
            raise ValueError("r_cut must exceed sigma")


@dataclass(frozen=True)
class IonParams:
    e_min: float = 0.8347
    kappa: float = 1.7025
    sigma: float = 1.0
    r_cut: float = 1.76
    position: tuple | None = None  # None: box centre

    def __post_init__(self):
        for name in ("e_min", "kappa", "sigma", "r_cut"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.r_cut > self.sigma:
            raise ValueError("r_cut must exceed sigma")
        if not (1 + self.kappa * self.sigma) / 24 < 1:
            raise ValueError("(1 + kappa*sigma)/24 must be < 1")


def _lj_raw(r, p: LJParams):
    sr6 = (p.sigma / r) ** 6
    u = 4 * p.epsilon * (sr6 * sr6 - sr6)
    du = 4 * p.epsilon * (-12 * sr6 * sr6 + 6 * sr6) / r
    return u, du


def _ion_raw(r, p: IonParams):
    a = (1 + p.kappa * p.sigma) / 24
    pref = p.e_min / (1 - a)
    s24 = (p.sigma / r) ** 24
    yuk = (p.sigma / r) * np.exp(-p.kappa * (r - p.sigma))
    u = pref * (a * s24 - yuk)
    du = pref * (-24 * a * s24 / r + yuk * (1 / r + p.kappa))
    return u, du


def _truncate(raw, r, p):
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("pair distance must be positive")
    v, dv = _pair_arrays(raw, r, p)
    if v.ndim == 0:
        return float(v), float(dv)
    return v, dv


def lj_pair(r, p: LJParams = LJParams()):
    """Truncated Lennard-Jones energy and radial derivative at distance ``r``."""
    return _truncate(_lj_raw, r, p)


def ion_pair(r, p: IonParams = IonParams()):
    """Truncated repulsion plus screened-Coulomb attraction at distance ``r``."""
    return _truncate(_ion_raw, r, p)


def ion_pair_untruncated(r, p: IonParams = IonParams()):
    return _ion_raw(np.asarray(r, dtype=float), p)


@dataclass
class SolvatedIonPotential(PotentialModel):
    """N solvent particles with pairwise LJ plus a fixed central ion.

    Either interaction may be disabled by passing ``None``. Pair distances use
    the minimum image; the ion distance does too unless
    ``ion_minimum_image=False``, in which case the raw coordinate difference
    is used (identical for wrapped positions when the ion sits at the centre
    and ``r_cut <= L/2``).
    """

    box: SimulationBox
    lj: LJParams | None = LJParams()
    ion: IonParams | None = IonParams()
    ion_minimum_image: bool = True
    overlap_floor: float = 1e-8

    def __post_init__(self):
        if self.lj is None and self.ion is None:
            raise ValueError("at least one interaction must be enabled")
        d = self.box.dim
        if self.ion is not None:
            pos = self.ion.position
            if pos is None:
                pos = (0.5 * self.box.length,) * d
            self.ion_position = np.asarray(pos, dtype=float)
            if self.ion_position.shape != (d,):
                raise ValueError("ion position must have box.dim components")
        self.pair_only = self.ion is None

    def _particles(self, x):
        x = np.asarray(x, dtype=float)
        return x.reshape(x.shape[:-1] + (self.box.n_particles, self.box.dim))

    def _check_floor(self, r, sigma, ion=False):
        bad = r < self.overlap_floor * sigma
        if not np.any(bad):
            return
        idx = tuple(int(k) for k in np.argwhere(bad)[0])
        if ion:
            batch, pair = idx[:-1], (idx[-1], -1)
        else:
            batch, pair = idx[:-2], (idx[-2], idx[-1])
        replica = int(np.ravel_multi_index(batch, r.shape[: len(batch)])) if batch else None
        raise SingularityError(pair, float(r[idx]), replica)

    def energy_gradient(self, x):
        pos = self._particles(x)
        N = self.box.n_particles
        V = np.zeros(pos.shape[:-2])
        grad = np.zeros_like(pos)
        if self.lj is not None and N > 1:
            diff = minimum_image(self.box, pos[..., :, None, :] - pos[..., None, :, :])
            r = np.sqrt(np.sum(diff * diff, axis=-1))
            eye = np.eye(N, dtype=bool)
            r = np.where(eye, np.inf, r)
            self._check_floor(r, self.lj.sigma)
            v, dv = _pair_arrays(_lj_raw, r, self.lj)
            V = V + 0.5 * np.sum(v, axis=(-2, -1))
            grad += np.sum((dv / r)[..., None] * diff, axis=-2)
        if self.ion is not None:
            diff = pos - self.ion_position
            if self.ion_minimum_image:
                diff = minimum_image(self.box, diff)
            r = np.sqrt(np.sum(diff * diff, axis=-1))
            self._check_floor(r, self.ion.sigma, ion=True)
            v, dv = _pair_arrays(_ion_raw, r, self.ion)
            V = V + np.sum(v, axis=-1)
            grad += (dv / r)[..., None] * diff
        return V, grad.reshape(np.shape(x))

    def initial_positions(self) -> np.ndarray:
        sigma = self.ion.sigma if self.ion is not None else 0.0
        return lattice_positions(self.box, getattr(self, "ion_position", None), sigma)


def _pair_arrays(raw, r, p):
    # r = inf (self-pairs) contributes nothing
    uc, duc = raw(np.float64(p.r_cut), p)
    inside = r < p.r_cut
    rr = np.where(inside, r, p.r_cut)
    with np.errstate(over="ignore"):
        u, du = raw(rr, p)
    v = np.where(inside, u - uc - duc * (rr - p.r_cut), 0.0)
    dv = np.where(inside, du - duc, 0.0)
    return v, dv


def system_energy_gradient(config: Configuration, pair: LJParams | None = None,
                           ion: IonParams | None = None, **kwargs):
    """Total energy and gradient of ``config`` under the enabled interactions."""
    pot = SolvatedIonPotential(config.box, lj=pair, ion=ion, **kwargs)
    return pot.energy_gradient(config.positions)


def lattice_positions(box: SimulationBox, avoid=None, min_distance: float = 0.0) -> np.ndarray:
    """Place particles on a cubic sub-lattice, skipping sites near ``avoid``.

    Sites sit at cell centres ``(i + 1/2) L / n``; the first ``N`` admissible
    sites in lexicographic order are used.
    """
    N, d, L = box.n_particles, box.dim, box.length
    n_side = 1
    while True:
        h = L / n_side
        grid = (np.arange(n_side) + 0.5) * h
        sites = np.stack(np.meshgrid(*([grid] * d), indexing="ij"), axis=-1).reshape(-1, d)
        if avoid is not None:
            dist = np.linalg.norm(minimum_image(box, sites - avoid), axis=-1)
            # the exact centre always goes, as do sites inside min_distance
            sites = sites[(dist > 1e-12) & (dist >= min_distance)]
        if len(sites) >= N:
            return wrap(box, sites[:N].reshape(-1))
        n_side += 1
