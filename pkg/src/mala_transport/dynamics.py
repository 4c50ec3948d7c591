"""One-step transition kernels for overdamped Langevin dynamics.

The Euler-Maruyama increment is ``-beta*dt*grad V(q) + sqrt(2 dt) G``. The
Metropolized scheme accepts it with probability ``min(1, exp(-alpha))``;
``alpha`` is evaluated in its expanded form, which only needs the increment
itself, the two energies and the two gradients:

    alpha = beta (V' - V) - beta/2 <q' - q, g' + g> + beta^2 dt/4 (|g'|^2 - |g|^2)

The state is carried twice: the unwrapped lift ``Q`` (never reduced modulo
the box, it accumulates the increments) and the wrapped ``q = wrap(Q)`` at
which the potential is evaluated. Because ``q`` is always recomputed from
``Q``, ``wrap(Q0 + sum of increments)`` equals the current configuration
bitwise.

Every step consumes, in this order, a ``(rows, d*N)`` block of standard
normals (numpy's ziggurat) and ``rows`` uniforms on ``[0, 1)`` from a PCG64
stream. The plain Euler-Maruyama step draws (and ignores) the uniforms too,
so both schemes walk the same path until the first rejection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import Configuration, PotentialModel, SimulationBox, wrap_unchecked


@dataclass(frozen=True)
class DynamicsParams:
    beta: float = 1.0
    dt: float = 0.01

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")


class RngStream:
    """Seeded PCG64 generator addressed by ``(seed, key)``.

    Streams with the same seed and different keys are independent
    (``SeedSequence`` spawn keys), so a replica block's randomness depends
    only on its own index.
    """

    def __init__(self, seed: int = 0, key: tuple = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def child(self, *key) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(key))

    def normal(self, shape):
        return self.generator.standard_normal(shape)

    def uniform(self, shape):
        return self.generator.random(shape)

    def draw_step(self, rows: int, n_coords: int):
        """Gaussian block and uniforms for one step of ``rows`` chains."""
        G = self.generator.standard_normal((rows, n_coords))
        U = self.generator.random(rows)
        return G, U


def derive_seed(seed: int, *key) -> int:
    """Deterministic 63-bit seed for the sub-experiment ``key`` of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass
class UnwrappedTracker:
    """Accumulated real-valued displacement, never reduced modulo the box."""

    Q: np.ndarray
    Q0: np.ndarray

    @classmethod
    def start(cls, positions) -> "UnwrappedTracker":
        positions = np.array(positions, dtype=float)
        return cls(positions.copy(), positions.copy())

    def add(self, increment):
        self.Q = self.Q + increment

    @property
    def displacement(self):
        return self.Q - self.Q0


@dataclass
class StepOutcome:
    proposal: np.ndarray
    log_acceptance: float
    accepted: bool
    increment: np.ndarray
    next: Configuration


# --------------------------------------------------------------------------
# formulas


def em_increment(grad, p: DynamicsParams, G):
    return -p.beta * p.dt * np.asarray(grad) + math.sqrt(2.0 * p.dt) * np.asarray(G)


def em_proposal(q, grad, p: DynamicsParams, G):
    """Euler-Maruyama proposal ``q - beta dt grad + sqrt(2 dt) G``."""
    return np.asarray(q, dtype=float) + em_increment(grad, p, G)


def acceptance_exponent(V, grad, V_new, grad_new, increment, p: DynamicsParams):
    """``alpha`` for the move ``q -> q + increment``; batched over leading axes."""
    b = p.beta
    cross = np.sum(increment * (grad_new + grad), axis=-1)
    sq = np.sum(grad_new * grad_new, axis=-1) - np.sum(grad * grad, axis=-1)
    return b * (V_new - V) - 0.5 * b * cross + 0.25 * b * b * p.dt * sq


def log_acceptance(q, q_prop, pot: PotentialModel, p: DynamicsParams) -> float:
    """Log of the Metropolis ratio, ``-alpha``, for the move ``q -> q_prop``."""
    q = np.asarray(q, dtype=float)
    q_prop = np.asarray(q_prop, dtype=float)
    V, g = pot.energy_gradient(q)
    Vp, gp = pot.energy_gradient(q_prop)
    _require_finite(V, Vp)
    return -acceptance_exponent(V, g, Vp, gp, q_prop - q, p)


def transition_log_density(q, q_prop, grad, p: DynamicsParams):
    """``log T(q, q_prop)`` of the Gaussian Euler-Maruyama kernel on R^{dN}."""
    q = np.asarray(q, dtype=float)
    n = q.shape[-1]
    r = np.asarray(q_prop) - q + p.beta * p.dt * np.asarray(grad)
    return -0.5 * n * math.log(4 * math.pi * p.dt) - np.sum(r * r, axis=-1) / (4 * p.dt)


def log_acceptance_direct(q, q_prop, pot: PotentialModel, p: DynamicsParams) -> float:
    """Same quantity as :func:`log_acceptance` from the ratio of densities.

    Subtracts two ``O(1/dt)`` terms; kept as an independent cross-check.
    """
    V, g = pot.energy_gradient(q)
    Vp, gp = pot.energy_gradient(q_prop)
    _require_finite(V, Vp)
    forward = -p.beta * V + transition_log_density(q, q_prop, g, p)
    backward = -p.beta * Vp + transition_log_density(q_prop, q, gp, p)
    return backward - forward


def _require_finite(*values):
    if not all(np.all(np.isfinite(v)) for v in values):
        raise FloatingPointError("non-finite energy in acceptance ratio")


def _wrap_fast(box: SimulationBox, x):
    return wrap_unchecked(box.length, x)


# --------------------------------------------------------------------------
# batched state


class ChainState:
    """Rows of independent chains: unwrapped lift, wrapped position, V and grad V."""

    def __init__(self, pot: PotentialModel, positions, unwrapped=None):
        self.pot = pot
        self.box = pot.box
        q = np.array(positions, dtype=float, ndmin=2)
        self.Q = q.copy() if unwrapped is None else np.array(unwrapped, dtype=float, ndmin=2)
        self.Q0 = self.Q.copy()
        self.q = _wrap_fast(self.box, self.Q.copy())
        self.V, self.grad = pot.energy_gradient(self.q)

    @property
    def rows(self) -> int:
        return self.Q.shape[0]

    def keep(self, rows):
        """Restrict the state to the given row indices."""
        for name in ("Q", "Q0", "q", "V", "grad"):
            setattr(self, name, getattr(self, name)[rows])

    def step(self, p: DynamicsParams, G, U, metropolize: bool = True):
        """Advance every row in place.

        Returns ``(accepted, increment, log_acceptance)``; the increment is
        zeroed on rejected rows.
        """
        delta = em_increment(self.grad, p, G)
        Q_new = self.Q + delta
        if not metropolize:
            with np.errstate(invalid="ignore", over="ignore"):
                q_new = _wrap_fast(self.box, Q_new)
            # evaluate first: a raising potential leaves the state untouched
            V_new, g_new = self.pot.energy_gradient(q_new)
            self.Q, self.q, self.V, self.grad = Q_new, q_new, V_new, g_new
            accepted = np.ones(self.rows, dtype=bool)
            return accepted, delta, np.zeros(self.rows)
        q_new = _wrap_fast(self.box, Q_new)
        V_new, g_new = self.pot.energy_gradient(q_new)
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            log_acc = -acceptance_exponent(self.V, self.grad, V_new, g_new, delta, p)
            # NaN or infinite exponents (wild proposals) are rejected, even for U = 0
            accepted = (np.log(U) <= log_acc) & np.isfinite(log_acc)
        acc2 = accepted[:, None]
        np.copyto(self.Q, Q_new, where=acc2)
        np.copyto(self.q, q_new, where=acc2)
        np.copyto(self.grad, g_new, where=acc2)
        np.copyto(self.V, V_new, where=accepted)
        delta[~accepted] = 0.0
        return accepted, delta, log_acc


# --------------------------------------------------------------------------
# single-configuration steps


def _single_step(config: Configuration, tracker: UnwrappedTracker | None,
                 pot: PotentialModel, p: DynamicsParams, rng: RngStream,
                 metropolize: bool) -> StepOutcome:
    lift = config.positions if tracker is None else tracker.Q
    state = ChainState(pot, config.positions[None, :], unwrapped=lift[None, :])
    G, U = rng.draw_step(1, config.box.n_coords)
    proposal = state.Q[0] + em_increment(state.grad[0], p, G[0])
    accepted, delta, log_acc = state.step(p, G, U, metropolize=metropolize)
    if tracker is not None and accepted[0]:
        tracker.Q = state.Q[0].copy()
    return StepOutcome(
        proposal=proposal,
        log_acceptance=float(log_acc[0]),
        accepted=bool(accepted[0]),
        increment=delta[0],
        next=Configuration(config.box, state.q[0].copy()),
    )


def mala_step(config: Configuration, tracker: UnwrappedTracker | None,
              pot: PotentialModel, p: DynamicsParams, rng: RngStream) -> StepOutcome:
    """One Metropolized Euler-Maruyama step.

    On rejection the configuration is repeated and the increment is zero.
    ``tracker`` (if given) is updated in place and supplies the unwrapped
    lift on which the proposal is built.
    """
    return _single_step(config, tracker, pot, p, rng, metropolize=True)


def em_step(config: Configuration, tracker: UnwrappedTracker | None,
            pot: PotentialModel, p: DynamicsParams, rng: RngStream) -> StepOutcome:
    """One plain Euler-Maruyama step (always accepted)."""
    return _single_step(config, tracker, pot, p, rng, metropolize=False)


def simulate_chain(pot: PotentialModel, p: DynamicsParams, positions, n_steps: int,
                   rng: RngStream, metropolize: bool = True, record_every: int = 1):
    """Run one chain and return ``(wrapped trajectory, n_rejected)``.

    The trajectory holds the initial state plus every ``record_every``-th
    state.
    """
    state = ChainState(pot, positions)
    n = pot.box.n_coords
    out = [state.q[0].copy()]
    rejected = 0
    for k in range(1, n_steps + 1):
        G, U = rng.draw_step(1, n)
        accepted, _, _ = state.step(p, G, U, metropolize)
        rejected += int(not accepted[0])
        if k % record_every == 0:
            out.append(state.q[0].copy())
    return np.array(out), rejected
