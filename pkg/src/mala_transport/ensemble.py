"""Replica preparation and trajectory orchestration.

Replicas are processed in fixed-size blocks. Block ``b`` owns two random
streams, ``(seed, 1, b)`` for preparation and ``(seed, 2, b)`` for the
production run, so the outcome depends only on ``(seed, plan, parameters)``:
the number of worker processes changes who computes a block, never what the
block computes. Blocks are reduced in index order.

For error bars the replicas are also split into ``n_groups`` contiguous
statistic groups; curves keep one row of sums per group so that estimators
can form batch-means errors after the fact for any fit window.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import ChainState, DynamicsParams, RngStream, UnwrappedTracker, derive_seed
from .model import PotentialModel, SingularityError

__all__ = [
    "BlowupError",
    "BlowupReport",
    "CorrelationCurve",
    "EnsemblePlan",
    "MsdCurve",
    "RejectionStats",
    "UnwrappedTracker",
    "compensated_sum",
    "detect_blowup",
    "n_lag_steps",
    "prepare_replicas",
    "run_einstein_ensemble",
    "run_gk_ensemble",
    "run_rejection_scan",
    "run_sequential_trajectories",
    "stability_study",
]

log = logging.getLogger(__name__)

PARALLEL = "parallel-replicas"
SEQUENTIAL = "sequential-trajectories"


@dataclass(frozen=True)
class EnsemblePlan:
    """How many replicas, how long, and how they are prepared.

    ``n_burnin`` Metropolized steps at ``dt_therm`` are applied to the initial
    state before the first replica; the default of zero keeps the first
    replica at the configured initial state.
    """

    n_replicas: int = 1000
    n_steps: int = 1000
    mode: str = PARALLEL
    dt_therm: float = 0.01
    n_therm: int = 10
    n_burnin: int = 0
    seed: int = 0
    scheme: str = "mala"
    block_size: int = 8192
    n_groups: int = 64
    workers: int = 1
    energy_threshold: float = 1e6
    displacement_threshold: float | None = None  # None: half the box, floored at 10 sqrt(2 dt)
    progress: bool = False

    def __post_init__(self):
        if self.n_replicas < 1:
            raise ValueError("n_replicas must be >= 1")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.mode not in (PARALLEL, SEQUENTIAL):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.scheme not in ("mala", "em"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.dt_therm > 0 or self.n_therm < 0 or self.n_burnin < 0:
            raise ValueError("invalid equilibration settings")
        if self.block_size < 1 or self.n_groups < 1 or self.workers < 1:
            raise ValueError("block_size, n_groups and workers must be >= 1")


def n_lag_steps(tau: float, dt: float) -> int:
    """``floor(tau/dt)``, robust to representation error (0.3/0.01 -> 30)."""
    return int(math.floor(tau / dt * (1 + 1e-12)))


@dataclass
class RejectionStats:
    proposals: int = 0
    rejections: int = 0

    @property
    def rate(self) -> float:
        return self.rejections / self.proposals if self.proposals else 0.0

    def __add__(self, other):
        return RejectionStats(self.proposals + other.proposals, self.rejections + other.rejections)


@dataclass
class _Curve:
    dt: float
    values: np.ndarray
    n_samples: int
    group_sums: np.ndarray = field(repr=False)
    group_counts: np.ndarray = field(repr=False)

    @property
    def group_means(self):
        return self.group_sums / self.group_counts[:, None]

    @property
    def stderr(self):
        """Batch-means standard error of ``values`` at every index."""
        g = self.group_means
        if len(g) < 2:
            return np.zeros_like(self.values)
        return np.std(g, axis=0, ddof=1) / math.sqrt(len(g))

    @property
    def times(self):
        return self.dt * np.arange(len(self.values))


class MsdCurve(_Curve):
    """Mean over replicas of ``sum_coords (Q_n - Q_0)^2``, ``n = 0..n_steps``."""

    @property
    def M(self):
        return self.n_samples


class CorrelationCurve(_Curve):
    """Mean over samples of ``grad V(q_n) . grad V(q_0)``, ``n = 0..floor(tau/dt)``."""

    @property
    def M(self):
        return self.n_samples


# --------------------------------------------------------------------------
# summation


def compensated_sum(rows, axis=0):
    """Neumaier-compensated sum of ``rows`` along ``axis``."""
    rows = np.moveaxis(np.asarray(rows, dtype=float), axis, 0)
    s = np.zeros(rows.shape[1:])
    c = np.zeros(rows.shape[1:])
    for x in rows:
        t = s + x
        big = np.abs(s) >= np.abs(x)
        c += np.where(big, (s - t) + x, (x - t) + s)
        s = t
    return s + c


# --------------------------------------------------------------------------
# blow-up detection


@dataclass(frozen=True)
class BlowupReport:
    step: int | None = None
    reason: str | None = None

    @property
    def stable(self) -> bool:
        return self.step is None


class BlowupError(RuntimeError):
    def __init__(self, replica, step, reason):
        self.replica, self.step, self.reason = replica, step, reason
        super().__init__(f"blow-up in replica {replica} at step {step}: {reason}")


def _blowup_flags(V, Q, delta, energy_threshold, displacement_threshold):
    """Per-row reason codes: 0 ok, 1 non-finite, 2 energy, 3 displacement."""
    with np.errstate(invalid="ignore"):
        nonfinite = ~(np.all(np.isfinite(Q), axis=-1) & np.isfinite(V))
        energy = V > energy_threshold
        jump = np.max(np.abs(delta), axis=-1) > displacement_threshold
    return np.where(nonfinite, 1, np.where(energy, 2, np.where(jump, 3, 0)))


_REASONS = {1: "non-finite", 2: "energy", 3: "displacement", 4: "singular"}


def detect_blowup(steps, energy_threshold: float = 1e6,
                  displacement_threshold: float = math.inf) -> BlowupReport:
    """Scan ``(energy, positions, increment)`` tuples for the first blow-up.

    The reported step is the 0-based index in ``steps``. Checks, in order:
    non-finite coordinates or energy, energy above ``energy_threshold``, any
    single-coordinate increment larger than ``displacement_threshold``.
    """
    for k, (V, x, delta) in enumerate(steps):
        code = int(_blowup_flags(np.asarray(V, float)[None], np.asarray(x, float)[None],
                                 np.asarray(delta, float)[None],
                                 energy_threshold, displacement_threshold)[0])
        if code:
            return BlowupReport(k, _REASONS[code])
    return BlowupReport()


# --------------------------------------------------------------------------
# blocks and groups


def _jump_threshold(plan, box, p):
    # never below 10 noise standard deviations, whatever the box
    base = plan.displacement_threshold or 0.5 * box.length
    return max(base, 10.0 * math.sqrt(2.0 * p.dt))


def _blocks(M, size):
    return [(a, min(a + size, M)) for a in range(0, M, size)]


def _group_ids(M, n_groups):
    G = min(n_groups, M)
    return np.arange(M) * G // M, G


def _log(plan, msg, *args):
    if plan.progress:
        log.info(msg, *args)


def _initial_state(pot, p_therm, plan, initial):
    x0 = np.array(pot.initial_positions() if initial is None else initial, dtype=float)
    if plan.n_burnin:
        rng = RngStream(plan.seed, (0,))
        state = ChainState(pot, x0)
        for _ in range(plan.n_burnin):
            G, U = rng.draw_step(1, x0.size)
            state.step(p_therm, G, U)
        x0 = state.q[0].copy()
    return x0


_CHUNK = 4096


def prepare_replicas(pot: PotentialModel, p: DynamicsParams, plan: EnsemblePlan,
                     initial=None) -> np.ndarray:
    """Initial configurations for ``plan.n_replicas`` replicas, shape ``(M, d*N)``.

    Within each block the first replica is the (burnt-in) initial state and
    replica ``k+1`` is replica ``k`` advanced by ``n_therm`` Metropolized
    steps at ``dt_therm``. All blocks are advanced together as rows of one
    vectorized chain. Each block stream is consumed in chunks of up to 4096
    steps: the chunk's normals first, then its uniforms. ``p`` supplies
    ``beta``.
    """
    p_therm = DynamicsParams(p.beta, plan.dt_therm)
    x0 = _initial_state(pot, p_therm, plan, initial)
    M, n = plan.n_replicas, x0.size
    blocks = _blocks(M, plan.block_size)
    out = np.empty((M, n))
    out[:] = x0  # n_therm = 0 leaves every replica at the initial state
    longest = max(b - a for a, b in blocks)
    total = (longest - 1) * plan.n_therm
    if total == 0:
        return out
    streams = [RngStream(plan.seed, (1, i)) for i in range(len(blocks))]
    state = ChainState(pot, np.repeat(x0[None, :], len(blocks), axis=0))
    done = 0
    while done < total:
        k = min(_CHUNK, total - done)
        Gs = np.stack([s.normal((k, n)) for s in streams], axis=1)
        Us = np.stack([s.uniform(k) for s in streams], axis=1)
        for i in range(k):
            step = done + i + 1
            try:
                state.step(p_therm, Gs[i], Us[i])
            except SingularityError as err:
                b = err.replica or 0
                replica = blocks[b][0] + step // plan.n_therm + 1
                raise SingularityError(err.pair, err.distance, replica) from err
            if step % plan.n_therm == 0:
                j = step // plan.n_therm
                for b, (a, e) in enumerate(blocks):
                    if a + j < e:
                        out[a + j] = state.q[b]
        done += k
    _log(plan, "prepared %d replicas", M)
    return out


@dataclass
class _Task:
    pot: PotentialModel
    p: DynamicsParams
    plan: EnsemblePlan
    block: int
    start: int
    positions: np.ndarray
    gids: np.ndarray
    n_steps: int
    record_msd: bool
    n_corr: int | None
    tolerate_blowup: bool


def _step_active(state, p, G, U, metropolize, active, on_singular):
    """One step of the active rows; a singular row is reported and removed."""
    while True:
        try:
            return state.step(p, G[active], U[active], metropolize), active
        except SingularityError as err:
            r = err.replica or 0
            on_singular(int(active[r]))
            keep = np.arange(len(active)) != r
            state.keep(keep)
            active = active[keep]


def _run_block(t: _Task):
    """Advance one block of replicas; returns partial group sums.

    With ``tolerate_blowup`` a replica that blows up is recorded and dropped;
    it stops contributing to the sums. Random draws are always made for the
    full block, so the surviving rows see the same numbers either way.
    """
    rng = RngStream(t.plan.seed, (2, t.block))
    state = ChainState(t.pot, t.positions)
    rows, n = state.Q.shape
    g_lo = int(t.gids[0])
    ng = int(t.gids[-1]) - g_lo + 1
    local = t.gids - g_lo
    msd = np.zeros((ng, t.n_steps + 1)) if t.record_msd else None
    corr = None
    g0 = state.grad.copy()
    if t.n_corr is not None:
        corr = np.zeros((ng, t.n_corr + 1))
        corr[:, 0] = np.bincount(local, np.sum(g0 * g0, axis=1), ng)
    thresh = _jump_threshold(t.plan, t.pot.box, t.p)
    blown = np.full(rows, -1)
    reasons = np.zeros(rows, dtype=int)
    active = np.arange(rows)
    rejections = proposals = 0
    metropolize = t.plan.scheme == "mala"
    k = 0

    def singular(r):
        if not t.tolerate_blowup:
            raise BlowupError(t.start + r, k, _REASONS[4])
        blown[r], reasons[r] = k, 4

    errstate = "ignore" if t.tolerate_blowup else "warn"
    with np.errstate(all=errstate):
        for k in range(1, t.n_steps + 1):
            G, U = rng.draw_step(rows, n)
            (accepted, delta, _), active_now = _step_active(state, t.p, G, U, metropolize,
                                                            active, singular)
            if len(active_now) != len(active):
                g0 = g0[np.isin(active, active_now)]
                active = active_now
            proposals += len(active)
            rejections += len(active) - int(np.count_nonzero(accepted))
            codes = _blowup_flags(state.V, state.Q, delta, t.plan.energy_threshold, thresh)
            if codes.any():
                r = int(np.argmax(codes > 0))
                if not t.tolerate_blowup:
                    raise BlowupError(t.start + int(active[r]), k, _REASONS[int(codes[r])])
                bad = codes > 0
                blown[active[bad]] = k
                reasons[active[bad]] = codes[bad]
                state.keep(~bad)
                g0 = g0[~bad]
                active = active[~bad]
            ids = local[active]
            if msd is not None:
                d = state.Q - state.Q0
                msd[:, k] = np.bincount(ids, np.sum(d * d, axis=1), ng)
            if corr is not None and k <= t.n_corr:
                corr[:, k] = np.bincount(ids, np.sum(state.grad * g0, axis=1), ng)
    return {
        "g_lo": g_lo,
        "msd": msd,
        "corr": corr,
        "rejections": rejections,
        "proposals": proposals,
        "blown": blown,
        "reasons": reasons,
    }


def _map_blocks(tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [_run_block(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_block, tasks))


def _run_parallel(pot, p, plan, replicas, n_steps, record_msd, n_corr,
                  tolerate_blowup=False):
    if plan.mode != PARALLEL:
        raise ValueError("this driver needs mode='parallel-replicas'")
    if replicas is None:
        replicas = prepare_replicas(pot, p, plan)
    replicas = np.asarray(replicas, dtype=float)
    M = replicas.shape[0]
    if M != plan.n_replicas:
        plan = replace(plan, n_replicas=M)
    gids, G = _group_ids(M, plan.n_groups)
    tasks = [_Task(pot, p, plan, b, a, replicas[a:e], gids[a:e], n_steps, record_msd,
                   n_corr, tolerate_blowup)
             for b, (a, e) in enumerate(_blocks(M, plan.block_size))]
    results = _map_blocks(tasks, plan.workers)
    _log(plan, "finished %d blocks", len(results))
    counts = np.bincount(gids, minlength=G).astype(float)
    return results, G, counts, M


def _reduce(results, key, G, width):
    sums = np.zeros((G, width))
    for r in results:
        part = r[key]
        sums[r["g_lo"]: r["g_lo"] + len(part)] += part
    return sums


def _curve(cls, dt, sums, counts, M):
    return cls(dt=dt, values=compensated_sum(sums) / M, n_samples=M,
               group_sums=sums, group_counts=counts)


def _stats(results):
    return RejectionStats(sum(r["proposals"] for r in results),
                          sum(r["rejections"] for r in results))


def run_einstein_ensemble(pot: PotentialModel, p: DynamicsParams, plan: EnsemblePlan,
                          replicas=None):
    """Advance every replica ``plan.n_steps`` steps and accumulate the MSD curve.

    Returns ``(MsdCurve, RejectionStats)``. ``replicas`` defaults to
    :func:`prepare_replicas`. Sequential plans are delegated to
    :func:`run_sequential_trajectories`.
    """
    if plan.mode == SEQUENTIAL:
        msd, _, stats = run_sequential_trajectories(pot, p, plan, tau=None)
        return msd, stats
    results, G, counts, M = _run_parallel(pot, p, plan, replicas, plan.n_steps, True, None)
    sums = _reduce(results, "msd", G, plan.n_steps + 1)
    return _curve(MsdCurve, p.dt, sums, counts, M), _stats(results)


def run_gk_ensemble(pot: PotentialModel, p: DynamicsParams, plan: EnsemblePlan,
                    tau: float = 0.3, replicas=None):
    """Force autocorrelation up to lag ``floor(tau/dt)``.

    Returns ``(CorrelationCurve, RejectionStats)``. The force at lag 0 is the
    one of the prepared replica, i.e. after equilibration.
    """
    n_corr = n_lag_steps(tau, p.dt)
    if plan.mode == SEQUENTIAL:
        _, corr, stats = run_sequential_trajectories(pot, p, replace(plan, n_steps=max(n_corr, 1)),
                                                     tau=tau)
        return corr, stats
    results, G, counts, M = _run_parallel(pot, p, plan, replicas, n_corr, False, n_corr)
    sums = _reduce(results, "corr", G, n_corr + 1)
    return _curve(CorrelationCurve, p.dt, sums, counts, M), _stats(results)


def run_rejection_scan(pot: PotentialModel, beta: float, dts, plan: EnsemblePlan,
                       replicas=None):
    """Average rejection rate over ``M x n_steps`` proposals at every ``dt``.

    Each time step runs on its own derived seed. Returns a list of
    ``(dt, RejectionStats)``.
    """
    if replicas is None:
        replicas = prepare_replicas(pot, DynamicsParams(beta, plan.dt_therm), plan)
    out = []
    for i, dt in enumerate(dts):
        sub = replace(plan, seed=derive_seed(plan.seed, 7, i))
        results, *_ = _run_parallel(pot, DynamicsParams(beta, dt), sub, replicas,
                                    plan.n_steps, False, None)
        out.append((dt, _stats(results)))
    return out


def run_sequential_trajectories(pot: PotentialModel, p: DynamicsParams, plan: EnsemblePlan,
                                tau: float | None = 0.3, initial=None):
    """Trajectories one after the other, each starting where the last ended.

    Every trajectory runs ``plan.n_steps`` steps (at least ``floor(tau/dt)``)
    and contributes an MSD curve from its own origin and, when ``tau`` is
    given, a force autocorrelation. The single chain uses the stream of
    parallel block 0, so ``M = 1`` reproduces a one-replica parallel run.

    Returns ``(MsdCurve, CorrelationCurve | None, RejectionStats)``.
    """
    p_therm = DynamicsParams(p.beta, plan.dt_therm)
    x0 = _initial_state(pot, p_therm, plan, initial)
    M = plan.n_replicas
    n_corr = n_lag_steps(tau, p.dt) if tau is not None else None
    n_steps = max(plan.n_steps, n_corr or 0)
    gids, G = _group_ids(M, plan.n_groups)
    msd = np.zeros((G, n_steps + 1))
    corr = np.zeros((G, n_corr + 1)) if n_corr is not None else None
    rng = RngStream(plan.seed, (2, 0))
    state = ChainState(pot, x0)
    n = x0.size
    thresh = _jump_threshold(plan, pot.box, p)
    metropolize = plan.scheme == "mala"
    rejections = 0
    for m in range(M):
        g = gids[m]
        state.Q0 = state.Q.copy()
        g0 = state.grad[0].copy()
        if corr is not None:
            corr[g, 0] += g0 @ g0
        for k in range(1, n_steps + 1):
            G_, U = rng.draw_step(1, n)
            try:
                accepted, delta, _ = state.step(p, G_, U, metropolize)
            except SingularityError:
                raise BlowupError(m, k, _REASONS[4]) from None
            rejections += int(not accepted[0])
            code = int(_blowup_flags(state.V, state.Q, delta, plan.energy_threshold, thresh)[0])
            if code:
                raise BlowupError(m, k, _REASONS[code])
            d = state.Q[0] - state.Q0[0]
            msd[g, k] += d @ d
            if corr is not None and k <= n_corr:
                corr[g, k] += state.grad[0] @ g0
        if plan.progress and (m + 1) % max(1, M // 10) == 0:
            log.info("trajectory %d/%d", m + 1, M)
    counts = np.bincount(gids, minlength=G).astype(float)
    stats = RejectionStats(M * n_steps, rejections)
    msd_curve = _curve(MsdCurve, p.dt, msd, counts, M)
    corr_curve = _curve(CorrelationCurve, p.dt, corr, counts, M) if corr is not None else None
    return msd_curve, corr_curve, stats


def stability_study(pot: PotentialModel, p: DynamicsParams, plan: EnsemblePlan,
                    n_steps: int, replicas=None):
    """Run every replica for ``n_steps`` with ``plan.scheme`` and report blow-ups.

    A replica that blows up (including a singular overlap) is recorded and
    dropped; the others are unaffected. Returns ``(list of BlowupReport,
    MsdCurve, RejectionStats)``; the MSD curve is only meaningful when nothing
    blew up.
    """
    results, G, counts, M = _run_parallel(pot, p, plan, replicas, n_steps, True, None,
                                          tolerate_blowup=True)
    reports = []
    for r in results:
        for step, code in zip(r["blown"], r["reasons"]):
            reports.append(BlowupReport() if step < 0 else BlowupReport(int(step), _REASONS[int(code)]))
    sums = _reduce(results, "msd", G, n_steps + 1)
    return reports, _curve(MsdCurve, p.dt, sums, counts, M), _stats(results)
