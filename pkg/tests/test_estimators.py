import math

import numpy as np
import pytest

from mala_transport.dynamics import DynamicsParams
from mala_transport.ensemble import CorrelationCurve, EnsemblePlan, MsdCurve, run_gk_ensemble
from mala_transport.estimators import (
    affine_fit,
    einstein_final_time,
    green_kubo_sum,
    loglog_slope,
    msd_slope_fit,
    replica_stat_error,
)
from mala_transport.model import SimulationBox, TrigPotential1D
from mala_transport.oracles import poisson_gk_oracle_1d

LINE = SimulationBox(1.0)


def make_curve(cls, dt, group_rows):
    rows = np.asarray(group_rows, dtype=float)
    counts = np.ones(len(rows))
    return cls(dt=dt, values=rows.mean(axis=0), n_samples=len(rows),
               group_sums=rows, group_counts=counts)


def test_stat_error_examples():
    assert replica_stat_error([3.0, 3.0, 3.0]) == 0.0
    assert replica_stat_error([0.0, 2.0]) == pytest.approx(1.0)
    x = np.random.default_rng(0).standard_normal(10_000)
    assert replica_stat_error(x) == pytest.approx(0.01, rel=0.1)
    with pytest.raises(ValueError):
        replica_stat_error([1.0])


def test_slope_fit_on_free_particle_line():
    dt = 0.01
    curve = make_curve(MsdCurve, dt, [2 * dt * np.arange(101)] * 4)
    D = msd_slope_fit(curve, LINE)
    assert D.value == pytest.approx(1.0, abs=1e-14)
    assert D.stat_err == 0.0


def test_slope_fit_zero_curve():
    curve = make_curve(MsdCurve, 0.1, np.zeros((3, 10)))
    assert msd_slope_fit(curve, LINE).value == 0.0


def test_slope_fit_synthetic_noise():
    rng = np.random.default_rng(1)
    dt, s = 0.01, 1.4
    t = dt * np.arange(200)
    rows = s * t + rng.normal(0, 0.05, (64, 200))
    D = msd_slope_fit(make_curve(MsdCurve, dt, rows), LINE)
    assert abs(D.value - s / 2) < 3 * D.stat_err


def test_slope_fit_window():
    dt = 0.1
    t = dt * np.arange(20)
    y = np.where(t < 0.5, 0.0, 2 * (t - 0.5) + 1.0)  # transient, then slope 2
    curve = make_curve(MsdCurve, dt, [y, y])
    with pytest.raises(ValueError):
        msd_slope_fit(curve, LINE, (5, 6))
    full = msd_slope_fit(curve, LINE).value
    late = msd_slope_fit(curve, LINE, (5, None)).value
    assert late != full


def test_final_time_examples():
    box = SimulationBox(3.0, 3, 20)
    dt, tau = 0.01, 0.5
    n = 60
    line = 6 * 20 * dt * np.arange(n + 1)
    curve = make_curve(MsdCurve, dt, [line, line])
    assert einstein_final_time(curve, box, tau).value == pytest.approx(1.0, abs=1e-14)
    assert einstein_final_time(curve, box, tau).value == pytest.approx(
        msd_slope_fit(curve, box).value, abs=1e-12)
    zero = make_curve(MsdCurve, dt, np.zeros((2, n + 1)))
    assert einstein_final_time(zero, box, tau).value == 0.0
    with pytest.raises(ValueError):
        einstein_final_time(curve, box, 10.0)


def test_green_kubo_examples():
    p = DynamicsParams(1.0, 0.1)
    zero = make_curve(CorrelationCurve, 0.1, np.zeros((2, 4)))
    assert green_kubo_sum(zero, LINE, p).value == 1.0
    one = make_curve(CorrelationCurve, 0.1, [[2.5, 0, 0, 0]] * 2)
    assert green_kubo_sum(one, LINE, p).value == pytest.approx(1 - 0.1 * 2.5)
    trap = green_kubo_sum(one, LINE, p, rule="trapezoid").value
    assert trap == pytest.approx(1 - 0.05 * 2.5)
    with pytest.raises(ValueError):
        green_kubo_sum(one, LINE, p, rule="simpson")


def test_green_kubo_cosine_small_dt():
    cos = TrigPotential1D.cosine()
    p = DynamicsParams(1.0, 0.002)
    corr, _ = run_gk_ensemble(cos, p, EnsemblePlan(n_replicas=20_000, seed=31), tau=0.3)
    D = green_kubo_sum(corr, cos.box, p)
    ref = poisson_gk_oracle_1d(cos)
    assert abs(D.value - ref) < 0.02 * ref + 3 * D.stat_err


def test_loglog_slope_examples():
    dts = np.array([1e-3, 2e-3, 5e-3, 1e-2])
    assert loglog_slope(np.column_stack([dts, 3.0 * dts**1.5])) == pytest.approx(1.5, abs=1e-12)
    assert loglog_slope(np.column_stack([dts, np.full(4, 0.2)])) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        loglog_slope([(1e-3, 0.0), (1e-2, 0.1)])


def test_affine_fit_exact_and_constant():
    pts = [(dt, 0.6 + 2 * dt) for dt in (0.002, 0.005, 0.01, 0.02)]
    fit = affine_fit(pts)
    assert fit.D0 == pytest.approx(0.6, abs=1e-12)
    assert fit.D1 == pytest.approx(2.0, abs=1e-10)
    assert fit.max_residual < 1e-12
    flat = affine_fit([(dt, 0.4) for dt in (0.1, 0.2, 0.3)])
    assert flat.D1 == pytest.approx(0.0, abs=1e-12)


def test_affine_fit_synthetic_noise():
    rng = np.random.default_rng(2)
    D_star, c, sd = 0.62, -12.0, 0.003
    dts = np.array([0.002, 0.005, 0.01, 0.02])
    pts = np.column_stack([dts, D_star + c * dts + rng.normal(0, sd, 4), np.full(4, sd)])
    fit = affine_fit(pts)
    assert abs(fit.D0 - D_star) < 3 * fit.D0_err


def test_affine_fit_uses_smallest_steps():
    pts = [(0.001, 1.0), (0.002, 1.0), (0.1, 5.0)]
    assert affine_fit(pts, n_smallest=2).D1 == pytest.approx(0.0, abs=1e-10)


def test_affine_fit_degenerate():
    with pytest.raises(ValueError):
        affine_fit([(0.01, 0.5), (0.01, 0.6)])
    with pytest.raises(ValueError):
        affine_fit([(0.01, 0.5)])


def test_unweighted_fit_errors_from_scatter():
    fit = affine_fit([(0.1, 1.0), (0.2, 1.1), (0.3, 1.3), (0.4, 1.3)])
    assert fit.D0_err > 0 and math.isfinite(fit.D1_err)
