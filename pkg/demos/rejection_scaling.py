"""Rejection rate of the Metropolized scheme against the time step.

For small steps the rate behaves like C dt^{3/2}; the prefactor C is predicted
by a Gibbs average computed independently of any simulation.

    python demos/rejection_scaling.py
"""

import numpy as np

from mala_transport.ensemble import EnsemblePlan, run_rejection_scan
from mala_transport.estimators import loglog_slope
from mala_transport.model import TrigPotential1D
from mala_transport.oracles import xi_bar_average


def main(seed=3):
    V = TrigPotential1D.cosine()
    dts = np.geomspace(1e-3, 1e-2, 5)
    scan = run_rejection_scan(V, 1.0, dts, EnsemblePlan(n_replicas=10_000, n_steps=100, seed=seed))
    rates = [(dt, s.rate) for dt, s in scan]
    C = xi_bar_average(V, n_mc=50_000, seed=seed)
    print(f"predicted prefactor: {C:.2f}")
    for dt, r in rates:
        print(f"dt={dt:.5f} rate={r:.5f} rate/dt^1.5={r / dt**1.5:6.2f}")
    print(f"log-log slope: {loglog_slope(rates):.3f} (expected 1.5)")


if __name__ == "__main__":
    main()
