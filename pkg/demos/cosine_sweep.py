"""Time-step sweep on the 1D cosine potential.

Compares the Einstein and Green-Kubo estimates of the self-diffusion at a few
time steps with the exact continuous value, then extrapolates both to
dt -> 0 with an affine fit. Runs in about a minute with the defaults.

    python demos/cosine_sweep.py [n_replicas]
"""

import sys

from mala_transport.dynamics import DynamicsParams, derive_seed
from mala_transport.ensemble import EnsemblePlan, run_einstein_ensemble, run_gk_ensemble
from mala_transport.estimators import affine_fit, green_kubo_sum, msd_slope_fit
from mala_transport.model import TrigPotential1D
from mala_transport.oracles import lifson_jackson_1d, poisson_gk_oracle_1d


def main(n_replicas=20_000, seed=1):
    V = TrigPotential1D.cosine()
    exact = lifson_jackson_1d(V)
    print(f"exact D: {exact:.6f} (Poisson check {poisson_gk_oracle_1d(V):.6f})")

    einstein, gk = [], []
    print(f"{'dt':>7} {'Einstein':>18} {'Green-Kubo':>18} {'reject':>8}")
    for i, dt in enumerate((0.002, 0.005, 0.01, 0.02)):
        p = DynamicsParams(1.0, dt)
        n_steps = int(round(5.0 / dt))
        msd, stats = run_einstein_ensemble(
            V, p, EnsemblePlan(n_replicas=n_replicas, n_steps=n_steps, seed=derive_seed(seed, i, 0)))
        corr, _ = run_gk_ensemble(
            V, p, EnsemblePlan(n_replicas=n_replicas, seed=derive_seed(seed, i, 1)), tau=0.3)
        De, Dg = msd_slope_fit(msd, V.box), green_kubo_sum(corr, V.box, p)
        einstein.append((dt, De.value, De.stat_err))
        gk.append((dt, Dg.value, Dg.stat_err))
        print(f"{dt:7.3f} {De.value:10.4f} +- {De.stat_err:.4f} "
              f"{Dg.value:10.4f} +- {Dg.stat_err:.4f} {stats.rate:8.5f}")

    for name, pts in (("Einstein", einstein), ("Green-Kubo", gk)):
        fit = affine_fit(pts)
        print(f"{name:>10}: D0 = {fit.D0:.4f} +- {fit.D0_err:.4f}, slope D1 = {fit.D1:.2f}, "
              f"D0 - exact = {fit.D0 - exact:+.4f}")


if __name__ == "__main__":
    main(*(int(a) for a in sys.argv[1:2]))
