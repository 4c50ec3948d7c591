"""Plain Euler-Maruyama against the Metropolized scheme on the solvated ion.

Twenty Lennard-Jones particles around a fixed ion. The same equilibrated
replicas are run with both schemes; blow-ups are detected and reported per
replica instead of aborting the run. Takes a few minutes.

    python demos/ion_stability.py [n_replicas] [t_final]
"""

import sys
from dataclasses import replace

from mala_transport.dynamics import DynamicsParams
from mala_transport.ensemble import EnsemblePlan, prepare_replicas, stability_study
from mala_transport.estimators import msd_slope_fit
from mala_transport.model import SimulationBox, SolvatedIonPotential


def main(n_replicas=10, t_final=5.0, seed=4):
    box = SimulationBox.from_density(20, 0.4, 3)
    pot = SolvatedIonPotential(box)
    plan = EnsemblePlan(n_replicas=n_replicas, n_steps=1, seed=seed, dt_therm=1e-3,
                        n_therm=1000, n_burnin=20_000, n_groups=min(n_replicas, 10))
    replicas = prepare_replicas(pot, DynamicsParams(1.0, 1e-3), plan)

    for scheme, dt in (("em", 4e-4), ("em", 1e-3), ("mala", 1e-3)):
        n = int(round(t_final / dt))
        reports, msd, stats = stability_study(pot, DynamicsParams(1.0, dt),
                                              replace(plan, scheme=scheme), n, replicas)
        blown = [r for r in reports if not r.stable]
        line = f"{scheme:>4} dt={dt:g}: {len(blown)}/{len(reports)} blew up"
        if blown:
            line += f", first at step {min(r.step for r in blown)} ({blown[0].reason})"
        else:
            line += f", D = {msd_slope_fit(msd, box).value:.4f}, rejection {stats.rate:.3f}"
        print(line)


if __name__ == "__main__":
    main(*(int(a) if i == 0 else float(a) for i, a in enumerate(sys.argv[1:3])))
