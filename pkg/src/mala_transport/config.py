"""JSON run configuration.

Every field has a default except ``system`` and the time step (``dt`` or
``dt_list``, exactly one). Unknown keys, missing required keys and
non-positive physical parameters raise :class:`ConfigError` naming the key.
``docs/config.md`` is generated from the field metadata by
:func:`config_reference`.
"""

from __future__ import annotations

import json
import math
from dataclasses import MISSING, asdict, dataclass, field, fields

from .dynamics import DynamicsParams
from .ensemble import PARALLEL, SEQUENTIAL, EnsemblePlan
from .model import IonParams, LJParams, SimulationBox, SolvatedIonPotential, TrigPotential1D


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _f(default, doc, check=None, **kw):
    return field(default=default, metadata={"doc": doc, "check": check}, **kw)


POSITIVE = "positive"
NON_NEGATIVE = "non-negative"


@dataclass(frozen=True)
class RunConfig:
    system: str = field(metadata={"doc": "`cosine1d` or `solvated-ion` (required)"})
    dt: float | None = _f(None, "time step; exactly one of `dt` and `dt_list` is required", POSITIVE)
    dt_list: tuple | None = _f(None, "time steps for `sweep-dt` and `rejection-scan`", POSITIVE)
    beta: float = _f(1.0, "inverse temperature", POSITIVE)
    # cosine1d
    amplitude: float = _f(1.0, "cosine1d: V(q) = amplitude cos(2 pi q) on the unit torus", POSITIVE)
    # solvated-ion
    n_particles: int = _f(20, "solvated-ion: number of solvent particles", POSITIVE)
    density: float = _f(0.4, "solvated-ion: solvent number density", POSITIVE)
    epsilon: float = _f(1.0, "solvated-ion: LJ well depth", POSITIVE)
    sigma: float = _f(1.0, "solvated-ion: LJ and ion length scale", POSITIVE)
    r_cut: float = _f(1.76, "solvated-ion: LJ cutoff", POSITIVE)
    e_min: float = _f(0.8347, "solvated-ion: depth of the ion well", POSITIVE)
    kappa: float = _f(1.7025, "solvated-ion: inverse screening length of the ion", POSITIVE)
    r_cut_ion: float = _f(1.76, "solvated-ion: ion cutoff", POSITIVE)
    ion_minimum_image: bool = _f(True, "solvated-ion: ion-solvent distance through the minimum image")
    overlap_floor: float = _f(1e-8, "solvated-ion: distance (units of sigma) below which a pair is singular",
                              POSITIVE)
    # ensemble
    n_replicas: int = _f(1000, "number of replicas M", POSITIVE)
    n_steps: int = _f(1000, "steps per replica for Einstein and rejection runs", POSITIVE)
    t_final: float | None = _f(None, "if set, Einstein runs use floor(t_final/dt) steps instead of `n_steps`",
                               POSITIVE)
    tau: float = _f(0.3, "Green-Kubo truncation time", POSITIVE)
    einstein_tau: float | None = _f(None, "if set, Einstein uses MSD(tau)/(2 d N tau) instead of the slope fit",
                                    POSITIVE)
    fit_start: int = _f(0, "first MSD index of the Einstein slope fit", NON_NEGATIVE)
    quadrature: str = _f("rectangle", "Green-Kubo rule: `rectangle` or `trapezoid`")
    mode: str = _f(PARALLEL, f"`{PARALLEL}` or `{SEQUENTIAL}`")
    scheme: str = _f("mala", "`mala` (Metropolized) or `em` (plain Euler-Maruyama)")
    seed: int = _f(0, "root seed (overridden by `--seed`)", NON_NEGATIVE)
    n_therm: int = _f(10, "MALA steps between consecutive prepared replicas", NON_NEGATIVE)
    dt_therm: float = _f(0.01, "time step of the preparation steps", POSITIVE)
    n_burnin: int = _f(0, "MALA steps applied to the initial state before replica 1", NON_NEGATIVE)
    block_size: int = _f(8192, "replicas per work unit (fixes the random streams)", POSITIVE)
    n_groups: int = _f(64, "statistic groups for batch-means errors", POSITIVE)
    energy_threshold: float = _f(1e6, "blow-up when the energy exceeds this", POSITIVE)
    displacement_threshold: float | None = _f(
        None, "blow-up when one step moves a coordinate further; default max(L/2, 10 sqrt(2 dt))", POSITIVE)
    n_smallest: int = _f(10, "affine fits of `sweep-dt` use the n smallest time steps", POSITIVE)
    n_grid: int = _f(4096, "oracle grid size", POSITIVE)
    n_mc: int = _f(100000, "oracle Monte Carlo draws for the rejection prefactor", POSITIVE)
    progress: bool = _f(False, "progress lines on standard error")
    workers: int = _f(1, "worker processes (overridden by `--workers`)", POSITIVE)
    out: str = _f(".", "output directory (overridden by `--out`)")

    def __post_init__(self):
        _validate(self)

    # --------------------------------------------------------------
    def to_json(self) -> str:
        d = asdict(self)
        if d["dt_list"] is not None:
            d["dt_list"] = list(d["dt_list"])
        return json.dumps(d, indent=2)

    @property
    def dts(self) -> tuple:
        return (self.dt,) if self.dt is not None else tuple(self.dt_list)

    def dynamics(self, dt: float | None = None) -> DynamicsParams:
        return DynamicsParams(self.beta, self.dt if dt is None else dt)

    def plan(self, **overrides) -> EnsemblePlan:
        kw = dict(n_replicas=self.n_replicas, n_steps=self.n_steps, mode=self.mode,
                  dt_therm=self.dt_therm, n_therm=self.n_therm, n_burnin=self.n_burnin,
                  seed=self.seed, scheme=self.scheme, block_size=self.block_size,
                  n_groups=self.n_groups, workers=self.workers,
                  energy_threshold=self.energy_threshold,
                  displacement_threshold=self.displacement_threshold, progress=self.progress)
        kw.update(overrides)
        return EnsemblePlan(**kw)

    def einstein_steps(self, dt: float) -> int:
        if self.t_final is None:
            return self.n_steps
        return max(1, int(math.floor(self.t_final / dt * (1 + 1e-12))))

    def potential(self):
        if self.system == "cosine1d":
            return TrigPotential1D.cosine(self.amplitude)
        box = SimulationBox.from_density(self.n_particles, self.density, dim=3)
        lj = LJParams(self.epsilon, self.sigma, self.r_cut)
        ion = IonParams(self.e_min, self.kappa, self.sigma, self.r_cut_ion)
        return SolvatedIonPotential(box, lj, ion, ion_minimum_image=self.ion_minimum_image,
                                    overlap_floor=self.overlap_floor * self.sigma)


_CHOICES = {
    "system": ("cosine1d", "solvated-ion"),
    "mode": (PARALLEL, SEQUENTIAL),
    "scheme": ("mala", "em"),
    "quadrature": ("rectangle", "trapezoid"),
}


def _is_number(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _validate(c: RunConfig):
    for f in fields(c):
        value = getattr(c, f.name)
        if f.name in _CHOICES and value not in _CHOICES[f.name]:
            raise ConfigError(f.name, f"must be one of {', '.join(_CHOICES[f.name])}")
        check = f.metadata.get("check")
        if check is None or value is None:
            continue
        values = value if isinstance(value, tuple) else (value,)
        for v in values:
            if not _is_number(v) or not math.isfinite(v):
                raise ConfigError(f.name, f"expected a finite number, got {v!r}")
            if check == POSITIVE and not v > 0:
                raise ConfigError(f.name, f"must be positive, got {v!r}")
            if check == NON_NEGATIVE and not v >= 0:
                raise ConfigError(f.name, f"must be non-negative, got {v!r}")
    if (c.dt is None) == (c.dt_list is None):
        raise ConfigError("dt", "exactly one of dt and dt_list is required")
    if c.dt_list is not None and len(c.dt_list) == 0:
        raise ConfigError("dt_list", "must not be empty")


_INT_FIELDS = {"n_particles", "n_replicas", "n_steps", "fit_start", "seed", "n_therm", "n_burnin",
               "block_size", "n_groups", "n_smallest", "n_grid", "n_mc", "workers"}
_BOOL_FIELDS = {"ion_minimum_image", "progress"}
_STR_FIELDS = {"system", "quadrature", "mode", "scheme", "out"}


def parse_config(text: str) -> RunConfig:
    """Validated :class:`RunConfig` from a JSON document."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<document>", f"invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("<document>", "top level must be an object")
    known = {f.name for f in fields(RunConfig)}
    for key in data:
        if key not in known:
            raise ConfigError(key, "unknown key")
    if "system" not in data:
        raise ConfigError("system", "missing required key")
    if "dt" not in data and "dt_list" not in data:
        raise ConfigError("dt", "missing required key (or dt_list)")
    kw = {}
    for key, value in data.items():
        if key in _INT_FIELDS:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(key, f"expected an integer, got {value!r}")
        elif key in _BOOL_FIELDS:
            if not isinstance(value, bool):
                raise ConfigError(key, f"expected true or false, got {value!r}")
        elif key in _STR_FIELDS:
            if not isinstance(value, str):
                raise ConfigError(key, f"expected a string, got {value!r}")
        elif key == "dt_list" and value is not None:
            if not isinstance(value, list):
                raise ConfigError(key, "expected a list of numbers")
            value = tuple(float(v) if _is_number(v) else v for v in value)
        elif value is not None:
            if not _is_number(value):
                raise ConfigError(key, f"expected a number, got {value!r}")
            value = float(value)
        kw[key] = value
    return RunConfig(**kw)


def config_reference() -> str:
    """Markdown table of every configuration key with its default."""
    lines = [
        "# Configuration reference",
        "",
        "Generated by `mala_transport.config.config_reference()`; do not edit by hand.",
        "",
        "| key | default | description |",
        "|---|---|---|",
    ]
    for f in fields(RunConfig):
        default = "required" if f.default is MISSING else json.dumps(f.default)
        lines.append(f"| `{f.name}` | {default} | {f.metadata['doc']} |")
    return "\n".join(lines) + "\n"


if __name__ == "__main__":
    print(config_reference(), end="")
