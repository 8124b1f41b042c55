"""Time-series instrumentation and the experiment harnesses built on ``run_simulation``."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from . import config
from .grid import CellField, GridSpec, cell_coordinates, mean, norm_l2, norm_linf
from .multigrid import ConvergenceError, MgConfig, restrict
from .potential import ModelParams, discrete_energy, modified_energy_bdf2
from .schemes import SchemeKind, SchemeState, StepReport, step
from .utils import steps_for

log = logging.getLogger(__name__)

InitialData = CellField | Callable[[GridSpec], CellField]


@dataclass
class StepRecord:
    step: int
    time: float
    energy: float
    modified_energy: float | None
    mass: float
    phi_min: float
    phi_max: float
    vcycles: int
    final_residual: float
    saturation_flag: bool


@dataclass
class Trajectory:
    kind: SchemeKind
    params: ModelParams
    dt: float
    records: list[StepRecord] = field(default_factory=list)
    state: SchemeState | None = None
    steps: int = 0
    total_vcycles: int = 0
    phi_min_all: float = math.inf
    phi_max_all: float = -math.inf
    probes: dict[float, CellField] = field(default_factory=dict)
    last_report: StepReport | None = None

    @property
    def avg_vcycles(self) -> float:
        return self.total_vcycles / self.steps if self.steps else 0.0

    @property
    def final_phi(self) -> CellField:
        assert self.state is not None
        return self.state.phi_curr

    def series(self, name: str) -> list[float | None]:
        return [getattr(r, name) for r in self.records]


def _record(
    state: SchemeState,
    params: ModelParams,
    dt: float,
    report: StepReport | None,
) -> StepRecord:
    phi = state.phi_curr
    energy, saturated = discrete_energy(phi, params)
    modified = None
    if state.phi_prev is not None and dt > 0.0:
        modified = modified_energy_bdf2(phi, state.phi_prev, dt, params)
    return StepRecord(
        step=state.step_index,
        time=state.step_index * dt,
        energy=energy,
        modified_energy=modified,
        mass=mean(phi),
        phi_min=phi.min(),
        phi_max=phi.max(),
        vcycles=report.vcycles if report else 0,
        final_residual=report.final_residual if report else 0.0,
        saturation_flag=saturated,
    )


def run_simulation(
    init: InitialData,
    kind: SchemeKind,
    params: ModelParams,
    dt: float,
    t_final: float,
    grid: GridSpec,
    mg: MgConfig,
    record_every: int = 1,
    probe_times: Sequence[float] = (),
    on_step: Callable[[SchemeState], None] | None = None,
) -> Trajectory:
    """Fixed-step run from t = 0 to ``t_final``.

    Records step 0, every ``record_every``-th step and the last step. Fields at ``probe_times`` are
    kept in ``Trajectory.probes``. A failed solve raises ``ConvergenceError`` with the partial
    trajectory attached as ``exc.trajectory``.
    """
    if record_every < 1:
        raise ValueError(f"record_every must be >= 1, got {record_every}")
    phi0 = init.copy() if isinstance(init, CellField) else init(grid)
    if phi0.grid != grid:
        raise ValueError(f"initial field lives on {phi0.grid}, expected {grid}")
    if not np.all(np.abs(phi0.data) < 1.0):
        raise ValueError("initial field must lie strictly inside (-1, 1)")
    nsteps = steps_for(t_final, dt)
    probe_steps = {steps_for(t, dt): t for t in probe_times}
    if probe_steps and max(probe_steps) > nsteps:
        raise ValueError(f"probe time beyond t_final={t_final}")

    state = SchemeState.initial(phi0, params)
    traj = Trajectory(kind=kind, params=params, dt=dt, state=state)
    traj.phi_min_all = phi0.min()
    traj.phi_max_all = phi0.max()
    traj.records.append(_record(state, params, dt, None))
    if 0 in probe_steps:
        traj.probes[probe_steps[0]] = phi0.copy()

    for k in range(1, nsteps + 1):
        try:
            state, report = step(state, kind, params, dt, mg)
        except ConvergenceError as exc:
            log.error("step %d of %d failed: %s", k, nsteps, exc)
            exc.trajectory = traj
            raise
        traj.state = state
        traj.steps = k
        traj.total_vcycles += report.vcycles
        traj.last_report = report
        traj.phi_min_all = min(traj.phi_min_all, report.phi_min)
        traj.phi_max_all = max(traj.phi_max_all, report.phi_max)
        if k in probe_steps:
            traj.probes[probe_steps[k]] = state.phi_curr.copy()
        if k % record_every == 0 or k == nsteps:
            rec = _record(state, params, dt, report)
            traj.records.append(rec)
            log.info(
                "step %d t=%.6g E=%.12g mass=%.12g phi in [%.9f, %.9f] vcycles=%d",
                rec.step,
                rec.time,
                rec.energy,
                rec.mass,
                rec.phi_min,
                rec.phi_max,
                rec.vcycles,
            )
        if on_step is not None:
            on_step(state)
    return traj


def random_initial(grid: GridSpec, mean_value: float, amplitude: float, seed: int) -> CellField:
    """``mean_value`` plus i.i.d. uniform noise in ``[-amplitude, amplitude]`` (numpy PCG64)."""
    if abs(mean_value) + amplitude >= 1.0:
        raise ValueError("random initial data must stay inside (-1, 1)")
    rng = np.random.default_rng(seed)
    return CellField(grid, mean_value + rng.uniform(-amplitude, amplitude, grid.size))


def convergence_profile(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return (
        1.8
        * (0.5 * (1.0 - np.cos(4.0 * np.pi * x / config.CONV_LENGTH)))
        * (0.5 * (1.0 - np.cos(2.0 * np.pi * y / config.CONV_LENGTH)))
        - 0.9
    )


def init_convergence_profile(grid: GridSpec) -> CellField:
    if grid.dim != 2 or grid.length != config.CONV_LENGTH:
        raise ValueError(
            f"the convergence profile needs a 2-D box of length {config.CONV_LENGTH}, got {grid}"
        )
    x, y = cell_coordinates(grid)
    return CellField(grid, convergence_profile(x, y))


def coarse_grid_error(phi_coarse: CellField, phi_fine: CellField) -> float:
    """Root-mean-square l2 difference on the coarse grid, the fine field restricted to it.

    The h-weighted norm is divided by |Omega|^(1/2) so errors do not scale with the box size.
    """
    fine = phi_fine
    while fine.grid.n > phi_coarse.grid.n:
        fine = restrict(fine)
    return norm_l2(phi_coarse - fine) / math.sqrt(phi_coarse.grid.volume)


@dataclass
class ConvergenceRow:
    h_coarse: float
    h_fine: float
    error_l2: float
    rate: float | None


def refinement_dt(h: float, t_final: float, dt_factor: float) -> float:
    """``dt_factor * h^2`` rounded so that a whole number of steps reaches ``t_final``."""
    k = max(1, round(t_final / (dt_factor * h * h)))
    return t_final / k


def convergence_study(
    kind: SchemeKind,
    params: ModelParams,
    resolutions: Sequence[int],
    mg: MgConfig,
    length: float = config.CONV_LENGTH,
    t_final: float = config.CONV_T_FINAL,
    dt_factor: float = config.CONV_DT_FACTOR,
    init: Callable[[GridSpec], CellField] = init_convergence_profile,
) -> list[ConvergenceRow]:
    """Refinement path ``dt = dt_factor * h^2``; errors between adjacent resolutions."""
    if len(resolutions) < 2:
        raise ValueError("at least two resolutions are required")
    for a, b in zip(resolutions, resolutions[1:]):
        if b != 2 * a:
            raise ValueError(f"resolutions must double, got {a} then {b}")
    finals: dict[int, CellField] = {}
    for n in resolutions:
        grid = GridSpec(2, n, length)
        dt = refinement_dt(grid.spacing, t_final, dt_factor)
        traj = run_simulation(init, kind, params, dt, t_final, grid, mg, record_every=10**9)
        finals[n] = traj.final_phi
        log.info("resolution n=%d done: dt=%.6g avg vcycles %.2f", n, dt, traj.avg_vcycles)
    rows: list[ConvergenceRow] = []
    for nc, nf in zip(resolutions, resolutions[1:]):
        err = coarse_grid_error(finals[nc], finals[nf])
        rate = math.log2(rows[-1].error_l2 / err) if rows and err > 0.0 else None
        row = ConvergenceRow(length / nc, length / nf, err, rate)
        rows.append(row)
        log.info("h=%.6g/%.6g error %.6e rate %s", row.h_coarse, row.h_fine, err, rate)
    return rows


@dataclass
class ComplexityCurve:
    theta0: float
    n: int
    residuals: list[float]

    @property
    def vcycles(self) -> int:
        return len(self.residuals) - 1


def reduction_factors(residuals: Sequence[float]) -> list[float]:
    return [b / a for a, b in zip(residuals, residuals[1:]) if a > 0.0]


def factor_spread(residuals: Sequence[float], first_cycle: int = 2) -> float:
    """(max - min) / mean of the per-cycle reduction factors from ``first_cycle`` on."""
    factors = reduction_factors(residuals)[first_cycle - 1 :]
    if not factors:
        return 0.0
    avg = sum(factors) / len(factors)
    return (max(factors) - min(factors)) / avg


def mg_complexity_study(
    kind: SchemeKind,
    params: ModelParams,
    theta0s: Sequence[float],
    grid_sizes: Sequence[int],
    mg: MgConfig,
    dt: float = config.MGB_DT,
    steps: int = config.MGB_STEPS,
    length: float = config.MGB_LENGTH,
    init: Callable[[GridSpec], CellField] = init_convergence_profile,
) -> list[ComplexityCurve]:
    """Residual history of the last of ``steps`` fixed steps, per quench parameter and grid size."""
    curves = []
    for theta0 in theta0s:
        p = replace(params, theta0=theta0)
        for n in grid_sizes:
            grid = GridSpec(2, n, length)
            traj = run_simulation(init, kind, p, dt, steps * dt, grid, mg, record_every=steps)
            assert traj.last_report is not None
            curve = ComplexityCurve(theta0, n, list(traj.last_report.residuals))
            curves.append(curve)
            log.info("theta0=%g n=%d: %d V-cycles at the last step", theta0, n, curve.vcycles)
    return curves


@dataclass(frozen=True)
class SchemeVariant:
    label: str
    kind: SchemeKind
    stabilization_a: float | None = None

    @classmethod
    def parse(cls, label: str) -> SchemeVariant:
        """``BDF2_ES`` uses A = 1/16, ``BDF2_ES_A0`` uses A = 0; other labels are scheme names."""
        if label == "BDF2_ES":
            return cls(label, SchemeKind.BDF2_ES, config.BDF2_ES_STABILIZATION)
        if label == "BDF2_ES_A0":
            return cls(label, SchemeKind.BDF2_ES, 0.0)
        try:
            return cls(label, SchemeKind(label))
        except ValueError:
            raise ValueError(f"unknown scheme label {label!r}") from None

    def params_for(self, params: ModelParams) -> ModelParams:
        if self.stabilization_a is None:
            return params
        return replace(params, stabilization_a=self.stabilization_a)


@dataclass
class ComparisonRow:
    label: str
    dt: float
    errors: dict[float, float]
    avg_vcycles: float
    max_phi: float


def comparison_study(
    variants: Sequence[SchemeVariant],
    params: ModelParams,
    dt_list: Sequence[float],
    grid: GridSpec,
    mg: MgConfig,
    target_dt: float,
    init: InitialData,
    probe_times: Sequence[float] = config.CMP_PROBE_TIMES,
) -> list[ComparisonRow]:
    """l2 differences at ``probe_times`` against a BDF2 target run at ``target_dt``."""
    t_final = max(probe_times)
    phi0 = init if isinstance(init, CellField) else init(grid)
    target = run_simulation(
        phi0, SchemeKind.BDF2, params, target_dt, t_final, grid, mg,
        record_every=10**9, probe_times=probe_times,
    )
    log.info("target run done: dt=%g avg vcycles %.2f", target_dt, target.avg_vcycles)
    rows = []
    for dt in dt_list:
        for variant in variants:
            traj = run_simulation(
                phi0, variant.kind, variant.params_for(params), dt, t_final, grid, mg,
                record_every=10**9, probe_times=probe_times,
            )
            errors = {t: norm_l2(traj.probes[t] - target.probes[t]) for t in probe_times}
            row = ComparisonRow(variant.label, dt, errors, traj.avg_vcycles, traj.phi_max_all)
            rows.append(row)
            log.info("%s dt=%g: errors %s", variant.label, dt, errors)
    return rows


@dataclass
class AuditReport:
    series: str
    checked: int
    violations: list[int]

    @property
    def ok(self) -> bool:
        return not self.violations


def audit_series(
    values: Sequence[float | None],
    abs_slack: float = 10.0 * config.MG_TOL,
    rel_slack: float = 1e-10,
) -> list[int]:
    """Indices ``k`` with ``values[k] > values[k-1]`` beyond the slack; ``None`` entries are skipped."""
    violations = []
    prev: float | None = None
    for k, v in enumerate(values):
        if v is None:
            continue
        if prev is not None and v > prev + max(abs_slack, rel_slack * abs(prev)):
            violations.append(k)
        prev = v
    return violations


def energy_audit(traj: Trajectory, tau: float = config.MG_TOL) -> AuditReport:
    """Monotone-decay check of the energy (the modified energy for BDF2_ES)."""
    name = "modified_energy" if traj.kind is SchemeKind.BDF2_ES else "energy"
    values = traj.series(name)
    violations = audit_series(values, abs_slack=10.0 * tau)
    report = AuditReport(name, sum(v is not None for v in values), violations)
    if violations:
        steps = [traj.records[k].step for k in violations]
        log.warning("%s: %s increased at steps %s", traj.kind.value, name, steps)
    return report


@dataclass
class PositivityRow:
    theta0: float
    delta: float
    sweeps: int
    max_phi: float
    min_phi: float
    saturated: bool


def positivity_study(
    rows: Sequence[tuple[float, float, int]],
    params: ModelParams,
    grid: GridSpec,
    mg: MgConfig,
    init: InitialData,
    dt: float = config.POS_DT,
    t_final: float = config.POS_T_FINAL,
    kind: SchemeKind = SchemeKind.CS1,
) -> list[PositivityRow]:
    """Extremes over every iterate for each ``(theta0, delta, sweeps)`` row, same initial data."""
    phi0 = init if isinstance(init, CellField) else init(grid)
    out = []
    for theta0, delta, sweeps in rows:
        p = replace(params, theta0=theta0, delta=delta)
        cfg = replace(mg, sweeps_lambda=sweeps)
        traj = run_simulation(phi0, kind, p, dt, t_final, grid, cfg, record_every=10**9)
        bound = 1.0 - delta
        saturated = traj.phi_max_all > bound or traj.phi_min_all < -bound
        row = PositivityRow(theta0, delta, sweeps, traj.phi_max_all, traj.phi_min_all, saturated)
        out.append(row)
        log.info(
            "theta0=%g delta=%g: max %.12f min %.12f", theta0, delta, row.max_phi, row.min_phi
        )
    return out


def delta_sensitivity(
    params: ModelParams,
    deltas: tuple[float, float],
    grid: GridSpec,
    mg: MgConfig,
    init: InitialData,
    dt: float = config.POS_DT,
    t_final: float = config.POS_T_FINAL,
    kind: SchemeKind = SchemeKind.CS1,
) -> float:
    """Max-norm difference of the final fields of two runs differing only in delta."""
    phi0 = init if isinstance(init, CellField) else init(grid)
    finals = [
        run_simulation(
            phi0, kind, replace(params, delta=d), dt, t_final, grid, mg, record_every=10**9
        ).final_phi
        for d in deltas
    ]
    diff = norm_linf(finals[0] - finals[1])
    log.info("delta %g vs %g: max difference %.3e", deltas[0], deltas[1], diff)
    return diff


def spinodal_3d_protocol(
    n: int = config.SPIN3D_N,
    steps: int = config.SPIN3D_STEPS,
    seed: int = config.DEFAULT_SEED,
    mg: MgConfig | None = None,
    record_every: int = 10,
    mean_value: float = config.RANDOM_MEAN,
    amplitude: float = config.RANDOM_AMPLITUDE,
) -> Trajectory:
    """Spinodal decomposition in the unit cube with the CS1 scheme."""
    grid = GridSpec(3, n, 1.0)
    params = ModelParams(
        epsilon=config.DEFAULT_EPSILON, theta0=config.DEFAULT_THETA0, delta=config.DEFAULT_DELTA
    )
    cfg = mg or MgConfig(tol_tau=config.SPIN3D_TOL)
    phi0 = random_initial(grid, mean_value, amplitude, seed)
    dt = config.SPIN3D_DT
    return run_simulation(
        phi0, SchemeKind.CS1, params, dt, steps * dt, grid, cfg, record_every=record_every
    )
