"""Time-stepping schemes written as one nonlinear system per step.

Every scheme solves, for the unknowns ``(phi, mu)`` at the new time level,

    N1(phi, mu) = phi - kappa div(M grad mu)                   = S1   (conserved)
                  phi + kappa M mu                             = S1   (Allen-Cahn)
    N2(phi, mu) = mu - f_c'(phi) + shift * phi + gamma lap(phi) = S2

with the coefficients and sources listed in the ``assemble_*`` functions.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .grid import CellField, FaceField, GridSpec, div_mobility_grad, laplacian
from .multigrid import MgConfig, solve
from .potential import ModelParams, chemical_potential, fc_prime, is_saturated

log = logging.getLogger(__name__)


class SchemeKind(str, enum.Enum):
    CS1 = "CS1"
    BE = "BE"
    BDF2_ES = "BDF2_ES"
    BDF2 = "BDF2"
    AC1 = "AC1"

    @property
    def second_order(self) -> bool:
        return self in (SchemeKind.BDF2_ES, SchemeKind.BDF2)

    @property
    def conserved(self) -> bool:
        return self is not SchemeKind.AC1

    @property
    def implicit_mobility(self) -> bool:
        """Mobility evaluated at the unknown (lagged inside the solve) rather than from history."""
        return self in (SchemeKind.BE, SchemeKind.BDF2)


@dataclass
class SchemeState:
    phi_curr: CellField
    mu: CellField
    phi_prev: CellField | None = None
    time: float = 0.0
    step_index: int = 0

    @classmethod
    def initial(cls, phi0: CellField, params: ModelParams) -> SchemeState:
        return cls(phi_curr=phi0.copy(), mu=chemical_potential(phi0, params))

    @property
    def grid(self) -> GridSpec:
        return self.phi_curr.grid


@dataclass
class SystemAssembly:
    kind: SchemeKind
    grid: GridSpec
    params: ModelParams
    dt: float
    kappa: float
    gamma: float
    shift: float
    source: tuple[CellField, CellField]
    mobility_arg: CellField | None
    mobility_faces: FaceField = field(repr=False)
    mobility_stack: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.mobility_stack = np.ascontiguousarray(np.stack(self.mobility_faces.components))

    @property
    def conserved(self) -> bool:
        return self.kind.conserved

    @property
    def lagged(self) -> bool:
        return self.kind.implicit_mobility and not self.params.mobility.is_constant

    def apply_n(self, phi: CellField, mu: CellField) -> tuple[CellField, CellField]:
        if self.conserved:
            n1 = phi - self.kappa * div_mobility_grad(self.mobility_faces, mu)
        else:
            n1 = phi + self.kappa * self.params.mobility.value * mu
        n2 = CellField(
            phi.grid,
            mu.data
            - fc_prime(phi.data, self.params)
            + self.shift * phi.data
            + self.gamma * laplacian(phi).data,
        )
        return n1, n2

    def on_grid(self, grid: GridSpec, mobility_arg: CellField | None) -> SystemAssembly:
        """The same operator on ``grid``; sources are zero since FAS supplies its own."""
        return replace(
            self,
            grid=grid,
            source=(CellField.zeros(grid), CellField.zeros(grid)),
            mobility_arg=mobility_arg,
            mobility_faces=_faces(self.params, grid, mobility_arg),
        )

    def refreshed(self, phi: CellField) -> SystemAssembly:
        """Re-evaluate the face mobility at ``phi``."""
        return replace(self, mobility_arg=phi.copy(), mobility_faces=_faces(self.params, self.grid, phi))


def _faces(params: ModelParams, grid: GridSpec, arg: CellField | None) -> FaceField:
    if params.mobility.is_constant or arg is None:
        return FaceField.constant(grid, params.mobility.value)
    return params.mobility.at_faces(arg)


def _check_dt(dt: float) -> None:
    if not dt >= 0.0:
        raise ValueError(f"dt must be >= 0, got {dt}")


def _history(state: SchemeState) -> CellField:
    if state.phi_prev is None:
        raise ValueError("missing history: second-order scheme needs phi_prev")
    return state.phi_prev


def assemble_cs1(state: SchemeState, params: ModelParams, dt: float) -> SystemAssembly:
    """Convex splitting: expansive part explicit, mobility at phi^n."""
    _check_dt(dt)
    phi_n = state.phi_curr
    return SystemAssembly(
        kind=SchemeKind.CS1,
        grid=state.grid,
        params=params,
        dt=dt,
        kappa=dt,
        gamma=params.epsilon**2,
        shift=0.0,
        source=(phi_n.copy(), -phi_n),
        mobility_arg=phi_n,
        mobility_faces=_faces(params, state.grid, phi_n),
    )


def assemble_be(state: SchemeState, params: ModelParams, dt: float) -> SystemAssembly:
    """Fully implicit backward Euler."""
    _check_dt(dt)
    phi_n = state.phi_curr
    return SystemAssembly(
        kind=SchemeKind.BE,
        grid=state.grid,
        params=params,
        dt=dt,
        kappa=dt,
        gamma=params.epsilon**2,
        shift=1.0,
        source=(phi_n.copy(), CellField.zeros(state.grid)),
        mobility_arg=phi_n,
        mobility_faces=_faces(params, state.grid, phi_n),
    )


def assemble_bdf2es(state: SchemeState, params: ModelParams, dt: float) -> SystemAssembly:
    """BDF2 with the expansive part and the mobility at the extrapolation 2 phi^n - phi^{n-1}.

    ``params.stabilization_a`` subtracts ``A dt lap(phi^{n+1} - phi^n)`` from the chemical potential.
    """
    _check_dt(dt)
    phi_n = state.phi_curr
    phi_nm1 = _history(state)
    a_dt = params.stabilization_a * dt
    extrap = 2.0 * phi_n - phi_nm1
    s1 = (4.0 / 3.0) * phi_n - (1.0 / 3.0) * phi_nm1
    s2 = a_dt * laplacian(phi_n) - extrap
    return SystemAssembly(
        kind=SchemeKind.BDF2_ES,
        grid=state.grid,
        params=params,
        dt=dt,
        kappa=2.0 * dt / 3.0,
        gamma=params.epsilon**2 + a_dt,
        shift=0.0,
        source=(s1, s2),
        mobility_arg=extrap,
        mobility_faces=_faces(params, state.grid, extrap),
    )


def assemble_bdf2(state: SchemeState, params: ModelParams, dt: float) -> SystemAssembly:
    """Fully implicit BDF2."""
    _check_dt(dt)
    phi_n = state.phi_curr
    phi_nm1 = _history(state)
    s1 = (4.0 / 3.0) * phi_n - (1.0 / 3.0) * phi_nm1
    return SystemAssembly(
        kind=SchemeKind.BDF2,
        grid=state.grid,
        params=params,
        dt=dt,
        kappa=2.0 * dt / 3.0,
        gamma=params.epsilon**2,
        shift=1.0,
        source=(s1, CellField.zeros(state.grid)),
        mobility_arg=phi_n,
        mobility_faces=_faces(params, state.grid, phi_n),
    )


def assemble_ac1(state: SchemeState, params: ModelParams, dt: float) -> SystemAssembly:
    """Allen-Cahn convex splitting; constant mobility only."""
    _check_dt(dt)
    if not params.mobility.is_constant:
        raise ValueError("Allen-Cahn scheme requires a constant mobility")
    phi_n = state.phi_curr
    return SystemAssembly(
        kind=SchemeKind.AC1,
        grid=state.grid,
        params=params,
        dt=dt,
        kappa=dt,
        gamma=params.epsilon**2,
        shift=0.0,
        source=(phi_n.copy(), -phi_n),
        mobility_arg=None,
        mobility_faces=FaceField.constant(state.grid, params.mobility.value),
    )


ASSEMBLERS = {
    SchemeKind.CS1: assemble_cs1,
    SchemeKind.BE: assemble_be,
    SchemeKind.BDF2_ES: assemble_bdf2es,
    SchemeKind.BDF2: assemble_bdf2,
    SchemeKind.AC1: assemble_ac1,
}


@dataclass
class StepReport:
    scheme: SchemeKind
    vcycles: int
    residuals: list[float]
    phi_min: float
    phi_max: float
    saturated: bool
    work_units: float = 0.0

    @property
    def final_residual(self) -> float:
        return self.residuals[-1]


def step(
    state: SchemeState,
    kind: SchemeKind,
    params: ModelParams,
    dt: float,
    mg: MgConfig,
) -> tuple[SchemeState, StepReport]:
    """Advance one step. A second-order scheme without history takes a CS1 step instead."""
    used = kind
    if kind.second_order and state.phi_prev is None:
        used = SchemeKind.CS1
        log.debug("step %d: bootstrapping %s with one CS1 step", state.step_index, kind.value)
    assembly = ASSEMBLERS[used](state, params, dt)
    phi, mu, report = solve(assembly, state.phi_curr, state.mu, mg)
    saturated = is_saturated(phi, params.delta)
    if saturated:
        log.warning(
            "step %d: |phi| exceeds 1 - delta (min %.6g, max %.6g)",
            state.step_index + 1,
            phi.min(),
            phi.max(),
        )
    new_state = SchemeState(
        phi_curr=phi,
        mu=mu,
        phi_prev=state.phi_curr if kind.second_order else None,
        time=state.time + dt,
        step_index=state.step_index + 1,
    )
    return new_state, StepReport(
        scheme=used,
        vcycles=report.vcycles,
        residuals=report.residuals,
        phi_min=phi.min(),
        phi_max=phi.max(),
        saturated=saturated,
        work_units=report.work_units,
    )


def bdf2_bootstrap(
    state: SchemeState, params: ModelParams, dt: float, mg: MgConfig
) -> tuple[SchemeState, StepReport]:
    """The CS1 step that produces phi^1 and the history for BDF2/BDF2_ES."""
    if state.phi_prev is not None:
        raise ValueError("state already carries history")
    return step(state, SchemeKind.BDF2, params, dt, mg)


def ac1_step(
    state: SchemeState, params: ModelParams, dt: float, mg: MgConfig
) -> tuple[SchemeState, StepReport]:
    return step(state, SchemeKind.AC1, params, dt, mg)
