"""Nonlinear FAS multigrid for the coupled (phi, mu) systems, plus a linear periodic Poisson solver.

Transfer operators are the cell-centred pair: restriction by averaging the 2^dim children and
piecewise-constant prolongation. The smoother is the block Gauss-Seidel of ``kernels``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING

import numpy as np

from . import kernels
from .grid import CellField, FaceField, GridSpec, check_mobility, div_mobility_grad, mean, norm_l2

if TYPE_CHECKING:
    from .schemes import SystemAssembly

log = logging.getLogger(__name__)

ORDERINGS = ("red-black", "lexicographic")


class ConvergenceError(RuntimeError):
    """The V-cycle budget was exhausted (or the residual became non-finite)."""

    def __init__(self, message: str, residuals: list[float]) -> None:
        super().__init__(message)
        self.residuals = residuals
        self.trajectory: object | None = None


@dataclass(frozen=True)
class MgConfig:
    sweeps_lambda: int = 2
    tol_tau: float = 1e-9
    max_vcycles: int = 200
    coarsest_n: int = 4
    coarse_sweeps: int = 20
    ordering: str = "red-black"
    parallel: bool = False

    def __post_init__(self) -> None:
        if self.sweeps_lambda < 1:
            raise ValueError(f"sweeps_lambda must be >= 1, got {self.sweeps_lambda}")
        if not self.tol_tau > 0.0:
            raise ValueError(f"tol_tau must be positive, got {self.tol_tau}")
        if self.max_vcycles < 1:
            raise ValueError(f"max_vcycles must be >= 1, got {self.max_vcycles}")
        if self.coarsest_n < 4:
            raise ValueError(f"coarsest_n must be >= 4, got {self.coarsest_n}")
        if self.coarse_sweeps < 1:
            raise ValueError(f"coarse_sweeps must be >= 1, got {self.coarse_sweeps}")
        if self.ordering not in ORDERINGS:
            raise ValueError(f"ordering must be one of {ORDERINGS}, got {self.ordering!r}")
        if self.parallel and self.ordering == "lexicographic":
            raise ValueError("parallel sweeps require red-black ordering")


@dataclass(frozen=True)
class _Topology:
    grid: GridSpec
    plus: kernels.IntArray
    minus: kernels.IntArray
    red: kernels.IntArray
    black: kernels.IntArray
    lex: kernels.IntArray
    lex_reversed: kernels.IntArray


@lru_cache(maxsize=32)
def _topology(grid: GridSpec) -> _Topology:
    plus, minus = kernels.neighbor_tables(grid.shape)
    red, black = kernels.colour_lists(grid.shape)
    lex = np.arange(grid.size, dtype=np.int64)
    return _Topology(grid, plus, minus, red, black, lex, np.ascontiguousarray(lex[::-1]))


@dataclass
class MgLevel:
    topology: _Topology
    assembly: SystemAssembly | None = None

    @property
    def grid(self) -> GridSpec:
        return self.topology.grid


@dataclass
class MgHierarchy:
    """Grid levels, level 0 finest, each with the scheme operator rebuilt on that grid."""

    levels: list[MgLevel]

    @classmethod
    def build(cls, grid: GridSpec, cfg: MgConfig) -> MgHierarchy:
        grids = [grid]
        while grids[-1].n > cfg.coarsest_n and grids[-1].n >= 8:
            grids.append(grids[-1].coarsened())
        return cls([MgLevel(_topology(g)) for g in grids])

    def bind(self, assembly: SystemAssembly) -> None:
        """Attach ``assembly`` to level 0 and its coarse-grid instances below it."""
        self.levels[0].assembly = assembly
        arg = assembly.mobility_arg
        for level in self.levels[1:]:
            arg = restrict(arg) if arg is not None else None
            level.assembly = assembly.on_grid(level.grid, arg)


@dataclass
class SolveReport:
    vcycles: int
    residuals: list[float]
    work_units: float = 0.0

    @property
    def final_residual(self) -> float:
        return self.residuals[-1]


@dataclass
class _Work:
    """Smoothing sweeps weighted by level size relative to the finest level."""

    units: float = 0.0

    def add(self, level: int, dim: int, sweeps: int) -> None:
        self.units += sweeps / 2.0 ** (dim * level)


def restrict(u_fine: CellField) -> CellField:
    """Average the 2^dim children of every coarse cell."""
    grid = u_fine.grid
    coarse = grid.coarsened()
    nc = coarse.n
    split = []
    for _ in range(grid.dim):
        split.extend((nc, 2))
    v = u_fine.view().reshape(split)
    return CellField(coarse, v.mean(axis=tuple(range(1, 2 * grid.dim, 2))))


def prolong(u_coarse: CellField) -> CellField:
    """Copy every coarse value into its 2^dim children."""
    v = u_coarse.view()
    for a in range(u_coarse.grid.dim):
        v = np.repeat(v, 2, axis=a)
    return CellField(u_coarse.grid.refined(), v)


def restrict_faces(f: FaceField) -> FaceField:
    """Average the 2^(dim-1) fine faces covering each coarse face."""
    grid = f.grid
    coarse = grid.coarsened()
    nc = coarse.n
    comps = []
    for a, fv in enumerate(f.views()):
        # coarse face I + 1/2 along axis a is covered by fine faces 2I + 1 + 1/2
        on_faces = np.take(fv, np.arange(1, grid.n, 2), axis=a)
        split = []
        for b in range(grid.dim):
            split.extend((nc, 1) if b == a else (nc, 2))
        comps.append(on_faces.reshape(split).mean(axis=tuple(range(1, 2 * grid.dim, 2))))
    return FaceField(coarse, tuple(c.reshape(-1) for c in comps))


def residual(
    assembly: SystemAssembly,
    phi: CellField,
    mu: CellField,
    rhs1: CellField,
    rhs2: CellField,
) -> tuple[CellField, CellField, float]:
    """Component residuals ``rhs - N(phi, mu)`` and their combined grid l2 norm."""
    n1, n2 = assembly.apply_n(phi, mu)
    r1 = rhs1 - n1
    r2 = rhs2 - n2
    return r1, r2, math.hypot(norm_l2(r1), norm_l2(r2))


def smooth(
    level: MgLevel,
    assembly: SystemAssembly,
    phi: CellField,
    mu: CellField,
    rhs1: CellField,
    rhs2: CellField,
    sweeps: int,
    cfg: MgConfig,
    reverse: bool = False,
) -> tuple[CellField, CellField]:
    """``sweeps`` full block Gauss-Seidel sweeps, updating ``phi`` and ``mu`` in place.

    ``reverse`` visits the colours (or cells) in the opposite order; the V-cycle post-smoother uses
    it so that post-smoothing is the adjoint of pre-smoothing.
    """
    topo = level.topology
    params = assembly.params
    h = topo.grid.spacing
    args = (
        phi.data,
        mu.data,
        rhs1.data,
        rhs2.data,
        assembly.mobility_stack,
        topo.plus,
        topo.minus,
        float(assembly.kappa),
        float(assembly.gamma),
        float(assembly.shift),
        bool(assembly.conserved),
        float(params.theta0),
        float(params.delta),
        1.0 / (h * h),
    )
    if cfg.ordering == "lexicographic":
        cells = topo.lex_reversed if reverse else topo.lex
        for _ in range(sweeps):
            kernels.block_sweep_serial(cells, *args)
        return phi, mu
    sweep = kernels.block_sweep_parallel if cfg.parallel else kernels.block_sweep_serial
    first, second = (topo.black, topo.red) if reverse else (topo.red, topo.black)
    for _ in range(sweeps):
        sweep(first, *args)
        sweep(second, *args)
    return phi, mu


def _cycle(
    hier: MgHierarchy,
    level: int,
    phi: CellField,
    mu: CellField,
    rhs1: CellField,
    rhs2: CellField,
    cfg: MgConfig,
    work: _Work,
) -> tuple[CellField, CellField]:
    lev = hier.levels[level]
    assembly = lev.assembly
    assert assembly is not None
    dim = lev.grid.dim
    if level == len(hier.levels) - 1:
        sweeps = 2 * cfg.sweeps_lambda if level == 0 else cfg.coarse_sweeps
        smooth(lev, assembly, phi, mu, rhs1, rhs2, sweeps, cfg)
        work.add(level, dim, sweeps)
        return phi, mu

    smooth(lev, assembly, phi, mu, rhs1, rhs2, cfg.sweeps_lambda, cfg)
    work.add(level, dim, cfg.sweeps_lambda)
    r1, r2, _ = residual(assembly, phi, mu, rhs1, rhs2)

    coarse = hier.levels[level + 1].assembly
    assert coarse is not None
    phi_c = restrict(phi)
    mu_c = restrict(mu)
    n1_c, n2_c = coarse.apply_n(phi_c, mu_c)
    rhs1_c = restrict(r1) + n1_c
    rhs2_c = restrict(r2) + n2_c
    new_phi_c, new_mu_c = _cycle(
        hier, level + 1, phi_c.copy(), mu_c.copy(), rhs1_c, rhs2_c, cfg, work
    )
    phi.data += prolong(new_phi_c - phi_c).data
    mu.data += prolong(new_mu_c - mu_c).data

    smooth(lev, assembly, phi, mu, rhs1, rhs2, cfg.sweeps_lambda, cfg, reverse=True)
    work.add(level, dim, cfg.sweeps_lambda)
    return phi, mu


def v_cycle(
    hier: MgHierarchy,
    level: int,
    phi: CellField,
    mu: CellField,
    rhs1: CellField,
    rhs2: CellField,
    cfg: MgConfig,
) -> tuple[CellField, CellField]:
    """One FAS V-cycle from ``level`` down to the coarsest level; updates in place."""
    return _cycle(hier, level, phi, mu, rhs1, rhs2, cfg, _Work())


def solve(
    assembly: SystemAssembly,
    phi: CellField,
    mu: CellField,
    cfg: MgConfig,
) -> tuple[CellField, CellField, SolveReport]:
    """V-cycles until the combined residual drops to ``cfg.tol_tau``.

    BE/BDF2 with a non-constant mobility re-evaluate the face mobility at the latest iterate before
    every V-cycle.
    """
    phi = phi.copy()
    mu = mu.copy()
    hier = MgHierarchy.build(assembly.grid, cfg)
    hier.bind(assembly)
    rhs1, rhs2 = assembly.source
    _, _, r = residual(assembly, phi, mu, rhs1, rhs2)
    residuals = [r]
    work = _Work()
    cycles = 0
    while residuals[-1] > cfg.tol_tau:
        if cycles >= cfg.max_vcycles:
            raise ConvergenceError(
                f"no convergence after {cycles} V-cycles (residual {residuals[-1]:.3e})",
                residuals,
            )
        if assembly.lagged:
            assembly = assembly.refreshed(phi)
            hier.bind(assembly)
        _cycle(hier, 0, phi, mu, rhs1, rhs2, cfg, work)
        cycles += 1
        _, _, r = residual(assembly, phi, mu, rhs1, rhs2)
        residuals.append(r)
        log.debug("V-cycle %d: residual %.6e", cycles, r)
        if not math.isfinite(r):
            raise ConvergenceError(f"non-finite residual after {cycles} V-cycles", residuals)
    return phi, mu, SolveReport(cycles, residuals, work.units)


def _poisson_apply(psi: CellField, mob: FaceField) -> CellField:
    return -div_mobility_grad(mob, psi)


def _poisson_smooth(topo: _Topology, psi: CellField, rhs: CellField, mob: FaceField,
                    sweeps: int, cfg: MgConfig) -> None:
    h = topo.grid.spacing
    stack = np.ascontiguousarray(np.stack(mob.components))
    if cfg.ordering == "lexicographic":
        for _ in range(sweeps):
            kernels.poisson_sweep_serial(topo.lex, psi.data, rhs.data, stack, topo.plus,
                                         topo.minus, h * h)
        return
    sweep = kernels.poisson_sweep_parallel if cfg.parallel else kernels.poisson_sweep_serial
    for _ in range(sweeps):
        sweep(topo.red, psi.data, rhs.data, stack, topo.plus, topo.minus, h * h)
        sweep(topo.black, psi.data, rhs.data, stack, topo.plus, topo.minus, h * h)


def _poisson_cycle(hier: MgHierarchy, mobs: list[FaceField], level: int, psi: CellField,
                   rhs: CellField, cfg: MgConfig) -> None:
    topo = hier.levels[level].topology
    if level == len(hier.levels) - 1:
        sweeps = 2 * cfg.sweeps_lambda if level == 0 else cfg.coarse_sweeps
        _poisson_smooth(topo, psi, rhs, mobs[level], sweeps, cfg)
        psi.data -= mean(psi)
        return
    _poisson_smooth(topo, psi, rhs, mobs[level], cfg.sweeps_lambda, cfg)
    r = rhs - _poisson_apply(psi, mobs[level])
    r_c = restrict(r)
    r_c.data -= mean(r_c)
    e_c = CellField.zeros(r_c.grid)
    _poisson_cycle(hier, mobs, level + 1, e_c, r_c, cfg)
    psi.data += prolong(e_c).data
    _poisson_smooth(topo, psi, rhs, mobs[level], cfg.sweeps_lambda, cfg)


def solve_poisson(
    rhs: CellField,
    tol: float,
    mobility: FaceField | None = None,
    cfg: MgConfig | None = None,
) -> CellField:
    """Zero-mean solution of ``-div(D grad psi) = rhs`` by correction-scheme V-cycles."""
    cfg = cfg or MgConfig()
    grid = rhs.grid
    mob = mobility if mobility is not None else FaceField.constant(grid, 1.0)
    check_mobility(mob)
    hier = MgHierarchy.build(grid, cfg)
    mobs = [mob]
    for _ in hier.levels[1:]:
        mobs.append(restrict_faces(mobs[-1]))
    psi = CellField.zeros(grid)
    residuals = [norm_l2(rhs - _poisson_apply(psi, mob))]
    while residuals[-1] > tol:
        if len(residuals) > cfg.max_vcycles:
            raise ConvergenceError(
                f"Poisson solve: no convergence after {cfg.max_vcycles} V-cycles", residuals
            )
        _poisson_cycle(hier, mobs, 0, psi, rhs, cfg)
        psi.data -= mean(psi)
        residuals.append(norm_l2(rhs - _poisson_apply(psi, mob)))
        if not math.isfinite(residuals[-1]):
            raise ConvergenceError("Poisson solve: non-finite residual", residuals)
    log.debug("Poisson solve: %d V-cycles, residual %.3e", len(residuals) - 1, residuals[-1])
    return psi
