"""Flory-Huggins logarithmic potential, its ln_delta regularization and the discrete energies.

Convention: f(phi) = f_c(phi) - f_e(phi) with
    f_c(phi) = 1/(2 theta0) [(1 - phi) ln(1 - phi) + (1 + phi) ln(1 + phi)],  f_e(phi) = (phi^2 - 1) / 2.
The convex part is evaluated through ln_delta, so every function here is total on the real line.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import overload

import numpy as np

from .grid import (
    CellField,
    FaceField,
    FloatArray,
    face_average,
    laplacian,
    norm_grad_l2,
    norm_h_minus_one,
    norm_l2,
)

log = logging.getLogger(__name__)

MOBILITY_KINDS = ("constant", "quadratic", "callable")


@dataclass(frozen=True)
class Mobility:
    """Mobility model M(phi).

    ``constant``: M = value. ``quadratic``: M = value * max(1 - phi^2 / 2, 1/2), strictly positive
    everywhere. ``callable``: M = func(phi), vectorized over numpy arrays.
    """

    kind: str = "constant"
    value: float = 1.0
    func: Callable[[FloatArray], FloatArray] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in MOBILITY_KINDS:
            raise ValueError(f"mobility kind must be one of {MOBILITY_KINDS}, got {self.kind!r}")
        if not (math.isfinite(self.value) and self.value > 0.0):
            raise ValueError(f"mobility value must be positive, got {self.value}")
        if self.kind == "callable" and self.func is None:
            raise ValueError("callable mobility requires func")

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def __call__(self, phi: FloatArray) -> FloatArray:
        if self.kind == "constant":
            return np.full_like(phi, self.value, dtype=np.float64)
        if self.kind == "quadratic":
            return self.value * np.maximum(1.0 - 0.5 * phi * phi, 0.5)
        assert self.func is not None
        return np.asarray(self.func(phi), dtype=np.float64)

    def at_faces(self, phi: CellField) -> FaceField:
        """M evaluated at the face averages of ``phi``."""
        if self.kind == "constant":
            return FaceField.constant(phi.grid, self.value)
        avg = face_average(phi)
        return FaceField(phi.grid, tuple(self(c) for c in avg.components))


@dataclass(frozen=True)
class ModelParams:
    epsilon: float
    theta0: float
    delta: float = 1e-5
    stabilization_a: float = 0.0
    mobility: Mobility = field(default_factory=Mobility)

    def __post_init__(self) -> None:
        if not self.epsilon > 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not self.theta0 > 0.0:
            raise ValueError(f"theta0 must be positive, got {self.theta0}")
        if not 0.0 < self.delta < 0.25:
            raise ValueError(f"delta must lie in (0, 1/4), got {self.delta}")
        if not self.stabilization_a >= 0.0:
            raise ValueError(f"stabilization_a must be >= 0, got {self.stabilization_a}")


@overload
def ln_delta(x: float, delta: float) -> float: ...


@overload
def ln_delta(x: FloatArray, delta: float) -> FloatArray: ...


def ln_delta(x: float | FloatArray, delta: float) -> float | FloatArray:
    """ln(x) for x > delta, continued linearly (C^1) below delta."""
    xa = np.asarray(x, dtype=np.float64)
    out = np.where(xa > delta, np.log(np.maximum(xa, delta)), math.log(delta) + (xa - delta) / delta)
    return float(out) if out.ndim == 0 else out


def _ln_delta_antiderivative(x: FloatArray, delta: float) -> FloatArray:
    # x ln x - x above delta, the matching quadratic below; continuous at the seam.
    log_branch = x * np.log(np.maximum(x, delta)) - x
    lin_branch = x * math.log(delta) + (x - delta) ** 2 / (2.0 * delta) - delta
    return np.where(x > delta, log_branch, lin_branch)


def _as_output(out: FloatArray) -> float | FloatArray:
    return float(out) if out.ndim == 0 else out


@overload
def fc_prime(phi: float, params: ModelParams) -> float: ...


@overload
def fc_prime(phi: FloatArray, params: ModelParams) -> FloatArray: ...


def fc_prime(phi: float | FloatArray, params: ModelParams) -> float | FloatArray:
    p = np.asarray(phi, dtype=np.float64)
    d = params.delta
    out = (ln_delta(1.0 + p, d) - ln_delta(1.0 - p, d)) / (2.0 * params.theta0)
    return _as_output(np.asarray(out))


@overload
def fc_double_prime(phi: float, params: ModelParams) -> float: ...


@overload
def fc_double_prime(phi: FloatArray, params: ModelParams) -> FloatArray: ...


def fc_double_prime(phi: float | FloatArray, params: ModelParams) -> float | FloatArray:
    p = np.asarray(phi, dtype=np.float64)
    d = params.delta
    plus = 1.0 + p
    minus = 1.0 - p
    inv_plus = np.where(plus > d, 1.0 / np.maximum(plus, d), 1.0 / d)
    inv_minus = np.where(minus > d, 1.0 / np.maximum(minus, d), 1.0 / d)
    return _as_output((inv_plus + inv_minus) / (2.0 * params.theta0))


def unregularized_fc_prime(phi: float | FloatArray, theta0: float) -> float | FloatArray:
    """The plain logarithmic f_c'; only defined for |phi| < 1."""
    p = np.asarray(phi, dtype=np.float64)
    return _as_output((np.log(1.0 + p) - np.log(1.0 - p)) / (2.0 * theta0))


def fc(phi: float | FloatArray, params: ModelParams) -> float | FloatArray:
    """Regularized convex part; equals f_c wherever |phi| <= 1 - delta and f_c(0) = 0."""
    p = np.asarray(phi, dtype=np.float64)
    d = params.delta
    g = _ln_delta_antiderivative(1.0 + p, d) + _ln_delta_antiderivative(1.0 - p, d) + 2.0
    return _as_output(g / (2.0 * params.theta0))


def fe(phi: float | FloatArray) -> float | FloatArray:
    p = np.asarray(phi, dtype=np.float64)
    return _as_output(0.5 * (p * p - 1.0))


def fe_prime(phi: float | FloatArray) -> float | FloatArray:
    p = np.asarray(phi, dtype=np.float64)
    return _as_output(p.copy())


def is_saturated(phi: CellField, delta: float) -> bool:
    return bool(np.max(np.abs(phi.data)) > 1.0 - delta)


def chemical_potential(phi: CellField, params: ModelParams) -> CellField:
    """mu = f_c'(phi) - phi - eps^2 lap(phi)."""
    lap = laplacian(phi)
    return CellField(
        phi.grid,
        fc_prime(phi.data, params) - phi.data - params.epsilon**2 * lap.data,
    )


def discrete_energy(phi: CellField, params: ModelParams) -> tuple[float, bool]:
    """Return ``(E_h(phi), saturated)``; ``saturated`` flags any |phi| > 1 - delta."""
    grid = phi.grid
    bulk = grid.cell_volume * float(np.sum(fc(phi.data, params) - fe(phi.data)))
    interface = 0.5 * params.epsilon**2 * norm_grad_l2(phi) ** 2
    saturated = is_saturated(phi, params.delta)
    if saturated:
        log.debug("energy evaluated outside (-1 + delta, 1 - delta)")
    return bulk + interface, saturated


def modified_energy_bdf2(
    phi_new: CellField,
    phi_old: CellField,
    dt: float,
    params: ModelParams,
    tol: float = 1e-10,
) -> float:
    """E_h(phi_new) + |phi_new - phi_old|_{-1,h}^2 / (4 dt) + |phi_new - phi_old|_2^2 / 2."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    energy, _ = discrete_energy(phi_new, params)
    diff = phi_new - phi_old
    return (
        energy
        + norm_h_minus_one(diff, tol) ** 2 / (4.0 * dt)
        + 0.5 * norm_l2(diff) ** 2
    )
