"""Periodic cell-centred grids with difference/average operators, inner products and norms.

Fields are stored as flat row-major float64 arrays; ``CellField.view()`` reshapes them to
``(n,) * dim`` with the x index last (x fastest). Face-centred quantities keep one flat array per
array axis: component ``k`` holds the face between cell ``i`` and cell ``i + 1`` along array axis
``k`` at the storage position of cell ``i``. Periodic wrap is done with ``np.roll``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import numpy.typing as npt

if TYPE_CHECKING:
    from .multigrid import MgConfig

log = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

# Tolerated |mean| of a right-hand side handed to the zero-mean Poisson solve, relative to max(1, |rhs|_inf).
ZERO_MEAN_RTOL = 1e-8


class GridMismatchError(ValueError):
    """Raised when two fields living on different grids are combined."""


class InvalidMobilityError(ValueError):
    """Raised when a face mobility is not strictly positive and finite."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid with ``n`` cells per axis on the box ``(0, length)^dim``."""

    dim: int
    n: int
    length: float = 1.0

    def __post_init__(self) -> None:
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.n < 4 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 4, got {self.n}")
        if not (math.isfinite(self.length) and self.length > 0.0):
            raise ValueError(f"length must be positive and finite, got {self.length}")
        if self.spacing * self.n != self.length:
            raise ValueError(f"length / n is not exact in float64 for n={self.n}, L={self.length}")

    @property
    def spacing(self) -> float:
        return self.length / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def volume(self) -> float:
        return self.length**self.dim

    def coarsened(self) -> GridSpec:
        if self.n < 8:
            raise ValueError(f"cannot coarsen a grid with n={self.n} below 4 cells")
        return GridSpec(self.dim, self.n // 2, self.length)

    def refined(self) -> GridSpec:
        return GridSpec(self.dim, self.n * 2, self.length)


def _check_same(a: GridSpec, b: GridSpec) -> None:
    if a != b:
        raise GridMismatchError(f"grid mismatch: {a} vs {b}")


@dataclass
class CellField:
    """Scalar values at the cell centres of ``grid``."""

    grid: GridSpec
    data: FloatArray

    def __post_init__(self) -> None:
        data = np.ascontiguousarray(self.data, dtype=np.float64).reshape(-1)
        if data.size != self.grid.size:
            raise ValueError(f"expected {self.grid.size} values, got {data.size}")
        self.data = data

    @classmethod
    def zeros(cls, grid: GridSpec) -> CellField:
        return cls(grid, np.zeros(grid.size))

    @classmethod
    def constant(cls, grid: GridSpec, value: float) -> CellField:
        return cls(grid, np.full(grid.size, float(value)))

    def view(self) -> FloatArray:
        return self.data.reshape(self.grid.shape)

    def copy(self) -> CellField:
        return CellField(self.grid, self.data.copy())

    def min(self) -> float:
        return float(self.data.min())

    def max(self) -> float:
        return float(self.data.max())

    def _other(self, other: CellField | float) -> FloatArray | float:
        if isinstance(other, CellField):
            _check_same(self.grid, other.grid)
            return other.data
        return float(other)

    def __add__(self, other: CellField | float) -> CellField:
        return CellField(self.grid, self.data + self._other(other))

    __radd__ = __add__

    def __sub__(self, other: CellField | float) -> CellField:
        return CellField(self.grid, self.data - self._other(other))

    def __rsub__(self, other: float) -> CellField:
        return CellField(self.grid, float(other) - self.data)

    def __mul__(self, other: CellField | float) -> CellField:
        return CellField(self.grid, self.data * self._other(other))

    __rmul__ = __mul__

    def __neg__(self) -> CellField:
        return CellField(self.grid, -self.data)


@dataclass
class FaceField:
    """Per-axis face-centred values; ``components[k]`` is indexed like the cells (see module doc)."""

    grid: GridSpec
    components: tuple[FloatArray, ...]

    def __post_init__(self) -> None:
        if len(self.components) != self.grid.dim:
            raise ValueError(f"expected {self.grid.dim} face components, got {len(self.components)}")
        comps = []
        for comp in self.components:
            arr = np.ascontiguousarray(comp, dtype=np.float64).reshape(-1)
            if arr.size != self.grid.size:
                raise ValueError(f"face component has {arr.size} values, expected {self.grid.size}")
            comps.append(arr)
        self.components = tuple(comps)

    @classmethod
    def constant(cls, grid: GridSpec, value: float) -> FaceField:
        return cls(grid, tuple(np.full(grid.size, float(value)) for _ in range(grid.dim)))

    def views(self) -> tuple[FloatArray, ...]:
        return tuple(c.reshape(self.grid.shape) for c in self.components)

    def __mul__(self, other: FaceField) -> FaceField:
        _check_same(self.grid, other.grid)
        return FaceField(self.grid, tuple(a * b for a, b in zip(self.components, other.components)))


def cell_coordinates(grid: GridSpec) -> tuple[FloatArray, ...]:
    """Cell-centre coordinates ``(x, y[, z])`` broadcast to the field view shape.

    Cell ``i`` (1-based) sits at ``(i - 1/2) h``; x varies along the last array axis.
    """
    h = grid.spacing
    centres = (np.arange(grid.n, dtype=np.float64) + 0.5) * h
    mesh = np.meshgrid(*([centres] * grid.dim), indexing="ij")
    return tuple(mesh[::-1])


def face_average(u: CellField) -> FaceField:
    v = u.view()
    return FaceField(
        u.grid,
        tuple((0.5 * (np.roll(v, -1, axis=a) + v)).reshape(-1) for a in range(u.grid.dim)),
    )


def gradient(u: CellField) -> FaceField:
    v = u.view()
    h = u.grid.spacing
    return FaceField(
        u.grid,
        tuple(((np.roll(v, -1, axis=a) - v) / h).reshape(-1) for a in range(u.grid.dim)),
    )


def divergence(f: FaceField) -> CellField:
    h = f.grid.spacing
    out = np.zeros(f.grid.shape)
    for a, fv in enumerate(f.views()):
        out += (fv - np.roll(fv, 1, axis=a)) / h
    return CellField(f.grid, out)


def laplacian(u: CellField) -> CellField:
    """The (2 dim + 1)-point periodic Laplacian, evaluated as ``divergence(gradient(u))``."""
    return divergence(gradient(u))


def check_mobility(m: FaceField) -> None:
    for comp in m.components:
        if not np.all(np.isfinite(comp)) or np.any(comp <= 0.0):
            raise InvalidMobilityError("face mobility must be strictly positive and finite")


def div_mobility_grad(m: FaceField, u: CellField) -> CellField:
    _check_same(m.grid, u.grid)
    check_mobility(m)
    return divergence(m * gradient(u))


def inner_product(u: CellField, v: CellField) -> float:
    _check_same(u.grid, v.grid)
    return u.grid.cell_volume * float(np.dot(u.data, v.data))


def face_inner_product(f: FaceField, g: FaceField) -> float:
    """Sum over axes of ``<a_k(f_k g_k), 1>``, the face products averaged back to the cells."""
    _check_same(f.grid, g.grid)
    total = 0.0
    for a, (fv, gv) in enumerate(zip(f.views(), g.views())):
        w = fv * gv
        total += float(np.sum(0.5 * (w + np.roll(w, 1, axis=a))))
    return f.grid.cell_volume * total


def mean(u: CellField) -> float:
    return u.grid.cell_volume / u.grid.volume * float(np.sum(u.data))


def norm_l2(u: CellField) -> float:
    return math.sqrt(inner_product(u, u))


def norm_lp(u: CellField, p: float) -> float:
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    return float((u.grid.cell_volume * np.sum(np.abs(u.data) ** p)) ** (1.0 / p))


def norm_linf(u: CellField) -> float:
    return float(np.max(np.abs(u.data)))


def norm_grad_l2(u: CellField) -> float:
    g = gradient(u)
    return math.sqrt(face_inner_product(g, g))


def norm_grad_lp(u: CellField, p: float) -> float:
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    g = gradient(u)
    total = 0.0
    for a, gv in enumerate(g.views()):
        w = np.abs(gv) ** p
        total += float(np.sum(0.5 * (w + np.roll(w, 1, axis=a))))
    return float((u.grid.cell_volume * total) ** (1.0 / p))


def norm_h1(u: CellField) -> float:
    return math.sqrt(norm_l2(u) ** 2 + norm_grad_l2(u) ** 2)


def norm_h2(u: CellField) -> float:
    return math.sqrt(norm_h1(u) ** 2 + norm_l2(laplacian(u)) ** 2)


def solve_poisson_zero_mean(
    rhs: CellField,
    tol: float,
    mobility: FaceField | None = None,
    cfg: MgConfig | None = None,
) -> CellField:
    """Solve ``-div(D grad psi) = rhs`` for the zero-mean ``psi`` (``D = 1`` unless ``mobility``).

    ``rhs`` must have zero mean to ``ZERO_MEAN_RTOL``; the rounding-level remainder is projected out
    before the multigrid solve.
    """
    from .multigrid import solve_poisson

    rhs_mean = mean(rhs)
    if abs(rhs_mean) > ZERO_MEAN_RTOL * max(1.0, norm_linf(rhs)):
        raise ValueError(f"right-hand side must have zero mean, got mean={rhs_mean:.3e}")
    return solve_poisson(rhs - rhs_mean, tol, mobility=mobility, cfg=cfg)


def norm_h_minus_one(
    u: CellField,
    tol: float = 1e-10,
    mobility: FaceField | None = None,
    cfg: MgConfig | None = None,
) -> float:
    psi = solve_poisson_zero_mean(u, tol, mobility=mobility, cfg=cfg)
    return math.sqrt(max(inner_product(u, psi), 0.0))
