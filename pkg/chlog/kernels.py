"""Compiled per-cell relaxation kernels on flat periodic arrays.

Every kernel visits the cells listed in ``cells`` and reads neighbours through the index tables
``plus[a, c]`` / ``minus[a, c]`` (the periodic neighbour of cell ``c`` along array axis ``a``).
Face arrays ``mob[a, c]`` hold the face between ``c`` and ``plus[a, c]``.

The same Python implementations are compiled twice: serially (deterministic, also used for the
lexicographic ordering) and with ``parallel=True``. Only colour-independent visit lists may be
passed to the parallel variants.
"""

from __future__ import annotations

import math

import numpy as np
import numpy.typing as npt
from numba import njit, prange

IntArray = npt.NDArray[np.int64]
FloatArray = npt.NDArray[np.float64]


@njit(cache=True, fastmath=False)
def ln_delta_scalar(x: float, delta: float) -> float:
    if x > delta:
        return math.log(x)
    return math.log(delta) + (x - delta) / delta


@njit(cache=True, fastmath=False)
def fc_prime_scalar(phi: float, theta0: float, delta: float) -> float:
    return (ln_delta_scalar(1.0 + phi, delta) - ln_delta_scalar(1.0 - phi, delta)) / (
        2.0 * theta0
    )


@njit(cache=True, fastmath=False)
def fc_double_prime_scalar(phi: float, theta0: float, delta: float) -> float:
    plus = 1.0 + phi
    minus = 1.0 - phi
    inv_plus = 1.0 / plus if plus > delta else 1.0 / delta
    inv_minus = 1.0 / minus if minus > delta else 1.0 / delta
    return (inv_plus + inv_minus) / (2.0 * theta0)


@njit(cache=True, fastmath=False)
def local_block(
    kappa: float,
    gamma: float,
    conserved: bool,
    mob_sum: float,
    mob_cell: float,
    fpp: float,
    dim: int,
    inv_h2: float,
) -> tuple[float, float, float]:
    """Off-diagonal entries ``(a12, a21)`` of the unit-diagonal local block and its determinant.

    ``mob_sum`` is the sum of the 2 dim face mobilities around the cell (conserved dynamics);
    ``mob_cell`` the cell mobility of the Allen-Cahn block. With ``fpp > 0`` both off-diagonals
    have opposite signs, so ``det >= 1``.
    """
    if conserved:
        a12 = kappa * inv_h2 * mob_sum
    else:
        a12 = kappa * mob_cell
    a21 = -fpp - 2.0 * dim * gamma * inv_h2
    return a12, a21, 1.0 - a12 * a21


def _block_sweep(
    cells: IntArray,
    phi: FloatArray,
    mu: FloatArray,
    rhs1: FloatArray,
    rhs2: FloatArray,
    mob: FloatArray,
    plus: IntArray,
    minus: IntArray,
    kappa: float,
    gamma: float,
    shift: float,
    conserved: bool,
    theta0: float,
    delta: float,
    inv_h2: float,
) -> None:
    """One pass of the 2x2 block Gauss-Seidel update over ``cells``.

    Local system at cell c, with f_c' linearized about the current phi_c:
        phi + a12 mu = b1
        a21 phi + mu = b2
    solved by Cramer's rule. The expansive ``shift * phi`` term is lagged at the current iterate.
    """
    dim = plus.shape[0]
    for t in prange(cells.shape[0]):
        c = cells[t]
        msum = 0.0
        mflux = 0.0
        nsum = 0.0
        for a in range(dim):
            cp = plus[a, c]
            cm = minus[a, c]
            m_east = mob[a, c]
            m_west = mob[a, cm]
            msum += m_east + m_west
            mflux += m_east * mu[cp] + m_west * mu[cm]
            nsum += phi[cp] + phi[cm]
        p0 = phi[c]
        fp = fc_prime_scalar(p0, theta0, delta)
        fpp = fc_double_prime_scalar(p0, theta0, delta)
        a12, a21, det = local_block(kappa, gamma, conserved, msum, mob[0, c], fpp, dim, inv_h2)
        b1 = rhs1[c] + kappa * inv_h2 * mflux if conserved else rhs1[c]
        b2 = rhs2[c] + fp - p0 * fpp - shift * p0 - gamma * inv_h2 * nsum
        phi[c] = (b1 - a12 * b2) / det
        mu[c] = (b2 - a21 * b1) / det


def _poisson_sweep(
    cells: IntArray,
    psi: FloatArray,
    rhs: FloatArray,
    mob: FloatArray,
    plus: IntArray,
    minus: IntArray,
    h2: float,
) -> None:
    """Gauss-Seidel update of ``-div(D grad psi) = rhs`` over ``cells``."""
    dim = plus.shape[0]
    for t in prange(cells.shape[0]):
        c = cells[t]
        dsum = 0.0
        flux = 0.0
        for a in range(dim):
            cp = plus[a, c]
            cm = minus[a, c]
            d_east = mob[a, c]
            d_west = mob[a, cm]
            dsum += d_east + d_west
            flux += d_east * psi[cp] + d_west * psi[cm]
        psi[c] = (h2 * rhs[c] + flux) / dsum


block_sweep_serial = njit(cache=True)(_block_sweep)
block_sweep_parallel = njit(parallel=True)(_block_sweep)
poisson_sweep_serial = njit(cache=True)(_poisson_sweep)
poisson_sweep_parallel = njit(parallel=True)(_poisson_sweep)


def neighbor_tables(shape: tuple[int, ...]) -> tuple[IntArray, IntArray]:
    """Periodic ``(plus, minus)`` neighbour index tables of shape ``(dim, prod(shape))``."""
    idx = np.arange(int(np.prod(shape)), dtype=np.int64).reshape(shape)
    plus = np.stack([np.roll(idx, -1, axis=a).reshape(-1) for a in range(len(shape))])
    minus = np.stack([np.roll(idx, 1, axis=a).reshape(-1) for a in range(len(shape))])
    return np.ascontiguousarray(plus), np.ascontiguousarray(minus)


def colour_lists(shape: tuple[int, ...]) -> tuple[IntArray, IntArray]:
    """Flat indices of the red (even index sum) and black cells."""
    parity = np.indices(shape).sum(axis=0).reshape(-1) % 2
    red = np.flatnonzero(parity == 0).astype(np.int64)
    black = np.flatnonzero(parity == 1).astype(np.int64)
    return red, black
