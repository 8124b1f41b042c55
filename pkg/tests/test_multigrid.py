import math

import numpy as np
import pytest

from chlog import kernels
from chlog.grid import CellField, FaceField, GridSpec, inner_product, laplacian, mean
from chlog.multigrid import (
    ConvergenceError,
    MgConfig,
    MgHierarchy,
    prolong,
    residual,
    restrict,
    restrict_faces,
    smooth,
    solve,
    solve_poisson,
    v_cycle,
)
from chlog.potential import Mobility, ModelParams, fc_double_prime
from chlog.schemes import (
    SchemeKind,
    SchemeState,
    SystemAssembly,
    assemble_bdf2,
    assemble_bdf2es,
    assemble_be,
    assemble_cs1,
)

PARAMS = ModelParams(epsilon=0.1, theta0=3.0, delta=1e-5, stabilization_a=1.0 / 16.0)
ASSEMBLERS = {
    SchemeKind.CS1: assemble_cs1,
    SchemeKind.BE: assemble_be,
    SchemeKind.BDF2_ES: assemble_bdf2es,
    SchemeKind.BDF2: assemble_bdf2,
}


def _history(grid: GridSpec, seed: int) -> SchemeState:
    rng = np.random.default_rng(seed)
    phi_n = CellField(grid, rng.uniform(-0.6, 0.6, grid.size))
    phi_nm1 = phi_n + CellField(grid, rng.uniform(-0.05, 0.05, grid.size))
    state = SchemeState.initial(phi_n, PARAMS)
    state.phi_prev = phi_nm1
    return state


@pytest.mark.parametrize("dim", [2, 3])
def test_restrict_prolong_identity(dim: int) -> None:
    g = GridSpec(dim, 8, 1.0)
    rng = np.random.default_rng(11)
    u = CellField(g, rng.normal(size=g.size))
    np.testing.assert_allclose(restrict(prolong(u)).data, u.data, rtol=1e-12, atol=0.0)
    assert prolong(u).grid == g.refined()


def test_restrict_preserves_mean_and_averages_children() -> None:
    g = GridSpec(2, 8, 1.0)
    u = CellField(g, np.arange(64, dtype=float))
    c = restrict(u)
    assert math.isclose(mean(c), mean(u))
    # cells (0,0),(0,1),(1,0),(1,1) hold 0, 1, 8, 9
    assert c.view()[0, 0] == 4.5
    # the coarse grid would have 2 cells per axis
    with pytest.raises(ValueError):
        restrict(CellField.zeros(GridSpec(2, 4, 1.0)))


def test_restrict_faces_of_constant() -> None:
    g = GridSpec(3, 8, 1.0)
    c = restrict_faces(FaceField.constant(g, 0.7))
    assert c.grid == g.coarsened()
    assert all(np.allclose(comp, 0.7) for comp in c.components)


def test_hierarchy_depth() -> None:
    assert len(MgHierarchy.build(GridSpec(2, 32, 1.0), MgConfig()).levels) == 4
    assert len(MgHierarchy.build(GridSpec(2, 32, 1.0), MgConfig(coarsest_n=32)).levels) == 1
    assert len(MgHierarchy.build(GridSpec(3, 16, 1.0), MgConfig(coarsest_n=8)).levels) == 2
    with pytest.raises(ValueError, match="coarsest_n"):
        MgConfig(coarsest_n=2)


def test_mgconfig_validation() -> None:
    with pytest.raises(ValueError, match="ordering"):
        MgConfig(ordering="zebra")
    with pytest.raises(ValueError, match="sweeps_lambda"):
        MgConfig(sweeps_lambda=0)
    with pytest.raises(ValueError):
        MgConfig(ordering="lexicographic", parallel=True)


def test_poisson_against_dense_solve() -> None:
    g = GridSpec(2, 8, 1.0)
    eye = np.eye(g.size)
    lap = np.column_stack([laplacian(CellField(g, eye[:, j])).data for j in range(g.size)])
    rng = np.random.default_rng(12)
    rhs = CellField(g, rng.normal(size=g.size))
    rhs = rhs - mean(rhs)
    dense = np.linalg.lstsq(-lap, rhs.data, rcond=None)[0]
    psi = solve_poisson(rhs, 1e-12)
    np.testing.assert_allclose(psi.data, dense, atol=1e-10)


def test_smoother_fixed_point() -> None:
    g = GridSpec(2, 8, 1.0)
    state = _history(g, 13)
    assembly = assemble_cs1(state, PARAMS, 1e-3)
    rng = np.random.default_rng(14)
    phi = CellField(g, rng.uniform(-0.5, 0.5, g.size))
    mu = CellField(g, rng.normal(size=g.size))
    rhs1, rhs2 = assembly.apply_n(phi, mu)
    level = MgHierarchy.build(g, MgConfig()).levels[0]
    p, m = phi.copy(), mu.copy()
    smooth(level, assembly, p, m, rhs1, rhs2, 1, MgConfig())
    np.testing.assert_allclose(p.data, phi.data, atol=1e-12)
    np.testing.assert_allclose(m.data, mu.data, atol=1e-10)


def test_serial_and_parallel_sweeps_agree() -> None:
    g = GridSpec(2, 16, 1.0)
    state = _history(g, 15)
    assembly = assemble_be(state, PARAMS, 1e-3)
    level = MgHierarchy.build(g, MgConfig()).levels[0]
    rhs1, rhs2 = assembly.source
    results = []
    for parallel in (False, True):
        p, m = state.phi_curr.copy(), state.mu.copy()
        smooth(level, assembly, p, m, rhs1, rhs2, 3, MgConfig(parallel=parallel))
        results.append((p.data, m.data))
    np.testing.assert_array_equal(results[0][0], results[1][0])
    np.testing.assert_array_equal(results[0][1], results[1][1])


def test_solve_residual_history() -> None:
    g = GridSpec(2, 16, 1.0)
    state = _history(g, 16)
    assembly = assemble_cs1(state, PARAMS, 1e-2)
    cfg = MgConfig()
    phi, mu, report = solve(assembly, state.phi_curr, state.mu, cfg)
    _, _, r0 = residual(assembly, state.phi_curr, state.mu, *assembly.source)
    assert report.residuals[0] == r0
    assert report.final_residual <= cfg.tol_tau
    assert report.vcycles == len(report.residuals) - 1
    assert all(b < a for a, b in zip(report.residuals, report.residuals[1:]))
    assert report.work_units > 0.0
    # conserved dynamics keep the mean
    assert abs(mean(phi) - mean(state.phi_curr)) < 1e-9


def test_lexicographic_ordering_reaches_same_solution() -> None:
    g = GridSpec(2, 16, 1.0)
    state = _history(g, 17)
    assembly = assemble_cs1(state, PARAMS, 1e-2)
    phi_rb, _, _ = solve(assembly, state.phi_curr, state.mu, MgConfig(tol_tau=1e-11))
    phi_lex, _, _ = solve(
        assembly, state.phi_curr, state.mu, MgConfig(tol_tau=1e-11, ordering="lexicographic")
    )
    np.testing.assert_allclose(phi_rb.data, phi_lex.data, atol=1e-9)


def test_convergence_error_carries_history() -> None:
    g = GridSpec(2, 16, 1.0)
    state = _history(g, 18)
    assembly = assemble_cs1(state, PARAMS, 1e-2)
    with pytest.raises(ConvergenceError) as info:
        solve(assembly, state.phi_curr, state.mu, MgConfig(tol_tau=1e-30, max_vcycles=2))
    assert len(info.value.residuals) == 3


def test_lagged_mobility_converges() -> None:
    params = ModelParams(epsilon=0.1, theta0=3.0, mobility=Mobility("quadratic", 1.0))
    g = GridSpec(2, 16, 1.0)
    rng = np.random.default_rng(19)
    state = SchemeState.initial(CellField(g, rng.uniform(-0.5, 0.5, g.size)), params)
    assembly = assemble_be(state, params, 1e-3)
    phi, mu, report = solve(assembly, state.phi_curr, state.mu, MgConfig())
    # the mobility of the last V-cycle is one iterate behind; refresh and check the residual
    _, _, r = residual(assembly.refreshed(phi), phi, mu, *assembly.source)
    assert r < 1e-6
    assert abs(mean(phi) - mean(state.phi_curr)) < 1e-9


def _dense_newton(assembly: SystemAssembly, phi0: CellField, mu0: CellField) -> np.ndarray:
    """Newton's method on the full 2N system with the exact Jacobian (constant mobility)."""
    g = assembly.grid
    n = g.size
    eye = np.eye(n)
    lap = np.column_stack([laplacian(CellField(g, eye[:, j])).data for j in range(n)])
    m = assembly.params.mobility.value
    s1, s2 = assembly.source
    x = np.concatenate([phi0.data, mu0.data])
    for _ in range(50):
        phi = CellField(g, x[:n])
        mu = CellField(g, x[n:])
        n1, n2 = assembly.apply_n(phi, mu)
        f = np.concatenate([n1.data - s1.data, n2.data - s2.data])
        jac = np.block(
            [
                [eye, -assembly.kappa * m * lap],
                [
                    np.diag(-fc_double_prime(phi.data, assembly.params) + assembly.shift)
                    + assembly.gamma * lap,
                    eye,
                ],
            ]
        )
        dx = np.linalg.solve(jac, -f)
        x = x + dx
        if np.max(np.abs(dx)) < 1e-14:
            break
    return x[:n]


@pytest.mark.parametrize("kind", list(ASSEMBLERS))
def test_multigrid_matches_dense_newton(kind: SchemeKind) -> None:
    g = GridSpec(2, 8, 1.0)
    cfg = MgConfig(tol_tau=1e-12)
    for seed in range(20):
        state = _history(g, 100 + seed)
        assembly = ASSEMBLERS[kind](state, PARAMS, 1e-3)
        phi, _, _ = solve(assembly, state.phi_curr, state.mu, cfg)
        oracle = _dense_newton(assembly, state.phi_curr, state.mu)
        np.testing.assert_allclose(phi.data, oracle, atol=1e-8, rtol=0.0)


@pytest.mark.parametrize("dim", [2, 3])
def test_prolong_is_adjoint_of_restrict(dim: int) -> None:
    fine = GridSpec(dim, 8, 1.0)
    rng = np.random.default_rng(20)
    u = CellField(fine.coarsened(), rng.normal(size=fine.coarsened().size))
    v = CellField(fine, rng.normal(size=fine.size))
    assert math.isclose(inner_product(prolong(u), v), inner_product(u, restrict(v)), rel_tol=1e-12)
    # unweighted sums pick up the 2^dim children per coarse cell
    assert math.isclose(
        float(np.dot(prolong(u).data, v.data)),
        2.0**dim * float(np.dot(u.data, restrict(v).data)),
        rel_tol=1e-12,
    )


@pytest.mark.parametrize("kind", list(ASSEMBLERS))
def test_residual_is_affine_in_mu(kind: SchemeKind) -> None:
    g = GridSpec(2, 8, 1.0)
    state = _history(g, 21)
    assembly = ASSEMBLERS[kind](state, PARAMS, 1e-3)
    rng = np.random.default_rng(22)
    phi = state.phi_curr
    mu = CellField(g, rng.normal(size=g.size))
    nu = CellField(g, rng.normal(size=g.size))
    rhs1, rhs2 = assembly.source
    r1_0, r2_0, _ = residual(assembly, phi, mu, rhs1, rhs2)
    r1_1, r2_1, _ = residual(assembly, phi, mu + nu, rhs1, rhs2)
    r1_t, r2_t, _ = residual(assembly, phi, mu + 2.5 * nu, rhs1, rhs2)
    np.testing.assert_allclose(r1_t.data, (r1_0 + 2.5 * (r1_1 - r1_0)).data, atol=1e-10)
    np.testing.assert_allclose(r2_t.data, (r2_0 + 2.5 * (r2_1 - r2_0)).data, atol=1e-10)


@pytest.mark.parametrize("conserved", [True, False])
def test_local_block_determinant_at_least_one(conserved: bool) -> None:
    rng = np.random.default_rng(23)
    for _ in range(200):
        fpp = rng.uniform(1e-3, 1e5)
        kappa = rng.uniform(1e-6, 1.0)
        gamma = rng.uniform(0.0, 1e-2)
        a12, a21, det = kernels.local_block(
            kappa, gamma, conserved, rng.uniform(0.1, 8.0), rng.uniform(0.1, 2.0), fpp, 3, 4096.0
        )
        assert a12 > 0.0 > a21
        assert det >= 1.0
        assert math.isclose(det, 1.0 - a12 * a21)


@pytest.mark.parametrize("kind", list(ASSEMBLERS))
def test_v_cycle_keeps_exact_solution(kind: SchemeKind) -> None:
    g = GridSpec(2, 16, 1.0)
    state = _history(g, 24)
    assembly = ASSEMBLERS[kind](state, PARAMS, 1e-3)
    rng = np.random.default_rng(25)
    phi = CellField(g, rng.uniform(-0.5, 0.5, g.size))
    mu = CellField(g, rng.normal(size=g.size))
    rhs1, rhs2 = assembly.apply_n(phi, mu)
    cfg = MgConfig()
    hier = MgHierarchy.build(g, cfg)
    hier.bind(assembly)
    p, m = phi.copy(), mu.copy()
    v_cycle(hier, 0, p, m, rhs1, rhs2, cfg)
    np.testing.assert_allclose(p.data, phi.data, atol=1e-10)
    np.testing.assert_allclose(m.data, mu.data, atol=1e-8)


def test_reverse_smoothing_fixed_point() -> None:
    g = GridSpec(2, 8, 1.0)
    state = _history(g, 26)
    assembly = assemble_be(state, PARAMS, 1e-3)
    rng = np.random.default_rng(27)
    phi = CellField(g, rng.uniform(-0.5, 0.5, g.size))
    mu = CellField(g, rng.normal(size=g.size))
    rhs1, rhs2 = assembly.apply_n(phi, mu)
    level = MgHierarchy.build(g, MgConfig()).levels[0]
    for ordering in ("red-black", "lexicographic"):
        cfg = MgConfig(ordering=ordering)
        p, m = phi.copy(), mu.copy()
        smooth(level, assembly, p, m, rhs1, rhs2, 1, cfg, reverse=True)
        np.testing.assert_allclose(p.data, phi.data, atol=1e-12)
        np.testing.assert_allclose(m.data, mu.data, atol=1e-10)


def test_work_units_weight_levels_by_size() -> None:
    g = GridSpec(2, 16, 1.0)
    state = _history(g, 28)
    assembly = assemble_cs1(state, PARAMS, 1e-2)
    cfg = MgConfig()
    _, _, report = solve(assembly, state.phi_curr, state.mu, cfg)
    # levels 16, 8, 4: 2 + 2 sweeps on 16, 2 + 2 on 8 (a quarter), 20 on 4 (a sixteenth)
    assert report.vcycles > 0
    assert report.work_units == pytest.approx(report.vcycles * 6.25, rel=1e-12)
