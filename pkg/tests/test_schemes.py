import numpy as np
import pytest
from scipy.optimize import brentq

from chlog.grid import CellField, GridSpec, mean
from chlog.multigrid import MgConfig
from chlog.potential import Mobility, ModelParams, chemical_potential, discrete_energy, fc_prime
from chlog.schemes import (
    SchemeKind,
    SchemeState,
    ac1_step,
    assemble_ac1,
    assemble_bdf2,
    assemble_bdf2es,
    assemble_be,
    assemble_cs1,
    bdf2_bootstrap,
    step,
)

PARAMS = ModelParams(epsilon=0.05, theta0=3.0, delta=1e-5)
MG = MgConfig()


def _random_state(grid: GridSpec, seed: int, params: ModelParams = PARAMS) -> SchemeState:
    rng = np.random.default_rng(seed)
    return SchemeState.initial(CellField(grid, 0.2 + rng.uniform(-0.05, 0.05, grid.size)), params)


def test_scheme_kind_properties() -> None:
    assert SchemeKind.BDF2.second_order and SchemeKind.BDF2_ES.second_order
    assert not SchemeKind.CS1.second_order
    assert not SchemeKind.AC1.conserved
    assert SchemeKind("BE") is SchemeKind.BE


def test_second_order_assembly_needs_history() -> None:
    state = _random_state(GridSpec(2, 8, 1.0), 1)
    with pytest.raises(ValueError, match="missing history"):
        assemble_bdf2(state, PARAMS, 1e-3)
    with pytest.raises(ValueError, match="missing history"):
        assemble_bdf2es(state, PARAMS, 1e-3)


def test_negative_dt_rejected() -> None:
    state = _random_state(GridSpec(2, 8, 1.0), 2)
    with pytest.raises(ValueError, match="dt"):
        assemble_cs1(state, PARAMS, -1e-3)


def test_backward_euler_differs_from_convex_splitting_by_phi() -> None:
    g = GridSpec(2, 8, 1.0)
    state = _random_state(g, 3)
    rng = np.random.default_rng(4)
    phi = CellField(g, rng.uniform(-0.5, 0.5, g.size))
    mu = CellField(g, rng.normal(size=g.size))
    cs1 = assemble_cs1(state, PARAMS, 1e-3).apply_n(phi, mu)
    be = assemble_be(state, PARAMS, 1e-3).apply_n(phi, mu)
    np.testing.assert_array_equal(be[0].data, cs1[0].data)
    np.testing.assert_allclose(be[1].data - cs1[1].data, phi.data, atol=1e-14)


def test_bdf2_source_telescopes_for_equal_history() -> None:
    g = GridSpec(2, 8, 1.0)
    state = _random_state(g, 5)
    state.phi_prev = state.phi_curr.copy()
    assembly = assemble_bdf2(state, PARAMS, 1e-3)
    np.testing.assert_allclose(assembly.source[0].data, state.phi_curr.data, rtol=1e-15)
    assert np.isclose(assembly.kappa, 2e-3 / 3.0)


def test_bdf2es_stabilization_enters_gamma() -> None:
    g = GridSpec(2, 8, 1.0)
    state = _random_state(g, 6)
    state.phi_prev = state.phi_curr.copy()
    params = ModelParams(epsilon=0.05, theta0=3.0, stabilization_a=0.25)
    assembly = assemble_bdf2es(state, params, 1e-2)
    assert np.isclose(assembly.gamma, 0.05**2 + 0.25 * 1e-2)
    assert assembly.shift == 0.0


def test_zero_step_returns_chemical_potential() -> None:
    g = GridSpec(2, 16, 1.0)
    state = _random_state(g, 7)
    new, report = step(state, SchemeKind.CS1, PARAMS, 0.0, MG)
    np.testing.assert_allclose(new.phi_curr.data, state.phi_curr.data, atol=1e-12)
    np.testing.assert_allclose(
        new.mu.data, chemical_potential(state.phi_curr, PARAMS).data, atol=1e-9
    )
    assert report.vcycles == 0


def test_zero_field_is_a_fixed_point() -> None:
    g = GridSpec(2, 16, 1.0)
    state = SchemeState.initial(CellField.zeros(g), ModelParams(epsilon=0.05, theta0=0.5))
    for _ in range(3):
        state, report = step(state, SchemeKind.CS1, ModelParams(epsilon=0.05, theta0=0.5), 1e-2, MG)
        assert report.vcycles == 0
    assert np.all(state.phi_curr.data == 0.0)


@pytest.mark.parametrize("kind", [SchemeKind.CS1, SchemeKind.BE, SchemeKind.BDF2_ES, SchemeKind.BDF2])
def test_mass_conservation_and_bounds(kind: SchemeKind) -> None:
    g = GridSpec(2, 32, 1.0)
    state = _random_state(g, 8)
    m0 = mean(state.phi_curr)
    for _ in range(20):
        state, report = step(state, kind, PARAMS, 1e-3, MG)
        assert abs(mean(state.phi_curr) - m0) <= 1e-8
        assert -1.0 < report.phi_min <= report.phi_max < 1.0
        assert report.final_residual <= MG.tol_tau
    assert state.step_index == 20
    assert np.isclose(state.time, 20 * 1e-3)


def test_bdf2_first_step_is_convex_splitting() -> None:
    g = GridSpec(2, 16, 1.0)
    state = _random_state(g, 9)
    boot, report = bdf2_bootstrap(state, PARAMS, 1e-3, MG)
    assert report.scheme is SchemeKind.CS1
    assert boot.phi_prev is not None
    np.testing.assert_array_equal(boot.phi_prev.data, state.phi_curr.data)
    cs1, _ = step(state, SchemeKind.CS1, PARAMS, 1e-3, MG)
    np.testing.assert_array_equal(boot.phi_curr.data, cs1.phi_curr.data)
    nxt, report = step(boot, SchemeKind.BDF2, PARAMS, 1e-3, MG)
    assert report.scheme is SchemeKind.BDF2
    with pytest.raises(ValueError):
        bdf2_bootstrap(nxt, PARAMS, 1e-3, MG)


def test_convex_splitting_energy_decreases() -> None:
    g = GridSpec(2, 32, 1.0)
    state = _random_state(g, 10)
    energies = [discrete_energy(state.phi_curr, PARAMS)[0]]
    for _ in range(10):
        state, _ = step(state, SchemeKind.CS1, PARAMS, 1e-2, MG)
        energies.append(discrete_energy(state.phi_curr, PARAMS)[0])
    assert all(b <= a + 1e-10 for a, b in zip(energies, energies[1:]))


def test_quadratic_mobility_runs_conservatively() -> None:
    params = ModelParams(epsilon=0.05, theta0=3.0, mobility=Mobility("quadratic", 1.0))
    g = GridSpec(2, 16, 1.0)
    state = _random_state(g, 11, params)
    m0 = mean(state.phi_curr)
    for kind in (SchemeKind.CS1, SchemeKind.BE):
        s = state
        for _ in range(5):
            s, _ = step(s, kind, params, 1e-3, MG)
        assert abs(mean(s.phi_curr) - m0) <= 1e-8


def test_allen_cahn_requires_constant_mobility() -> None:
    params = ModelParams(epsilon=0.05, theta0=3.0, mobility=Mobility("quadratic", 1.0))
    state = _random_state(GridSpec(2, 8, 1.0), 12, params)
    with pytest.raises(ValueError, match="constant mobility"):
        assemble_ac1(state, params, 1e-3)


def test_allen_cahn_energy_decreases_and_mass_moves() -> None:
    g = GridSpec(2, 16, 1.0)
    state = _random_state(g, 13)
    m0 = mean(state.phi_curr)
    energies = [discrete_energy(state.phi_curr, PARAMS)[0]]
    for _ in range(10):
        state, report = ac1_step(state, PARAMS, 1e-2, MG)
        assert report.scheme is SchemeKind.AC1
        energies.append(discrete_energy(state.phi_curr, PARAMS)[0])
    assert all(b <= a + 1e-10 for a, b in zip(energies, energies[1:]))
    assert abs(mean(state.phi_curr) - m0) > 1e-6
    assert state.phi_prev is None


def test_allen_cahn_constant_field_matches_scalar_root() -> None:
    # a constant field stays constant; phi + dt (fc'(phi) - c) = c with M = 1
    g = GridSpec(2, 8, 1.0)
    c, dt = 0.3, 0.5
    state = SchemeState.initial(CellField.constant(g, c), PARAMS)
    state, _ = ac1_step(state, PARAMS, dt, MgConfig(tol_tau=1e-12))
    root = brentq(lambda p: p + dt * (fc_prime(p, PARAMS) - c) - c, 0.0, 0.99, xtol=1e-15)
    assert root == pytest.approx(0.38278099557188, abs=1e-12)
    np.testing.assert_allclose(state.phi_curr.data, root, atol=1e-8, rtol=0.0)


def test_allen_cahn_stays_separated_from_pure_phases() -> None:
    g = GridSpec(2, 32, 1.0)
    rng = np.random.default_rng(14)
    state = SchemeState.initial(CellField(g, rng.uniform(-0.9, 0.9, g.size)), PARAMS)
    for _ in range(100):
        state, _ = ac1_step(state, PARAMS, 1e-2, MG)
        assert np.max(np.abs(state.phi_curr.data)) <= 1.0 - 1e-3


@pytest.mark.parametrize("kind", [SchemeKind.CS1, SchemeKind.BDF2])
def test_mass_drift_over_long_run(kind: SchemeKind) -> None:
    g = GridSpec(2, 32, 1.0)
    state = _random_state(g, 15)
    m0 = mean(state.phi_curr)
    for _ in range(1000):
        state, _ = step(state, kind, PARAMS, 1e-3, MG)
        assert abs(mean(state.phi_curr) - m0) <= 1e-8
