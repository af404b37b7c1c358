import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.sparse.linalg import eigsh

from conftest import domain
from taylorhel.grid import Field, GridSpec, pair_22
from taylorhel.harmonic import decompose
from taylorhel.mhd import (
    ConfigError,
    InitialCondition,
    MHDOperators,
    SimConfig,
    SimState,
    dissipation_bound_check,
    energy_inequality,
    helicity_balance,
    ideal_limit_study,
    initial_field,
    run,
    step,
)
from taylorhel.potential import vector_potential

GRID = GridSpec.cube(16)


def cfg(**kw):
    base = SimConfig(grid=GRID, eta=1e-2, t_end=0.25, initial=InitialCondition(field="linked", velocity="abc", u_amplitude=0.2))
    return replace(base, **kw)


@pytest.fixture(scope="module")
def kinematic_run():
    return run(cfg(), domain=domain("solid_torus", 16))


def test_ideal_frozen_flow_conserves_upsilon():
    res = run(cfg(eta=0.0), domain=domain("solid_torus", 16))
    u0 = res.history[0].upsilon
    assert all(abs(r.upsilon - u0) <= 1e-12 * max(1.0, abs(u0)) for r in res.history)


def test_step_balance_is_exact(kinematic_run):
    h = kinematic_run.history
    for r in h:
        assert abs(r.upsilon - h[0].upsilon + r.D_step) <= 1e-12 * abs(h[0].upsilon)
    # trapezoidal dissipation integral is a second-order approximation of the same quantity
    assert abs(helicity_balance(h)[-1]) < 1e-3


def test_fluxes_and_harmonic_part_are_conserved(kinematic_run):
    res = kinematic_run
    f0 = np.array(res.history[0].fluxes)
    for r in res.history:
        assert np.max(np.abs(np.array(r.fluxes) - f0)) <= 1e-14
    c0 = decompose(res.B0, res.basis).coefficients
    c1 = decompose(res.state.B, res.basis).coefficients
    assert np.max(np.abs(c1 - c0)) <= 1e-14


def test_constrained_transport_keeps_divergence(kinematic_run):
    assert max(r.div_B for r in kinematic_run.history) <= 1e-12
    assert max(r.div_u for r in kinematic_run.history) <= 1e-12


def test_resistive_decay_matches_crank_nicolson_factor(torus16):
    # oracle: an eigenvector of the discrete curl-curl decays by the Crank-Nicolson amplification factor
    c, atlas, basis = torus16
    ops = MHDOperators(c)
    mu, vec = eigsh(ops.curlcurl.astype(float), k=1, which="LM")
    B = Field(2, vec[:, 0], c)
    config = SimConfig(grid=GRID, eta=1e-2, mode="kinematic")
    dt = 0.1 * c.h**2 / config.eta
    state = SimState(0.0, 0, B, Field.zeros(c, 2), vector_potential(B, basis))
    for _ in range(5):
        state = step(ops, state, config, dt)
    z = dt * config.eta * mu[0] / c.h**2
    factor = ((1 - z / 2) / (1 + z / 2)) ** 5
    assert np.allclose(state.B.values, factor * B.values, atol=1e-12)


def test_coupled_run_respects_energy_and_bound():
    config = cfg(mode="coupled", nu=1e-2, t_end=0.2, initial=InitialCondition(field="linked", amplitude=0.5, harmonic=(0.1,), velocity="abc", u_amplitude=0.5))
    res = run(config, domain=domain("solid_torus", 16))
    ok, excess = energy_inequality(res.history)
    assert ok and excess <= 0
    holds, margin = dissipation_bound_check(res)
    assert holds and margin > 0


def test_runs_are_deterministic():
    a = run(cfg(t_end=0.1), domain=domain("solid_torus", 16))
    b = run(cfg(t_end=0.1), domain=domain("solid_torus", 16))
    assert [r.values() for r in a.history] == [r.values() for r in b.history]


def test_initial_field_properties(torus16):
    c, atlas, basis = torus16
    config = cfg(initial=InitialCondition(field="abc", amplitude=2.0, harmonic=(0.5,), velocity="abc", u_amplitude=0.3))
    ops = MHDOperators(c)
    B, u = initial_field(config, c, basis, ops)
    dec = decompose(B, basis)
    assert dec.coefficients[0] == pytest.approx(0.5, abs=1e-12)
    peak = np.max(np.linalg.norm(ops.cell_from_faces(dec.B_sigma.values), axis=1))
    assert peak == pytest.approx(2.0)
    assert np.max(np.abs(u.values)) / c.h**2 == pytest.approx(0.3)
    assert pair_22(c, u, u) > 0


@pytest.mark.parametrize(
    "bad",
    [
        {"eta": -1.0},
        {"nu": float("nan")},
        {"dt": 0.0},
        {"mode": "turbulent"},
        {"integrator": "rk4"},
        {"cadence": 0},
        {"initial": InitialCondition(field="vortex")},
        {"initial": InitialCondition(seed=-3)},
    ],
)
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        cfg(**bad).validate()


def test_dt_above_stability_bound_rejected():
    with pytest.raises(ConfigError):
        run(cfg(dt=1.0), domain=domain("solid_torus", 16))


def test_ideal_limit_table_shape():
    base = cfg(t_end=0.1, cadence=2)
    tab = ideal_limit_study(base, [1e-2, 1e-3, 0.0], domain=domain("solid_torus", 16))
    assert tab.etas.tolist() == [1e-2, 1e-3, 0.0]
    assert tab.monotone() and math.isfinite(tab.slope)
    assert tab.max_dU[-1] <= 1e-12
    with pytest.raises(ConfigError):
        ideal_limit_study(base, [1e-2, 1e-3])
