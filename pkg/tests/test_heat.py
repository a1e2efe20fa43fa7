import json
import math

import numpy as np
import pytest

from rodchain.control import mode_mixture, synthesize_control
from rodchain.heat import (
    assemble,
    duality_check,
    euler_step,
    run,
    simulate,
    step,
    write_report_json,
    write_snapshots_csv,
)
from rodchain.instances import constant_instance, polynomial_instance, unit_instance
from rodchain.model import StateVector, h_norm
from rodchain.spectrum import eigenfunction, eigenpairs, eigenvalues
from rodchain.tables import read_csv

# closed-form oracle (tests/oracles.py: unit_roots)
UNIT_LAM = [2.9606955375798681689, 39.478417604357434475]


@pytest.fixture(scope="module")
def unit_op():
    return assemble(unit_instance(), 256)


@pytest.fixture(scope="module")
def unit_pairs(unit_op):
    return eigenpairs(unit_op.config, 16, grid=list(unit_op.grids))


def test_too_coarse():
    with pytest.raises(ValueError, match="coarse"):
        assemble(unit_instance(), 8)


def test_discrete_eigenvalues_second_order():
    errs = []
    for cells in (32, 64, 128):
        d = assemble(unit_instance(), cells).eigenvalues(2)
        errs.append(np.abs(d - UNIT_LAM) / UNIT_LAM)
    errs = np.array(errs)
    ratios = errs[:-1] / errs[1:]
    assert np.all(ratios > 3.5) and np.all(ratios < 4.5)


def test_discrete_eigenvalues_close(unit_op):
    np.testing.assert_allclose(unit_op.eigenvalues(2), UNIT_LAM, rtol=1e-4)


def test_row_sums_single_rod():
    op = assemble(constant_instance([0.0, 1.0], []), 32)
    sums = np.asarray(op.stiffness.sum(axis=1)).ravel()
    np.testing.assert_allclose(sums[1:-1], 0.0, atol=1e-10)
    assert sums[0] > 0 and sums[-1] > 0


def test_operator_symmetric_nonnegative():
    op = assemble(polynomial_instance(2), 32)
    A = op.stiffness.toarray()
    np.testing.assert_allclose(A, A.T, rtol=0, atol=1e-12)
    assert np.min(np.linalg.eigvalsh(A)) > 0


def test_linear_steady_state_across_mass():
    # piecewise-linear u with constant flux sigma u' = 1 is steady for h = u(L)
    config = constant_instance([0.0, 0.4, 1.0], [2.0], sigma=[1.0, 3.0])
    op = assemble(config, 32)
    g0, g1 = op.grids
    v0 = g0
    v1 = 0.4 + (g1 - 0.4) / 3.0
    hL = float(v1[-1])
    u = op.from_state(StateVector(op.grids, (v0, v1), np.array([0.4])))
    np.testing.assert_allclose(op.stiffness @ u - op.inject * hL, 0.0, atol=1e-12)
    u2 = step(u, op, (hL, hL), 0.01)
    np.testing.assert_allclose(u2, u, atol=1e-13)


def test_zero_state_stays_zero(unit_op):
    u = np.zeros(unit_op.size)
    assert np.all(step(u, unit_op, (0.0, 0.0), 0.01) == 0.0)
    assert np.all(euler_step(u, unit_op, 0.0, 0.01) == 0.0)


def test_eigenmode_one_step(unit_op, unit_pairs):
    p = unit_pairs[0]
    u = unit_op.from_state(p.state)
    dt = 1e-3
    u1 = step(u, unit_op, (0.0, 0.0), dt)
    expect = math.exp(-p.lam * dt) * u
    # O(dt^3) from the time step, O(dx^2) from sampling the continuous mode
    assert np.max(np.abs(u1 - expect)) <= 1e-6 * np.max(np.abs(u))


def test_step_rejects_bad_dt(unit_op):
    with pytest.raises(ValueError):
        step(np.zeros(unit_op.size), unit_op, (0.0, 0.0), 0.0)


def test_trace_shared_with_mass(unit_op, unit_pairs):
    st = unit_op.to_state(unit_op.from_state(unit_pairs[2].state))
    assert st.values[0][-1] == st.z[0] == st.values[1][0]


def test_energy_dissipation():
    op = assemble(polynomial_instance(1), 64)
    rng = np.random.default_rng(3)
    u = rng.standard_normal(op.size)
    e = op.energy(u)
    for k in range(50):
        u = step(u, op, (0.0, 0.0), 0.01) if k > 1 else euler_step(u, op, 0.0, 0.01)
        e_new = op.energy(u)
        assert e_new <= e * (1 + 1e-14)
        e = e_new


def test_free_decay_of_second_mode(unit_op, unit_pairs):
    p = unit_pairs[1]
    T = 0.1
    rep = simulate(p.state, None, unit_op, T=T, dt=1e-3)
    assert rep.terminal_norm == pytest.approx(math.exp(-UNIT_LAM[1] * T), rel=0.01)
    assert rep.free_norm == rep.terminal_norm


def test_single_mode_null_control(unit_op, unit_pairs):
    config = unit_op.config
    U0 = unit_pairs[0].state
    plan = synthesize_control(config, U0, unit_pairs, 1.0, n_tr=1)
    rep = simulate(U0, plan, unit_op, dt=1e-3, pairs=unit_pairs[:1])
    assert abs(rep.projections[0]) <= 1e-3 * rep.initial_norm


def test_zero_plan_zero_trajectory(unit_op, unit_pairs):
    config = unit_op.config
    U0 = unit_pairs[0].state.scaled(0.0)
    plan = synthesize_control(config, U0, unit_pairs, 1.0, n_tr=4)
    rep = simulate(U0, plan, unit_op, dt=1e-2, snapshot_every=10)
    assert rep.terminal_norm == 0.0
    for _, u, h in rep.snapshots:
        assert np.all(u == 0.0) and h == 0.0


def test_controlled_beats_free(unit_op, unit_pairs):
    config = unit_op.config
    U0 = mode_mixture(unit_pairs, [1.0, -0.5, 0.3, 0.2])
    plan = synthesize_control(config, U0, unit_pairs, 0.5, n_tr=6)
    rep = simulate(U0, plan, unit_op, dt=1e-3, pairs=unit_pairs[:6])
    assert rep.terminal_norm <= rep.free_norm
    assert np.max(np.abs(rep.projections)) <= 1e-4 * rep.initial_norm


def test_run_requires_integer_steps(unit_op):
    with pytest.raises(ValueError):
        run(np.zeros(unit_op.size), unit_op, None, 1.0, 0.3)


def test_from_state_grid_mismatch(unit_op):
    other = assemble(unit_instance(), 128)
    with pytest.raises(ValueError):
        unit_op.from_state(other.to_state(np.zeros(other.size)))


def _decay_error(config, cells, dt, T=1.0):
    op = assemble(config, cells)
    lam = eigenvalues(config, 1)[0]
    p = eigenfunction(config, lam, grid=list(op.grids))
    rep = simulate(p.state, None, op, T=T, dt=dt)
    return abs(rep.terminal_norm - math.exp(-lam * T))


@pytest.mark.parametrize("key", ["unit", 1])
def test_space_order(key):
    config = unit_instance() if key == "unit" else polynomial_instance(key)
    e1 = _decay_error(config, 32, 1e-4)
    e2 = _decay_error(config, 64, 1e-4)
    assert e1 / e2 >= 3.5


@pytest.mark.parametrize("key", ["unit", 1])
def test_time_order(key):
    config = unit_instance() if key == "unit" else polynomial_instance(key)
    e1 = _decay_error(config, 512, 0.02)
    e2 = _decay_error(config, 512, 0.01)
    assert e1 / e2 >= 3.5


def test_duality_moment_identity(unit_op, unit_pairs):
    config = unit_op.config
    U0 = mode_mixture(unit_pairs, [1.0, 0.5, -0.3])
    plan = synthesize_control(config, U0, unit_pairs, 1.0, n_tr=6)
    for n in range(6):
        c = np.zeros(n + 1)
        c[n] = 1.0
        rep = duality_check(config, U0, c, plan, unit_pairs)
        assert rep.residual <= 1e-6


def test_duality_without_control(unit_op, unit_pairs):
    config = unit_op.config
    U0 = mode_mixture(unit_pairs, [1.0, 0.5, -0.3, 0.2])
    c = np.array([0.3, -1.0, 2.0, 0.5])
    rep = duality_check(config, U0, c, None, unit_pairs, T=0.05)
    expect = sum(a * ci * math.exp(-p.lam * 0.05)
                 for a, ci, p in zip([1.0, 0.5, -0.3, 0.2], c, unit_pairs))
    assert rep.lhs == pytest.approx(expect, rel=1e-8)
    assert rep.lhs_modal == pytest.approx(expect, rel=1e-8)
    assert rep.rhs == 0.0


def test_duality_zero_state(unit_op, unit_pairs):
    config = unit_op.config
    U0 = unit_pairs[0].state.scaled(0.0)
    plan = synthesize_control(config, U0, unit_pairs, 1.0, n_tr=3)
    rep = duality_check(config, U0, [1.0, 1.0, 1.0], plan, unit_pairs)
    assert rep.lhs == 0.0 and rep.rhs == 0.0


def test_outputs(tmp_path):
    config = unit_instance()
    op = assemble(config, 16)
    pairs = eigenpairs(config, 2, grid=list(op.grids))
    rep = simulate(pairs[0].state, None, op, T=0.1, dt=0.01, pairs=pairs, snapshot_every=5)
    write_snapshots_csv(op, rep.snapshots, tmp_path / "s.csv")
    tab = read_csv(tmp_path / "s.csv")
    assert list(tab) == ["t", "x", "u", "z_1"]
    assert len(tab["t"]) == 3 * 33
    write_report_json(rep, tmp_path / "r.json")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["terminal_norm"] == rep.terminal_norm
    assert h_norm(config, rep.terminal) == rep.terminal_norm
