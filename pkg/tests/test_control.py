import dataclasses
import json
import math

import mpmath as mp
import numpy as np
import pytest
from scipy.integrate import quad

from rodchain.control import (
    BiorthogonalRefusal,
    PrecisionPolicy,
    biorthogonal,
    fourier_coefficients,
    gram_matrix,
    mode_mixture,
    read_control_csv,
    synthesize_control,
    time_grid,
    verify_biorthogonality,
    write_control_csv,
    write_plan_json,
)
from rodchain.instances import unit_instance
from rodchain.model import StateVector, zero_state
from rodchain.spectrum import eigenpairs, eigenvalues

# <x(1-x) with z = 1/4, Phi_n> on the unit instance (tests/oracles.py: unit_projection)
PROFILE_COEFFS = [0.30778000658381449301, 0.0, 0.033196683143826052523, 0.0,
                  0.000031053092331518381854]


@pytest.fixture(scope="module")
def unit_pairs():
    config = unit_instance()
    return config, eigenpairs(config, 20, grid=[np.linspace(r.left, r.right, 513) for r in config.rods])


def test_gram_single_long_horizon():
    assert gram_matrix([1.0], 50.0)[0, 0] == pytest.approx(0.5, rel=1e-15)


def test_gram_two_modes():
    G = gram_matrix([1.0, 2.0], 1.0)
    e = math.exp
    expect = [[(1 - e(-2)) / 2, (1 - e(-3)) / 3], [(1 - e(-3)) / 3, (1 - e(-4)) / 4]]
    np.testing.assert_allclose(G, expect, rtol=1e-15)


def test_gram_symmetric_positive(unit_pairs):
    _, pairs = unit_pairs
    G = gram_matrix([p.lam for p in pairs[:6]], 1.0)
    np.testing.assert_array_equal(G, G.T)
    np.linalg.cholesky(G)


def test_gram_weighted_closed_form():
    # int t^2 e^{-s t} on (0, 1), s = 3
    s = 3.0
    expect = (2 - math.exp(-s) * (s * s + 2 * s + 2)) / s**3
    assert gram_matrix([1.0, 2.0], 1.0, 2.0)[0, 1] == pytest.approx(expect, rel=1e-14)


def test_gram_rejects_bad_input():
    with pytest.raises(ValueError):
        gram_matrix([2.0, 1.0], 1.0)
    with pytest.raises(ValueError):
        gram_matrix([1.0], 0.0)


def test_single_mode_family():
    lam, T = 3.0, 1.0
    fam = biorthogonal([lam], T)
    G = gram_matrix([lam], T)[0, 0]
    t = np.linspace(0, T, 7)
    np.testing.assert_allclose(fam.evaluate(t)[0], np.exp(-lam * t) / G, rtol=1e-14)


def test_two_mode_family_by_quadrature():
    fam = biorthogonal([1.0, 2.0], 1.0)
    for n in range(2):
        for m, lm in enumerate((1.0, 2.0)):
            val, _ = quad(lambda t: fam.evaluate([t])[n, 0] * math.exp(-lm * t), 0, 1,
                          epsabs=1e-13, epsrel=1e-13)
            assert abs(val - (n == m)) <= 1e-12
    assert fam.residual_sup <= 1e-12
    assert np.max(fam.quad_residual) <= 1e-12


def test_unit_ten_modes(unit_pairs):
    _, pairs = unit_pairs
    fam = biorthogonal([p.lam for p in pairs[:10]], 1.0)
    assert fam.residual_sup <= 1e-8
    assert np.max(fam.quad_residual) <= 1e-8
    assert fam.condition > 1e6
    assert fam.precision.startswith("mp")


def test_quadrature_check_independent_of_closed_form():
    # corrupt C slightly: the quadrature check must see it
    fam = biorthogonal([1.0, 4.0, 9.0], 1.0, verify=False)
    with mp.workdps(fam.dps):
        fam.coeffs[0, 0] *= 1 + mp.mpf("1e-6")
    assert np.max(verify_biorthogonality(fam)) > 1e-8


def test_theta_norms_grow(unit_pairs):
    _, pairs = unit_pairs
    fam = biorthogonal([p.lam for p in pairs[:8]], 1.0, verify=False)
    assert np.all(fam.theta_norms > 0)
    assert fam.theta_norms[-1] > fam.theta_norms[0]


def test_refusal_above_cap():
    with pytest.raises(BiorthogonalRefusal):
        biorthogonal(np.arange(1, 41) ** 2 * 10.0, 1.0)


def test_refusal_beyond_precision():
    policy = PrecisionPolicy(max_dps=40)
    lams = eigenvalues(unit_instance(), 12)
    with pytest.raises(BiorthogonalRefusal, match="digits"):
        biorthogonal(lams, 1.0, policy)


def test_fourier_single_mode(unit_pairs):
    config, pairs = unit_pairs
    a = fourier_coefficients(config, pairs[2].state, pairs[:6])
    np.testing.assert_allclose(a, [0, 0, 1, 0, 0, 0], atol=1e-9)


def test_fourier_linearity(unit_pairs):
    config, pairs = unit_pairs
    U = mode_mixture(pairs, [2.0, 1.0])
    a = fourier_coefficients(config, U, pairs[:5])
    np.testing.assert_allclose(a, [2, 1, 0, 0, 0], atol=1e-9)


def test_fourier_profile_matches_quadrature_oracle(unit_pairs):
    config = unit_pairs[0]
    grid = [np.linspace(r.left, r.right, 4097) for r in config.rods]
    pairs = eigenpairs(config, 5, grid=grid)
    U = StateVector(tuple(grid), tuple(g * (1 - g) for g in grid), np.array([0.25]))
    a = fourier_coefficients(config, U, pairs)
    np.testing.assert_allclose(a, PROFILE_COEFFS, atol=1e-8)


def test_fourier_grid_mismatch(unit_pairs):
    config, pairs = unit_pairs
    with pytest.raises(ValueError):
        fourier_coefficients(config, zero_state(config, 64), pairs[:2])


def test_zero_initial_state_gives_zero_control(unit_pairs):
    config, pairs = unit_pairs
    U = pairs[0].state.scaled(0.0)
    plan = synthesize_control(config, U, pairs, 1.0, n_tr=6)
    assert np.all(plan.h == 0.0)
    assert np.all(plan.moment_residuals == 0.0)


def test_single_mode_closed_form(unit_pairs):
    config, pairs = unit_pairs
    p = pairs[0]
    T = 1.0
    plan = synthesize_control(config, p.state, pairs, T, n_tr=1, weight_power=0.0)
    G = (1 - math.exp(-2 * p.lam * T)) / (2 * p.lam)
    s = plan.T - plan.t
    expect = math.exp(-p.lam * T) * np.exp(-p.lam * s) / G / p.terminal_flux
    np.testing.assert_allclose(plan.h, expect, rtol=1e-10)
    assert plan.moment_residuals[0] <= 1e-10


def test_eight_mode_moments(unit_pairs):
    config, pairs = unit_pairs
    U = mode_mixture(pairs, [1, -0.5, 0.3, 0.2, -0.1, 0.1, 0.05, -0.05])
    for p in (0.0, 2.0):
        plan = synthesize_control(config, U, pairs, 1.0, n_tr=8, weight_power=p)
        assert np.all(plan.moment_residuals <= 1e-7)


def test_scale_invariance(unit_pairs):
    config, pairs = unit_pairs
    U = mode_mixture(pairs, [1, 0.5, -0.25, 0.1])
    scales = [-2.0, 0.5, 3.0, -1.0, 7.0, 0.1] + [1.0] * (len(pairs) - 6)
    scaled = [dataclasses.replace(p, state=p.state.scaled(c), terminal_flux=p.terminal_flux * c)
              for p, c in zip(pairs, scales)]
    h1 = synthesize_control(config, U, pairs, 1.0, n_tr=6).h
    h2 = synthesize_control(config, U, scaled, 1.0, n_tr=6).h
    assert np.max(np.abs(h1 - h2)) <= 1e-10 * np.max(np.abs(h1))


def test_weighted_control_vanishes_at_horizon(unit_pairs):
    config, pairs = unit_pairs
    plan = synthesize_control(config, pairs[0].state, pairs, 1.0, n_tr=4)
    assert plan.h[-1] == 0.0
    assert abs(plan(0.999)) < 1e-3 * np.max(np.abs(plan.h))


def test_plan_call_matches_samples(unit_pairs):
    config, pairs = unit_pairs
    plan = synthesize_control(config, pairs[1].state, pairs, 1.0, n_tr=4)
    np.testing.assert_allclose(plan(plan.t[::50]), plan.h[::50], rtol=1e-12, atol=1e-14)


def test_tail_bound_reported(unit_pairs):
    config, pairs = unit_pairs
    U = mode_mixture(pairs, [1.0] * 8)
    plan = synthesize_control(config, U, pairs, 1.0, n_tr=6)
    expect = abs(plan.coefficients[6]) * math.exp(-pairs[6].lam) + abs(plan.coefficients[7]) * math.exp(
        -pairs[7].lam)
    assert plan.tail_free == pytest.approx(expect, rel=1e-6)
    assert plan.tail_bound >= plan.tail_free


def test_time_grid_density():
    t = time_grid(1.0, 1000.0)
    assert len(t) % 2 == 1
    assert (t[1] - t[0]) * 1000.0 <= 1 / 20


def test_summability_of_inverse_eigenvalues():
    lams = eigenvalues(unit_instance(), 80)
    partial = np.cumsum(1.0 / lams)
    # Weyl: sum_{n > N} 1/lam_n ~ 1/(pi^2 N)
    assert partial[-1] - partial[39] <= 2.0 / (math.pi**2 * 40)


def test_output_round_trip(tmp_path, unit_pairs):
    config, pairs = unit_pairs
    plan = synthesize_control(config, pairs[0].state, pairs, 1.0, n_tr=3)
    write_control_csv(plan, tmp_path / "h.csv")
    t, h = read_control_csv(tmp_path / "h.csv")
    np.testing.assert_array_equal(t, plan.t)
    np.testing.assert_array_equal(h, plan.h)
    write_plan_json(plan, tmp_path / "plan.json")
    doc = json.loads((tmp_path / "plan.json").read_text())
    assert doc["n_tr"] == 3
    assert doc["condition_number"] == plan.family.condition


def test_n_tr_range(unit_pairs):
    config, pairs = unit_pairs
    with pytest.raises(ValueError):
        synthesize_control(config, pairs[0].state, pairs[:3], 1.0, n_tr=4)
