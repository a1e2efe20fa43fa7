import json
import math

import mpmath as mp
import numpy as np
import pytest

from rodchain.schrodinger import (
    ExcludedInstance,
    SchrodingerInstance,
    branch_residuals,
    characteristic,
    dirichlet_nus,
    excluded_p,
    gap_and_derivative_check,
    gap_bound,
    observability_lhs,
    observability_ratio,
    observability_rhs,
    raw_eigenfunction,
    raw_norm_sq,
    run_suite,
    schrodinger_spectrum,
    write_report_json,
)
from rodchain.spectrum import eigenvalues

from test_spectrum import UNIT_EIGENVALUES

L1 = 1 / math.sqrt(2)
# l1 = 1/sqrt(2): lam_n and Phi_n'(0) (tests/oracles.py: unit_roots, unit_mode)
IRR_EIGENVALUES = [3.5276626119782123835, 22.541779223963337914, 81.285231388328399729,
                   121.79337604884022035, 180.68441165858208167, 318.56021456900138647]
IRR_DERIV0 = [1.6288789510475967126, 7.6680709913454778804, 14.961548886269624287,
              2.5570352851639657988, 22.447168204315193354, 29.930889468973203905]


@pytest.fixture(scope="module")
def irr_modes():
    return schrodinger_spectrum(SchrodingerInstance(L1), 61)


@pytest.fixture(scope="module")
def half_modes():
    return schrodinger_spectrum(SchrodingerInstance(0.5), 61)


def test_half_matches_rod_chain_oracle(half_modes):
    lams = [m.lam for m in half_modes[:20]]
    np.testing.assert_allclose(lams, UNIT_EIGENVALUES, rtol=1e-10)
    assert SchrodingerInstance(0.5).diophantine_excluded


def test_half_matches_rod_chain_solver(half_modes):
    inst = SchrodingerInstance(0.5)
    np.testing.assert_allclose([m.lam for m in half_modes[:30]],
                               eigenvalues(inst.to_config(), 30), rtol=1e-10)


def test_irrational_matches_oracle(irr_modes):
    np.testing.assert_allclose([m.lam for m in irr_modes[:6]], IRR_EIGENVALUES, rtol=1e-12)
    np.testing.assert_allclose([m.derivative0 for m in irr_modes[:6]], IRR_DERIV0, rtol=1e-10)
    assert not SchrodingerInstance(L1).diophantine_excluded


def test_irrational_matches_rod_chain_solver(irr_modes):
    lams = eigenvalues(SchrodingerInstance(L1).to_config(), 20)
    np.testing.assert_allclose([m.lam for m in irr_modes[:20]], lams, rtol=1e-10)


def test_irrational_roots_simple(irr_modes):
    nus = np.array([m.nu for m in irr_modes])
    assert np.all(np.diff(nus) > 1e-3)
    h = 1e-7
    for nu in nus:
        assert characteristic(nu - h, L1) * characteristic(nu + h, L1) < 0


def test_interlacing(irr_modes):
    nus = np.array([m.nu for m in irr_modes])
    d = dirichlet_nus(L1, len(nus))
    assert nus[0] <= d[0]
    assert np.all(nus[1:] >= d[:-1] * (1 - 1e-14))
    assert np.all(nus[1:] <= d[1:] * (1 + 1e-14))


@pytest.mark.parametrize("l1", [0.2, L1, 0.9])
def test_first_eigenvalue_below_rod_dirichlet(l1):
    lam1 = schrodinger_spectrum(SchrodingerInstance(l1), 1)[0].lam
    assert lam1 < min((math.pi / l1) ** 2, (math.pi / (1 - l1)) ** 2)


def test_unit_norm_eigenfunctions(irr_modes):
    for m in irr_modes[:5]:
        assert m.z == pytest.approx(float(raw_eigenfunction([L1], m.nu, L1)[0]) * m.derivative0,
                                    rel=1e-12)
        assert m.values[1] > 0


def test_raw_norm_against_quadrature():
    nu, l1 = 7.3, 0.3
    mp.mp.dps = 30
    f = lambda x: (mp.sin(nu * x) / nu if x <= l1 else
                   mp.sin(nu * x) / nu - mp.sin(nu * l1) * mp.sin(nu * (x - l1))) ** 2
    expect = mp.quad(f, [0, l1, 1]) + (mp.sin(nu * l1) / nu) ** 2
    assert raw_norm_sq(nu, l1) == pytest.approx(float(expect), rel=1e-13)


def test_derived_branch_residual_bounded(irr_modes):
    r = branch_residuals(irr_modes, L1, "derived")
    k = np.array([m.k for m in irr_modes])
    b = np.array([m.branch for m in irr_modes])
    s = b == 0
    assert np.max(r[k >= 10]) <= 3.0
    assert np.median(r[s & (k >= 30)]) <= 2 * np.median(r[s & (k >= 10) & (k <= 20)])


def test_published_branch_residual_bounded(irr_modes):
    # published shift 1/(l_b k pi); tan(nu l_b) = 1/nu gives 1/(k pi), so the
    # residual times k^2 grows like k (1/l_b - 1)/pi
    r = branch_residuals(irr_modes, L1, "published")
    k = np.array([m.k for m in irr_modes])
    s = np.array([m.branch for m in irr_modes]) == 0
    assert np.median(r[s & (k >= 30)]) <= 2 * np.median(r[s & (k >= 10) & (k <= 20)])


def test_published_branch_residual_linear_growth(irr_modes):
    r = branch_residuals(irr_modes, L1, "published")
    k = np.array([m.k for m in irr_modes])
    s = (np.array([m.branch for m in irr_modes]) == 0) & (k >= 10)
    slope = (1 / L1 - 1) / math.pi
    assert np.median(r[s] / k[s]) == pytest.approx(slope, rel=0.05)


def test_beurling_density(irr_modes):
    nus = np.array([m.nu for m in irr_modes])
    assert len(nus) / nus[-1] == pytest.approx(1 / math.pi, rel=0.05)


def test_gap_bound_value():
    assert gap_bound(L1) == pytest.approx(4.0, rel=1e-14)
    assert gap_bound(0.25) == pytest.approx(2 / 0.75**2, rel=1e-14)


def test_gap_and_product_within(irr_modes):
    rep = gap_and_derivative_check(irr_modes, SchrodingerInstance(L1), gap_range=(30, 60))
    assert rep.gap_ratio >= 0.8
    assert rep.within(rep.deriv_sin)


def test_equivalence_window(irr_modes):
    # claimed: |Phi_n'(0)|/n, n |sin| and their product all lie in [0.2, 5]
    rep = gap_and_derivative_check(irr_modes, SchrodingerInstance(L1))
    assert rep.within(rep.deriv_over_n) and rep.within(rep.n_sin) and rep.within(rep.deriv_sin)


def test_excluded_refusal(half_modes):
    with pytest.raises(ExcludedInstance, match="1/2"):
        gap_and_derivative_check(half_modes, SchrodingerInstance(0.5))


def test_too_few_modes(irr_modes):
    with pytest.raises(ValueError):
        gap_and_derivative_check(irr_modes[:50], SchrodingerInstance(L1))


@pytest.mark.parametrize("l1,p", [(0.5, 1), (0.75, 3), (999999 / 1000000, 999999),
                                  (999998 / 999999, 999998), (L1, None), (1 / 3, None),
                                  (0.5 + 2e-9, None)])
def test_excluded_p(l1, p):
    assert excluded_p(l1) == p


def test_bad_l1():
    with pytest.raises(ValueError):
        SchrodingerInstance(1.0)


def test_single_mode_observability(irr_modes):
    m = irr_modes[0]
    T = 1.3
    assert observability_lhs(irr_modes, [1.0], T) == pytest.approx(T * m.derivative0**2, rel=1e-12)
    assert observability_lhs(irr_modes, [1.0], T) / observability_rhs(irr_modes, [1.0]) == \
        pytest.approx(T * m.derivative0**2 / m.lam, rel=1e-12)


def test_two_mode_observability_closed_form(irr_modes):
    a, b = 1.0 + 0.5j, -0.3 + 2.0j
    T = 0.7
    m1, m2 = irr_modes[:2]
    u, v = a * m1.derivative0, b * m2.derivative0
    delta = m1.lam - m2.lam
    cross = 2 * (u * np.conj(v) * (np.exp(1j * delta * T) - 1) / (1j * delta)).real
    expect = (abs(u) ** 2 + abs(v) ** 2) * T + cross
    assert observability_lhs(irr_modes, [a, b], T) == pytest.approx(expect, rel=1e-8)


def test_observability_scales_with_horizon(irr_modes):
    c = np.random.default_rng(5).standard_normal(20)
    l1 = observability_lhs(irr_modes[:20], c, 1.0)
    l2 = observability_lhs(irr_modes[:20], c, 2.0)
    assert l2 / l1 == pytest.approx(2.0, rel=0.1)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_observability_ratio_positive(irr_modes, seed):
    lo, hi = observability_ratio(irr_modes[:40], 1.0, 10, seed)
    assert 0 < lo <= hi < 100 * lo


def test_observability_ratio_rejects_bad_horizon(irr_modes):
    with pytest.raises(ValueError):
        observability_ratio(irr_modes, 0.0)


def test_run_suite_json(tmp_path):
    rep = run_suite(L1, count=61, trials=4)
    write_report_json(rep, tmp_path / "s.json")
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc["l1"] == L1 and not doc["diophantine_excluded"]
    assert len(doc["eigenvalues"]) == 61
    assert doc["equivalence"]["gap_bound"] == pytest.approx(4.0)
    assert doc["refusal"] is None
    assert doc["observability_ratio"][0] > 0


def test_run_suite_refuses_half():
    rep = run_suite(0.5, count=61, trials=2)
    assert rep.excluded and rep.equivalence is None
    assert "1/2" in rep.refusal
