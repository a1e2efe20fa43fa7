"""Independent reference computations used to derive frozen test values.

Nothing here calls the package's shooting kernel or root finders.  The
closed forms for the constant-coefficient single-mass chain are evaluated
in mpmath; general configurations are shot with scipy's DOP853.

Run ``python3 tests/oracles.py`` to print the frozen constants.
"""
from __future__ import annotations

import math

import mpmath as mp
import numpy as np
from scipy.integrate import solve_ivp


def unit_char(nu, l1=0.5, mass=1.0):
    """Terminal value of the left shot for unit coefficients and one mass."""
    return mp.sin(nu) / nu - mass * mp.sin(nu * l1) * mp.sin(nu * (1 - l1))


def unit_roots(count: int, l1=0.5, mass=1.0, dps: int = 40) -> list:
    """First ``count`` eigenvalues ``nu^2`` by scan plus mpmath bisection."""
    f = lambda v: np.sin(v) / v - mass * np.sin(v * l1) * np.sin(v * (1 - l1))
    out = []
    step = 1e-3
    a = 1e-6
    fa = f(a)
    with mp.workdps(dps):
        while len(out) < count:
            b = a + step
            fb = f(b)
            if fa == 0.0 or fa * fb < 0:
                lo, hi = mp.mpf(a), mp.mpf(b)
                slo = mp.sign(unit_char(lo, l1, mass))
                for _ in range(dps * 4):
                    mid = (lo + hi) / 2
                    sm = mp.sign(unit_char(mid, l1, mass))
                    if sm == slo:
                        lo = mid
                    else:
                        hi = mid
                out.append(((lo + hi) / 2) ** 2)
            a, fa = b, fb
    return out


def tan_roots(count: int, dps: int = 40) -> list:
    """Roots of ``tan x = 1/x`` in ``(k pi, k pi + pi/2)``, ``k = 0, 1, ...``."""
    out = []
    with mp.workdps(dps):
        g = lambda x: mp.cos(x) - x * mp.sin(x)
        for k in range(count):
            lo, hi = mp.mpf(k) * mp.pi + mp.mpf("1e-30"), mp.mpf(k) * mp.pi + mp.pi / 2
            slo = mp.sign(g(lo))
            for _ in range(dps * 4):
                mid = (lo + hi) / 2
                if mp.sign(g(mid)) == slo:
                    lo = mid
                else:
                    hi = mid
            out.append((lo + hi) / 2)
    return out


def unit_phi(x, nu, l1=0.5, mass=1.0):
    """Closed-form left shot on the unit chain (mpmath scalars)."""
    if x <= l1:
        return mp.sin(nu * x) / nu
    return mp.sin(nu * x) / nu - mass * mp.sin(nu * l1) * mp.sin(nu * (x - l1))


def unit_mode(lam, l1=0.5, mass=1.0):
    """``(phi, norm, terminal_flux)`` of the unit-norm mode at ``lam``."""
    nu = mp.sqrt(lam)
    sq = mp.quad(lambda x: unit_phi(x, nu, l1, mass) ** 2, [0, l1]) + mp.quad(
        lambda x: unit_phi(x, nu, l1, mass) ** 2, [l1, 1]
    )
    sq += mass * unit_phi(l1, nu, l1, mass) ** 2
    norm = mp.sqrt(sq)
    d = mp.cos(nu) - mass * nu * mp.sin(nu * l1) * mp.cos(nu * (1 - l1))
    return (lambda x: unit_phi(x, nu, l1, mass) / norm), norm, d / norm


def unit_projection(profile, lam, l1=0.5, mass=1.0):
    """``<U, Phi>`` for ``U = (profile, profile(l1))`` with the unit-norm mode."""
    phi, _, _ = unit_mode(lam, l1, mass)
    val = mp.quad(lambda x: profile(x) * phi(x), [0, l1]) + mp.quad(
        lambda x: profile(x) * phi(x), [l1, 1]
    )
    return val + mass * profile(l1) * phi(l1)


def ivp_shot(config, lam: float, rtol: float = 1e-12, reverse: bool = False) -> tuple:
    """Terminal ``(value, flux)`` of a shot integrated with scipy's DOP853."""
    rods = config.rods
    if not reverse:
        y = np.array([0.0, 1.0])
        order = range(len(rods))
    else:
        y = np.array([0.0, -1.0])
        order = range(len(rods) - 1, -1, -1)
    for step, j in enumerate(order):
        rod = rods[j]
        if step > 0:
            m = config.masses[j - 1] if not reverse else config.masses[j]
            y = np.array([y[0], y[1] - m * lam * y[0] if not reverse else y[1] + m * lam * y[0]])

        def rhs(x, s, rod=rod):
            return [s[1] / float(rod.coef("sigma", x)),
                    (float(rod.coef("q", x)) - lam * float(rod.coef("rho", x))) * s[0]]

        span = (rod.left, rod.right) if not reverse else (rod.right, rod.left)
        sol = solve_ivp(rhs, span, y, method="DOP853", rtol=rtol, atol=1e-14 * max(1.0, abs(y).max()))
        y = sol.y[:, -1]
    return float(y[0]), float(y[1])


def gram_mp(lams, T, dps=60):
    """Exact Gram matrix of ``exp(-lam t)`` on ``(0, T)`` in mpmath."""
    with mp.workdps(dps):
        n = len(lams)
        G = mp.matrix(n, n)
        for i in range(n):
            for j in range(n):
                s = mp.mpf(lams[i]) + mp.mpf(lams[j])
                G[i, j] = (1 - mp.exp(-s * T)) / s
        return G


if __name__ == "__main__":
    mp.mp.dps = 30
    print("unit eigenvalues:")
    for v in unit_roots(20):
        print(f"    {mp.nstr(v, 20)},")
    print("tan roots:", [mp.nstr(x, 20) for x in tan_roots(3)])
    lams = unit_roots(5)
    print("x(1-x) projections:")
    for lam in lams:
        print(f"    {mp.nstr(unit_projection(lambda x: x * (1 - x), lam), 20)},")
    print("terminal fluxes:")
    for lam in lams:
        print(f"    {mp.nstr(unit_mode(lam)[2], 20)},")
