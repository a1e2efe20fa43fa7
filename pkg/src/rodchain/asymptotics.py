"""Asymptotic quantities of the rod chain and checks against computed spectra.

Notation per rod ``j`` on ``[l_j, l_{j+1}]``:

* ``xi_j = (rho_j sigma_j)^(-1/4)`` and ``xi_j* = xi_j(l_j) xi_j(l_{j+1})``;
* ``omega_j(x) = int_{l_j}^x sqrt(rho_j / sigma_j)`` and ``omega_j* = omega_j(l_{j+1})``;
* ``V_j = q_j / rho_j - (sigma_j xi_j')' / (rho_j xi_j)``, the Liouville potential.

Two different constants are both called gamma in the literature this code
follows: the total travel time ``sum_j omega_j*`` (used by the branch
formulas, the gap bound and the norm equivalence) and its inverse square
``(sum_j omega_j*)^-2`` (the Weyl constant, ``lam_n ~ gamma n^2 pi^2``).
Both are stored, under distinct names.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .model import ProblemConfig, Rod
from .spectrum import EigenPair


@dataclass(frozen=True)
class AsymptoticData:
    """Per-rod asymptotic constants.

    Attributes
    ----------
    omega_star : ndarray
        Travel time of each rod.
    travel_time : float
        ``sum(omega_star)``; the gamma of the branch and gap formulas.
    gamma_weyl : float
        ``travel_time ** -2``; the Weyl constant.
    xi_left, xi_right : ndarray
        ``xi_j`` at the left and right end of each rod.
    xi_star, upsilon : ndarray
        ``xi_left * xi_right`` and its running product.
    q_star : ndarray
        The potential average ``(l_j*/omega_j*)^2 int V_j dx`` exactly as
        written in the branch theorem (per-rod gamma read as omega_j*).
    liouville_integral : ndarray
        ``int V_j sqrt(rho_j / sigma_j) dx``, the integral that actually
        enters the Dirichlet asymptotics ``sqrt(mu) = k pi / omega* + I / (2 k pi)``.
    masses : ndarray
    """

    omega_star: np.ndarray
    travel_time: float
    gamma_weyl: float
    xi_left: np.ndarray
    xi_right: np.ndarray
    xi_star: np.ndarray
    upsilon: np.ndarray
    q_star: np.ndarray
    liouville_integral: np.ndarray
    masses: np.ndarray
    lengths: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def gamma(self) -> float:
        """Alias for the travel-time gamma used by the branch and gap formulas."""
        return self.travel_time


def xi(rod: Rod, x) -> np.ndarray:
    """``(rho sigma)^(-1/4)`` on ``rod``."""
    return (rod.coef("rho", x) * rod.coef("sigma", x)) ** -0.25


def liouville_potential(rod: Rod, x) -> np.ndarray:
    """``V = q / rho - (sigma xi')' / (rho xi)`` with ``xi = (rho sigma)^(-1/4)``."""
    x = np.asarray(x, dtype=float)
    r, r1, r2 = (rod.coef("rho", x, d) for d in (0, 1, 2))
    s, s1, s2 = (rod.coef("sigma", x, d) for d in (0, 1, 2))
    q = rod.coef("q", x)
    p = r * s
    p1 = r1 * s + r * s1
    p2 = r2 * s + 2 * r1 * s1 + r * s2
    xi0 = p ** -0.25
    xi1 = -0.25 * p ** -1.25 * p1
    xi2 = 0.3125 * p ** -2.25 * p1**2 - 0.25 * p ** -1.25 * p2
    return q / r - (s1 * xi1 + s * xi2) / (r * xi0)


def _integrate(f, a: float, b: float) -> float:
    val, _ = quad(lambda t: float(f(t)), a, b, epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


def asymptotic_data(config: ProblemConfig) -> AsymptoticData:
    """Compute all per-rod constants with adaptive quadrature.

    Raises
    ------
    ValueError
        If a sampled-grid coefficient is too coarse to differentiate twice.
    """
    omega, xl, xr, qs, li, lengths = [], [], [], [], [], []
    for rod in config.rods:
        speed = lambda t, rod=rod: math.sqrt(rod.coef("rho", t) / rod.coef("sigma", t))
        w = _integrate(speed, rod.left, rod.right)
        omega.append(w)
        xl.append(float(xi(rod, rod.left)))
        xr.append(float(xi(rod, rod.right)))
        v_int = _integrate(lambda t, rod=rod: liouville_potential(rod, t), rod.left, rod.right)
        qs.append((rod.length / w) ** 2 * v_int)
        li.append(_integrate(lambda t, rod=rod, sp=speed: liouville_potential(rod, t) * sp(t),
                             rod.left, rod.right))
        lengths.append(rod.length)
    omega = np.array(omega)
    total = float(omega.sum())
    xl, xr = np.array(xl), np.array(xr)
    xs = xl * xr
    return AsymptoticData(
        omega_star=omega,
        travel_time=total,
        gamma_weyl=total**-2,
        xi_left=xl,
        xi_right=xr,
        xi_star=xs,
        upsilon=np.cumprod(xs),
        q_star=np.array(qs),
        liouville_integral=np.array(li),
        masses=np.asarray(config.masses, dtype=float),
        lengths=np.array(lengths),
    )


# --- Weyl ----------------------------------------------------------------------


@dataclass
class WeylReport:
    ratios: np.ndarray
    tail_deviation: float


def weyl_check(lams, data: AsymptoticData) -> WeylReport:
    """``r_n = lam_n / (n^2 pi^2 gamma_weyl)`` and ``max |r_n - 1|`` over the last quartile."""
    lams = np.asarray(lams, dtype=float)
    if len(lams) < 20:
        raise ValueError("weyl_check needs at least 20 eigenvalues")
    n = np.arange(1, len(lams) + 1)
    r = lams / (n**2 * math.pi**2 * data.gamma_weyl)
    tail = r[3 * len(r) // 4:]
    return WeylReport(r, float(np.max(np.abs(tail - 1.0))))


# --- branches ------------------------------------------------------------------

FORMULAS = ("published", "liouville")


def _shift_published(data: AsymptoticData, j: int) -> float:
    """Coefficient ``c`` of the ``c / (k pi)`` term in the shifted branch formula."""
    nrod = len(data.omega_star)
    if nrod == 1:
        return 0.0
    if j < nrod - 1:
        return data.travel_time * data.xi_right[j] ** 2 / (data.masses[j] * data.omega_star[j])
    # last rod: xi_N at l_N (its left end) and the last mass
    return data.travel_time * data.xi_left[j] ** 2 / (data.masses[j - 1] * data.omega_star[j])


def _shift_liouville(data: AsymptoticData, j: int) -> float:
    """Single-rod resonance: every adjacent mass adds ``1 / (M xi^2)``."""
    c = 0.0
    if j > 0:
        c += 1.0 / (data.masses[j - 1] * data.xi_left[j] ** 2)
    if j < len(data.omega_star) - 1:
        c += 1.0 / (data.masses[j] * data.xi_right[j] ** 2)
    return c


def _pair_shift_liouville(data: AsymptoticData, j: int) -> float | None:
    """Two neighbouring rods resonating together across mass ``j``.

    Returns the coefficient ``d`` in ``sqrt(lam) = k pi / omega_j* + ... + d omega_j* / (k pi)``,
    i.e. ``delta nu = d / nu``, or ``None`` when rod ``j + 1`` does not exist.
    """
    if j + 1 >= len(data.omega_star):
        return None
    m = data.masses[j]
    return (1.0 / (data.xi_right[j] ** 2 * data.omega_star[j])
            + 1.0 / (data.xi_left[j + 1] ** 2 * data.omega_star[j + 1])) / m


@dataclass
class BranchEntry:
    n: int
    lam: float
    branch: int | None
    kind: str
    local_index: int
    residual: float
    tag: str

    @property
    def scaled_residual(self) -> float:
        return self.residual * self.local_index**2


@dataclass
class BranchReport:
    """Branch assignment of every eigenvalue plus gap and Weyl summaries."""

    entries: list
    formula: str
    gaps: np.ndarray
    gap_bound: float
    weyl: np.ndarray

    def scaled_residuals(self) -> np.ndarray:
        return np.array([e.scaled_residual for e in self.entries])

    def tags(self) -> list[str]:
        return [e.tag for e in self.entries]


def _predictions(data: AsymptoticData, nu: float, formula: str):
    """Yield ``(rod, kind, k, prediction)`` for nearby local indices."""
    for j, w in enumerate(data.omega_star):
        k0 = max(1, int(round(nu * w / math.pi)))
        for k in (k0 - 1, k0, k0 + 1):
            if k < 1:
                continue
            base = k * math.pi / w
            if formula == "published":
                corr = data.q_star[j] / (2 * k)
                yield j, "dirichlet", k, base + corr
                if len(data.omega_star) > 1:
                    yield j, "shifted", k, base + corr + _shift_published(data, j) / (k * math.pi)
            else:
                corr = data.liouville_integral[j] / (2 * k * math.pi)
                yield j, "dirichlet", k, base + corr
                if len(data.omega_star) > 1:
                    yield j, "shifted", k, base + corr + _shift_liouville(data, j) / (k * math.pi)
                    d = _pair_shift_liouville(data, j)
                    if d is not None:
                        yield j, "paired", k, base + corr + d / base


def branch_classify(lams, data: AsymptoticData, formula: str = "published",
                    tie_tol: float = 1e-6) -> BranchReport:
    """Assign each eigenvalue to the branch whose prediction is closest.

    ``formula="published"`` uses the published branch formulas (potential term
    ``Q_j*/(2k)``, shift ``gamma xi^2 / (M omega* k pi)``).  ``"liouville"``
    uses the corrected potential term ``I_j / (2 k pi)``, the single-rod
    shift ``sum 1/(M xi^2) / (k pi)`` and a paired-resonance candidate.

    Ties between different rods within ``tie_tol * sqrt(lam)`` are tagged
    ``"degenerate"`` when both are unshifted Dirichlet predictions (two rods
    sharing a Dirichlet eigenvalue) and ``"unresolved"`` otherwise.
    """
    if formula not in FORMULAS:
        raise ValueError(f"formula must be one of {FORMULAS}")
    lams = np.asarray(lams, dtype=float)
    entries = []
    for n, lam in enumerate(lams, start=1):
        nu = math.sqrt(lam)
        cands = sorted(
            ((abs(nu - p), j, kind, k) for j, kind, k, p in _predictions(data, nu, formula)),
            key=lambda c: c[0],
        )
        best = cands[0]
        tag = str(best[1]) if best[2] != "dirichlet" else f"{best[1]}*"
        rival = next((c for c in cands[1:] if c[1] != best[1]), None)
        if rival is not None and rival[0] - best[0] <= tie_tol * nu:
            both_dirichlet = best[2] == "dirichlet" and rival[2] == "dirichlet"
            tag = "degenerate" if both_dirichlet else "unresolved"
        entries.append(BranchEntry(n, float(lam), best[1], best[2], best[3], best[0], tag))
    gaps = np.diff(lams)
    return BranchReport(entries, formula, gaps, gap_bound(data),
                        lams / (np.arange(1, len(lams) + 1) ** 2 * math.pi**2 * data.gamma_weyl))


# --- gap -----------------------------------------------------------------------


def gap_bound(data: AsymptoticData) -> float:
    """``2 gamma min{xi_j(l_{j+1})^2 / (M_{j+1} omega_j*^2), xi_N(l_N)^2 / (M_N omega_N*^2)}``.

    ``gamma`` is the travel time.  Without masses the gap grows without
    bound and ``inf`` is returned.
    """
    nrod = len(data.omega_star)
    if nrod == 1:
        return math.inf
    vals = [data.xi_right[j] ** 2 / (data.masses[j] * data.omega_star[j] ** 2) for j in range(nrod - 1)]
    vals.append(data.xi_left[-1] ** 2 / (data.masses[-1] * data.omega_star[-1] ** 2))
    return 2.0 * data.travel_time * min(vals)


@dataclass
class GapReport:
    empirical_inf: float
    bound: float
    passed: bool
    gaps: np.ndarray


def gap_check(lams, data: AsymptoticData, n_range: tuple[int, int] | None = None,
              slack: float = 0.8) -> GapReport:
    """Compare ``min (lam_{n+1} - lam_n)`` over a tail range with ``slack * bound``.

    ``n_range = (a, b)`` selects ``n`` in ``[a, b]`` (gaps need ``lam_{n+1}``);
    the default is the last quartile of the available gaps.
    """
    lams = np.asarray(lams, dtype=float)
    if len(lams) < 40 and n_range is None:
        raise ValueError("gap_check needs at least 40 eigenvalues")
    gaps = np.diff(lams)
    if n_range is None:
        sel = gaps[3 * len(gaps) // 4:]
    else:
        a, b = n_range
        if b > len(gaps):
            raise ValueError(f"need lam_{b + 1} for n up to {b}")
        sel = gaps[a - 1:b]
    bound = gap_bound(data)
    inf = float(np.min(sel))
    return GapReport(inf, bound, bool(inf >= slack * bound), gaps)


# --- norm equivalence ----------------------------------------------------------


def norm_equivalence_check(pairs: list[EigenPair], data: AsymptoticData) -> np.ndarray:
    """``t_n = (||Phi_n|| / |sigma_N Phi_n'(L)|) * n pi / (sqrt(omega_N*/2) gamma xi_N(L))``.

    ``gamma`` is the travel time; the claim under test is ``t_n -> 1``.
    """
    scale = math.sqrt(data.omega_star[-1] / 2.0) * data.travel_time * data.xi_right[-1]
    return np.array([p.norm_ratio * p.index * math.pi / scale for p in pairs])


# --- output --------------------------------------------------------------------


def write_branch_csv(report: BranchReport, path_or_file, norm_ratios=None) -> None:
    """Columns ``n, lambda_n, branch, weyl_ratio, gap, gap_bound, norm_ratio``."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh)
        w.writerow(["n", "lambda_n", "branch", "weyl_ratio", "gap", "gap_bound", "norm_ratio"])
        for i, e in enumerate(report.entries):
            gap = report.gaps[i] if i < len(report.gaps) else float("nan")
            nr = float("nan") if norm_ratios is None or i >= len(norm_ratios) else norm_ratios[i]
            w.writerow([e.n, repr(e.lam), e.tag, repr(float(report.weyl[i])), repr(float(gap)),
                        repr(report.gap_bound), repr(float(nr))])
    finally:
        if own:
            fh.close()
