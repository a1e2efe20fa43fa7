"""Single-mass Schrodinger chain with constant coefficients on ``[0, 1]``.

The spatial operator is ``-phi'' = lam phi`` on ``(0, l1)`` and ``(l1, 1)``
with a unit point mass at ``l1`` and Dirichlet ends.  The left solution
with ``phi(0) = 0, phi'(0) = 1`` is

    phi(x) = sin(nu x) / nu                                     x <= l1
    phi(x) = sin(nu x) / nu - sin(nu l1) sin(nu (x - l1))       x >= l1

with ``nu = sqrt(lam)``, so the eigenvalues are the roots of ``phi(1)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson
from scipy.optimize import brentq

from .instances import unit_instance
from .model import ProblemConfig

#: rational-exclusion tolerance and search range for l1 = p / (p + 1)
EXCLUSION_TOL = 1e-9
EXCLUSION_PMAX = 10**6


class ExcludedInstance(ValueError):
    """The equivalence check was asked for an ``l1`` of the form ``p/(p+1)``."""


def excluded_p(l1: float, tol: float = EXCLUSION_TOL, pmax: int = EXCLUSION_PMAX) -> int | None:
    """The ``p <= pmax`` nearest to ``l1`` with ``|l1 - p/(p+1)| < tol``, if any.

    For large ``p`` neighbouring values ``p/(p+1)`` are closer than ``tol``,
    so the nearest candidate is returned.
    """
    if not 0.0 < l1 < 1.0:
        return None
    guess = l1 / (1.0 - l1)
    cands = [p for p in (math.floor(guess), math.ceil(guess), round(guess)) if 1 <= p <= pmax]
    best = min(cands, key=lambda p: abs(l1 - p / (p + 1)), default=None)
    if best is not None and abs(l1 - best / (best + 1)) < tol:
        return int(best)
    return None


@dataclass(frozen=True)
class SchrodingerInstance:
    """Mass position ``l1`` and whether it sits on the excluded set."""

    l1: float

    def __post_init__(self):
        if not 0.0 < self.l1 < 1.0:
            raise ValueError("l1 must lie in (0, 1)")

    @property
    def diophantine_excluded(self) -> bool:
        return excluded_p(self.l1) is not None

    def to_config(self) -> ProblemConfig:
        """The same spatial operator as a rod chain (unit coefficients, unit mass)."""
        return unit_instance(self.l1, 1.0)


@dataclass
class SchrodingerMode:
    """A normalised eigenmode.

    Attributes
    ----------
    n : int
    lam : float
    branch : int
        0 when ``sqrt(lam)`` tracks ``k pi / l1``, 1 when it tracks
        ``k pi / (1 - l1)``.
    k : int
        Index within the branch.
    x : ndarray
        Sample abscissae on ``[0, 1]`` (``l1`` included once).
    values : ndarray
        Unit-norm eigenfunction samples.
    z : float
        Mass value ``Phi(l1)``.
    derivative0 : float
        ``Phi'(0)`` of the unit-norm eigenfunction (positive).
    """

    n: int
    lam: float
    branch: int
    k: int
    x: np.ndarray
    values: np.ndarray
    z: float
    derivative0: float

    @property
    def nu(self) -> float:
        return math.sqrt(self.lam)


def characteristic(nu: float, l1: float) -> float:
    """``phi(1)`` as a function of ``nu = sqrt(lam)``."""
    return math.sin(nu) / nu - math.sin(nu * l1) * math.sin(nu * (1.0 - l1))


def raw_eigenfunction(x, nu: float, l1: float) -> np.ndarray:
    """Unnormalised left solution at ``x``."""
    x = np.asarray(x, dtype=float)
    out = np.sin(nu * x) / nu
    right = x > l1
    out[right] -= math.sin(nu * l1) * np.sin(nu * (x[right] - l1))
    return out


def raw_norm_sq(nu: float, l1: float) -> float:
    """Exact ``int_0^1 phi^2 dx + phi(l1)^2`` for the left solution."""
    a = l1
    left = (a / 2.0 - math.sin(2 * nu * a) / (4 * nu)) / nu**2
    # right rod: alpha sin(nu s) + beta cos(nu s), s in [0, 1 - l1]
    b = 1.0 - l1
    beta = math.sin(nu * a) / nu
    alpha = math.cos(nu * a) / nu - math.sin(nu * a)
    s2 = math.sin(2 * nu * b) / (4 * nu)
    right = alpha**2 * (b / 2 - s2) + beta**2 * (b / 2 + s2) + alpha * beta * math.sin(nu * b) ** 2 / nu
    return left + right + beta**2


def dirichlet_nus(l1: float, count: int) -> np.ndarray:
    """Merged ``k pi / l1`` and ``k pi / (1 - l1)``, first ``count`` values."""
    k = np.arange(1, count + 1)
    return np.sort(np.concatenate([k * math.pi / l1, k * math.pi / (1.0 - l1)]))[:count]


def _root_in(l1: float, a: float, b: float, prev: float | None) -> float:
    f = lambda v: characteristic(v, l1)
    if b - a <= 1e-12 * b:
        return a
    d = 1e-9 * (b - a)
    lo, hi = a + d, b - d
    flo, fhi = f(lo), f(hi)
    if flo * fhi < 0.0:
        return brentq(f, lo, hi, xtol=1e-15 * b, rtol=1e-15, maxiter=200)
    tol = 1e-12
    if abs(f(a)) * a < tol and (prev is None or a - prev > 1e-12 * a):
        return a
    if abs(f(b)) * b < tol:
        return b
    grid = np.linspace(lo, hi, 257)
    vals = np.array([f(v) for v in grid])
    idx = np.nonzero(np.sign(vals[1:]) != np.sign(vals[:-1]))[0]
    if len(idx) == 0:
        raise RuntimeError(f"no root of the characteristic in [{a!r}, {b!r}]")
    i = idx[0]
    return brentq(f, grid[i], grid[i + 1], xtol=1e-15 * b, rtol=1e-15, maxiter=200)


def _assign_branch(nu: float, l1: float) -> tuple[int, int]:
    k0 = max(1, round(nu * l1 / math.pi))
    k1 = max(1, round(nu * (1.0 - l1) / math.pi))
    d0 = abs(nu - k0 * math.pi / l1)
    d1 = abs(nu - k1 * math.pi / (1.0 - l1))
    return (0, k0) if d0 <= d1 else (1, k1)


def schrodinger_spectrum(instance: SchrodingerInstance, count: int, samples: int = 129) -> list[SchrodingerMode]:
    """First ``count`` eigenmodes by bracketing between Dirichlet values.

    Each ``sqrt(lam_n)`` lies in ``[nu_{n-1}, nu_n]`` of the merged rod
    Dirichlet values (``nu_0 = 0``); the root is isolated inside that
    bracket and refined with Brent's method.

    Parameters
    ----------
    instance : SchrodingerInstance
    count : int
    samples : int
        Samples of each eigenfunction per rod.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    l1 = instance.l1
    nus = dirichlet_nus(l1, count)
    x = np.concatenate([np.linspace(0.0, l1, samples), np.linspace(l1, 1.0, samples)[1:]])
    modes = []
    prev = None
    for n in range(1, count + 1):
        a = 0.0 if n == 1 else nus[n - 2]
        b = nus[n - 1]
        if n == 1:
            a = 1e-9 * b
        nu = _root_in(l1, a, b, prev)
        prev = nu
        norm = math.sqrt(raw_norm_sq(nu, l1))
        vals = raw_eigenfunction(x, nu, l1) / norm
        branch, k = _assign_branch(nu, l1)
        z = math.sin(nu * l1) / nu / norm
        modes.append(SchrodingerMode(n, nu * nu, branch, k, x, vals, z, 1.0 / norm))
    return modes


# --- asymptotics -------------------------------------------------------------


def branch_prediction(branch: int, k: int, l1: float, formula: str = "published") -> float:
    """Predicted ``sqrt(lam)`` for index ``k`` of a branch.

    ``"published"`` uses the shift ``1 / (l_b k pi)`` with ``l_b`` the length of
    the tracked rod; ``"derived"`` uses ``1 / (k pi)``, which follows from
    ``tan(nu l_b) = 1 / nu``.
    """
    lb = l1 if branch == 0 else 1.0 - l1
    base = k * math.pi / lb
    if formula == "published":
        return base + 1.0 / (lb * k * math.pi)
    if formula == "derived":
        return base + 1.0 / (k * math.pi)
    raise ValueError("formula must be 'published' or 'derived'")


def branch_residuals(modes: list[SchrodingerMode], l1: float, formula: str = "published") -> np.ndarray:
    """``|sqrt(lam_n) - prediction| * k^2`` for every mode."""
    return np.array([
        abs(m.nu - branch_prediction(m.branch, m.k, l1, formula)) * m.k**2 for m in modes
    ])


@dataclass
class EquivalenceReport:
    """Gap and derivative-equivalence data over a window of modes.

    Attributes
    ----------
    n : ndarray
        Mode indices of the window.
    gaps : ndarray
        ``lam_{n+1} - lam_n`` over the gap window.
    gap_bound : float
        ``2 min(1/l1^2, 1/(1-l1)^2)``.
    deriv_over_n : ndarray
        ``|Phi_n'(0)| / n``.
    n_sin : ndarray
        ``n |sin(sqrt(lam_n) l1)|``.
    deriv_sin : ndarray
        ``|Phi_n'(0)| |sin(sqrt(lam_n) l1)|``.
    branch : ndarray
    """

    n: np.ndarray
    gaps: np.ndarray
    gap_n: np.ndarray
    gap_bound: float
    deriv_over_n: np.ndarray
    n_sin: np.ndarray
    deriv_sin: np.ndarray
    branch: np.ndarray
    bounds: tuple = (0.2, 5.0)

    def within(self, seq: np.ndarray) -> bool:
        lo, hi = self.bounds
        return bool(np.all((seq >= lo) & (seq <= hi)))

    @property
    def gap_ratio(self) -> float:
        return float(np.min(self.gaps) / self.gap_bound)

    def to_dict(self) -> dict:
        def rng(a):
            return [float(np.min(a)), float(np.max(a))]
        return {
            "gap_bound": self.gap_bound,
            "min_gap": float(np.min(self.gaps)),
            "gap_ratio": self.gap_ratio,
            "deriv_over_n_range": rng(self.deriv_over_n),
            "n_sin_range": rng(self.n_sin),
            "deriv_sin_range": rng(self.deriv_sin),
            "deriv_over_n_within": self.within(self.deriv_over_n),
            "n_sin_within": self.within(self.n_sin),
            "deriv_sin_within": self.within(self.deriv_sin),
        }


def gap_bound(l1: float) -> float:
    return 2.0 * min(1.0 / l1**2, 1.0 / (1.0 - l1) ** 2)


def gap_and_derivative_check(modes: list[SchrodingerMode], instance: SchrodingerInstance,
                             n_range: tuple[int, int] = (10, 60),
                             gap_range: tuple[int, int] = (30, 60)) -> EquivalenceReport:
    """Tail gaps and the ``|Phi_n'(0)| ~ n ~ 1/|sin(sqrt(lam_n) l1)|`` ratios.

    Raises
    ------
    ExcludedInstance
        ``l1 = p/(p+1)``: there ``sin(sqrt(lam_n) l1)`` vanishes on a whole
        subsequence and the equivalence cannot hold.
    ValueError
        Fewer than 40 modes, or too few for the requested windows.
    """
    p = excluded_p(instance.l1)
    if p is not None:
        raise ExcludedInstance(
            f"l1 = {instance.l1!r} equals {p}/{p + 1}: on this set sin(sqrt(lam_n) l1) = 0 for the "
            "eigenvalues shared by both rods, so |Phi_n'(0)| ~ n ~ 1/|sin(sqrt(lam_n) l1)| fails"
        )
    need = max(40, n_range[1], gap_range[1] + 1)
    if len(modes) < need:
        raise ValueError(f"need at least {need} modes")
    l1 = instance.l1
    sel = [m for m in modes if n_range[0] <= m.n <= n_range[1]]
    n = np.array([m.n for m in sel], dtype=float)
    d = np.array([abs(m.derivative0) for m in sel])
    s = np.array([abs(math.sin(m.nu * l1)) for m in sel])
    lam = np.array([m.lam for m in modes])
    gn = np.arange(gap_range[0], gap_range[1] + 1)
    gaps = lam[gn] - lam[gn - 1]
    return EquivalenceReport(n.astype(int), gaps, gn, gap_bound(l1), d / n, n * s, d * s,
                             np.array([m.branch for m in sel]))


# --- observability -----------------------------------------------------------


def observability_lhs(modes: list[SchrodingerMode], c, T: float, per_period: int = 40):
    """``int_0^T |sum c_n Phi_n'(0) exp(i lam_n t)|^2 dt`` by Simpson's rule.

    ``c`` may be one coefficient vector or a 2-D array with one trial per
    column; the result is a float or one value per column.
    """
    c = np.asarray(c, dtype=complex)
    single = c.ndim == 1
    if single:
        c = c[:, None]
    m = c.shape[0]
    lam = np.array([x.lam for x in modes[:m]])
    d = np.array([x.derivative0 for x in modes[:m]])
    period = 2.0 * math.pi / lam.max()
    npts = int(math.ceil(per_period * T / period)) + 1
    npts += 1 - npts % 2
    t = np.linspace(0.0, T, npts)
    w = c * d[:, None]
    acc = np.zeros((npts, c.shape[1]), dtype=complex)
    chunk = 8
    for i in range(0, m, chunk):
        acc += np.exp(1j * np.outer(t, lam[i:i + chunk])) @ w[i:i + chunk]
    out = simpson(np.abs(acc) ** 2, x=t, axis=0)
    return float(out[0]) if single else out


def observability_rhs(modes: list[SchrodingerMode], c) -> float:
    """``sum lam_n |c_n|^2``, the squared ``H^1_0 x C`` norm."""
    c = np.asarray(c, dtype=complex)
    lam = np.array([m.lam for m in modes[: len(c)]])
    return float(np.sum(lam * np.abs(c) ** 2))


def observability_ratio(modes: list[SchrodingerMode], T: float, trial_count: int = 20,
                        rng_seed: int = 0) -> tuple[float, float]:
    """Range of ``LHS / RHS`` over random complex coefficient vectors.

    Coefficients are standard complex normal draws from a seeded generator.
    """
    if not T > 0.0:
        raise ValueError("T must be positive")
    rng = np.random.default_rng(rng_seed)
    n = len(modes)
    c = np.empty((n, trial_count), dtype=complex)
    for j in range(trial_count):
        c[:, j] = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    lam = np.array([m.lam for m in modes])
    ratios = observability_lhs(modes, c, T) / np.sum(lam[:, None] * np.abs(c) ** 2, axis=0)
    return float(ratios.min()), float(ratios.max())


@dataclass
class SchrodingerReport:
    l1: float
    excluded: bool
    count: int
    lams: list
    branches: list
    residual_published: list
    residual_derived: list
    equivalence: dict | None = None
    refusal: str | None = None
    observability: tuple | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "l1": self.l1,
            "diophantine_excluded": self.excluded,
            "count": self.count,
            "eigenvalues": self.lams,
            "branches": self.branches,
            "branch_residual_published": self.residual_published,
            "branch_residual_derived": self.residual_derived,
            "equivalence": self.equivalence,
            "refusal": self.refusal,
            "observability_ratio": None if self.observability is None else list(self.observability),
            **self.extra,
        }


def run_suite(l1: float, count: int = 60, T: float = 1.0, trials: int = 20, seed: int = 0,
              equivalence: bool = True) -> SchrodingerReport:
    """Spectrum, branch residuals, equivalence check and observability ratio."""
    inst = SchrodingerInstance(l1)
    modes = schrodinger_spectrum(inst, count)
    rep = SchrodingerReport(
        l1, inst.diophantine_excluded, count, [m.lam for m in modes], [m.branch for m in modes],
        branch_residuals(modes, l1, "published").tolist(), branch_residuals(modes, l1, "derived").tolist(),
    )
    if equivalence:
        try:
            rep.equivalence = gap_and_derivative_check(modes, inst).to_dict()
        except ExcludedInstance as exc:
            rep.refusal = str(exc)
    rep.observability = observability_ratio(modes, T, trials, seed)
    return rep


def write_report_json(report: SchrodingerReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
