"""Moment-method null control through the boundary value at ``x = L``.

Given eigenpairs ``(lam_n, Phi_n)`` the terminal modal coefficient of the
controlled state is

    <U(T), Phi_n> = a_n exp(-lam_n T) - F_n int_0^T h(T - t) exp(-lam_n t) dt,

with ``a_n = <U0, Phi_n>`` and ``F_n = sigma_N Phi_n'(L)``.  A family
``Theta_n`` biorthogonal to the exponentials makes every bracket vanish for
``n <= N_tr``::

    h(T - t) = sum_n a_n exp(-lam_n T) Theta_n(t) / F_n.

The family is ``Theta_n(t) = t^p sum_m C[n, m] exp(-lam_m t)`` with
``C = G^{-1}`` for the weighted Gram matrix
``G[n, m] = int_0^T t^p exp(-(lam_n + lam_m) t) dt``.  ``p = 0`` is the
L2-optimal family; ``p > 0`` makes ``h`` vanish at ``t = T``.  The Gram matrix
is catastrophically ill conditioned, so solves and evaluations of ``h`` run
in mpmath when double precision is not enough.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import mpmath as mp
import numpy as np
from scipy.integrate import simpson
from scipy.linalg import cho_factor, cho_solve
from scipy.special import gamma as gamma_fn
from scipy.special import gammainc

from .model import ProblemConfig, StateVector, inner_product
from .spectrum import EigenPair

#: default number of controlled modes
DEFAULT_NTR = 12


class BiorthogonalRefusal(RuntimeError):
    """The Gram system is beyond the precision policy; lower ``N_tr``."""


@dataclass(frozen=True)
class PrecisionPolicy:
    """When to leave double precision and how far extended precision may go.

    Attributes
    ----------
    double_cond_max : float
        Largest Gram condition number solved in double precision.
    double_cap, cap : int
        Largest ``N_tr`` accepted in double and in extended precision.
    target_digits : int
        Correct digits requested from the extended solve; the working
        precision is ``log10(cond) + target_digits``.
    max_dps : int
        Refuse when the required working precision exceeds this.
    """

    double_cond_max: float = 1e8
    double_cap: int = 20
    cap: int = 30
    target_digits: int = 30
    max_dps: int = 400


@dataclass
class BiorthogonalFamily:
    """``Theta_n(t) = t^p sum_m C[n, m] exp(-lam_m t)`` on ``(0, T)``.

    Attributes
    ----------
    lambdas : ndarray
    T : float
    weight_power : float
    coeffs : mpmath.matrix
        ``C``; kept in multiprecision since its entries cancel massively.
    condition : float
        1-norm condition number of the Gram matrix.
    precision : str
        ``"double"`` or ``"mp<dps>"``.
    dps : int
        Decimal digits used for later evaluations.
    residual : ndarray
        ``|C G - I|`` entrywise, from the closed-form Gram matrix.
    quad_residual : ndarray or None
        Same, re-computed by adaptive quadrature of ``Theta_n exp(-lam_m t)``.
    theta_norms : ndarray
        ``||Theta_n||_{L2(0,T)}``.
    """

    lambdas: np.ndarray
    T: float
    weight_power: float
    coeffs: object
    condition: float
    precision: str
    dps: int
    residual: np.ndarray
    quad_residual: np.ndarray | None = None
    theta_norms: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def truncation(self) -> int:
        return len(self.lambdas)

    @property
    def residual_sup(self) -> float:
        return float(np.max(self.residual))

    def evaluate(self, t) -> np.ndarray:
        """``Theta_n(t)`` for every ``n``, shape ``(N_tr, len(t))``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        n = self.truncation
        out = np.empty((n, len(t)))
        with mp.workdps(self.dps):
            lam = [mp.mpf(float(x)) for x in self.lambdas]
            for i, ti in enumerate(t):
                e = [mp.exp(-lk * ti) for lk in lam]
                w = mp.mpf(ti) ** self.weight_power if self.weight_power else mp.mpf(1)
                for r in range(n):
                    out[r, i] = float(w * mp.fsum(self.coeffs[r, k] * e[k] for k in range(n)))
        return out


def _check_lambdas(lambdas, T: float) -> np.ndarray:
    lam = np.asarray(lambdas, dtype=float)
    if lam.ndim != 1 or len(lam) == 0:
        raise ValueError("need a non-empty list of eigenvalues")
    if np.any(lam <= 0.0) or np.any(np.diff(lam) <= 0.0):
        raise ValueError("eigenvalues must be positive and strictly increasing")
    if not T > 0.0:
        raise ValueError("T must be positive")
    return lam


def _weighted_moment(s: float, T: float, p: float) -> float:
    """``int_0^T t^p exp(-s t) dt`` in double precision."""
    if p == 0:
        return -math.expm1(-s * T) / s
    return float(gammainc(p + 1.0, s * T) * gamma_fn(p + 1.0) / s ** (p + 1.0))


def _weighted_moment_mp(s, T, p):
    if p == 0:
        return -mp.expm1(-s * T) / s
    return mp.gammainc(p + 1, 0, s * T) / s ** (p + 1)


def gram_matrix(lambdas, T: float, weight_power: float = 0.0) -> np.ndarray:
    """Gram matrix of ``exp(-lam_n t)`` in ``L2((0, T); t^p dt)``.

    For ``p = 0`` this is ``(1 - exp(-(lam_n + lam_m) T)) / (lam_n + lam_m)``.
    """
    lam = _check_lambdas(lambdas, T)
    n = len(lam)
    G = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            G[i, j] = G[j, i] = _weighted_moment(lam[i] + lam[j], T, weight_power)
    return G


def _gram_mp(lam: np.ndarray, T: float, p: float):
    n = len(lam)
    G = mp.matrix(n, n)
    Tm = mp.mpf(T)
    for i in range(n):
        for j in range(i, n):
            G[i, j] = G[j, i] = _weighted_moment_mp(mp.mpf(float(lam[i])) + mp.mpf(float(lam[j])), Tm, p)
    return G


def _inverse_mp(G):
    L = mp.cholesky(G)
    n = G.rows
    Linv = mp.inverse(L)
    X = Linv.T * Linv
    # one sweep of iterative refinement
    R = mp.eye(n) - G * X
    return X + X * R


def _cond_mp(G, X) -> float:
    return float(mp.mnorm(G, 1) * mp.mnorm(X, 1))


def _residual_matrix(C, G) -> np.ndarray:
    n = G.rows
    R = C * G - mp.eye(n)
    return np.array([[float(abs(R[i, j])) for j in range(n)] for i in range(n)])


def _theta_norms(C, lam, T, p) -> np.ndarray:
    G2 = _gram_mp(lam, T, 2 * p)
    n = len(lam)
    out = np.empty(n)
    for r in range(n):
        row = C[r, :]
        out[r] = float(mp.sqrt(abs((row * G2 * row.T)[0, 0])))
    return out


def biorthogonal(lambdas, T: float, policy: PrecisionPolicy | None = None,
                 weight_power: float = 0.0, verify: bool = True) -> BiorthogonalFamily:
    """Construct the truncated biorthogonal family.

    Parameters
    ----------
    lambdas : array_like
        Strictly increasing positive eigenvalues ``lam_1 .. lam_Ntr``.
    T : float
        Control horizon.
    policy : PrecisionPolicy, optional
    weight_power : float
        Exponent ``p`` of the weight ``t^p``.
    verify : bool
        Re-check biorthogonality by adaptive quadrature.

    Raises
    ------
    BiorthogonalRefusal
        ``N_tr`` above the cap, or the condition number needs more than
        ``policy.max_dps`` digits.
    """
    policy = policy or PrecisionPolicy()
    lam = _check_lambdas(lambdas, T)
    n = len(lam)
    if n > policy.cap:
        raise BiorthogonalRefusal(
            f"N_tr={n} exceeds the cap of {policy.cap} modes; lower N_tr or raise the cap"
        )
    p = float(weight_power)
    if p < 0:
        raise ValueError("weight_power must be non-negative")

    Gd = gram_matrix(lam, T, p)
    cond_d = float(np.linalg.cond(Gd, 1))
    if n <= policy.double_cap and math.isfinite(cond_d) and cond_d <= policy.double_cond_max:
        fac = cho_factor(Gd)
        X = cho_solve(fac, np.eye(n))
        X = X + cho_solve(fac, np.eye(n) - Gd @ X)
        dps = 30 + int(math.log10(max(cond_d, 1.0)))
        with mp.workdps(dps):
            C = mp.matrix(X.tolist())
            G = _gram_mp(lam, T, p)
            res = _residual_matrix(C, G)
            norms = _theta_norms(C, lam, T, p)
        fam = BiorthogonalFamily(lam, float(T), p, C, cond_d, "double", dps, res, None, norms)
    else:
        dps = 50
        while True:
            if dps > policy.max_dps:
                raise BiorthogonalRefusal(
                    f"Gram matrix for N_tr={n}, T={T} needs more than {policy.max_dps} digits; "
                    "lower N_tr"
                )
            with mp.workdps(dps):
                G = _gram_mp(lam, T, p)
                try:
                    C = _inverse_mp(G)
                except (ValueError, ZeroDivisionError):
                    dps *= 2
                    continue
                cond = _cond_mp(G, C)
                need = int(math.ceil(math.log10(max(cond, 1.0)))) + policy.target_digits
                if need > dps:
                    dps = need + 10
                    continue
                res = _residual_matrix(C, G)
                norms = _theta_norms(C, lam, T, p)
            break
        with mp.workdps(dps):
            cond2 = float(mp.mpf(cond))
        fam = BiorthogonalFamily(lam, float(T), p, C, cond2, f"mp{dps}", dps, res, None, norms)
    if verify:
        fam.quad_residual = verify_biorthogonality(fam)
    return fam


def verify_biorthogonality(family: BiorthogonalFamily) -> np.ndarray:
    """``|int_0^T Theta_n exp(-lam_m t) dt - delta_nm|`` by adaptive quadrature.

    The moments ``int t^p exp(-(lam_k + lam_m) t) dt`` are recomputed with
    tanh-sinh quadrature on geometrically graded panels, never from the
    closed form, and combined with ``C``.
    """
    lam = family.lambdas
    n = len(lam)
    with mp.workdps(family.dps + 10):
        lm = [mp.mpf(float(x)) for x in lam]
        Tm = mp.mpf(family.T)
        # panels from the fastest decay scale up to T
        pts = [mp.mpf(0)]
        tau = mp.mpf(1) / (2 * lm[-1])
        while tau < Tm:
            pts.append(tau)
            tau *= 4
        pts.append(Tm)
        p = family.weight_power
        Q = mp.matrix(n, n)
        for k in range(n):
            for m in range(k, n):
                s = lm[k] + lm[m]
                if p:
                    Q[k, m] = Q[m, k] = mp.quad(lambda t: t ** p * mp.exp(-s * t), pts)
                else:
                    Q[k, m] = Q[m, k] = mp.quad(lambda t: mp.exp(-s * t), pts)
        return _residual_matrix(family.coeffs, Q)


def fourier_coefficients(config: ProblemConfig, U0: StateVector, pairs: list[EigenPair]) -> np.ndarray:
    """``a_n = <U0, Phi_n>`` in the energy inner product.

    Raises ``ValueError`` when ``U0`` and the eigenvectors live on
    different grids.
    """
    out = []
    for p in pairs:
        if p.state is None:
            raise ValueError("eigenpairs carry no eigenvectors")
        out.append(inner_product(config, U0, p.state))
    return np.array(out)


def mode_mixture(pairs: list[EigenPair], coeffs) -> StateVector:
    """``sum_n c_n Phi_n`` over the leading pairs."""
    coeffs = list(coeffs)
    if not coeffs or len(coeffs) > len(pairs):
        raise ValueError("need between 1 and len(pairs) coefficients")
    s = pairs[0].state.scaled(coeffs[0])
    for c, p in zip(coeffs[1:], pairs[1:]):
        s = s + p.state.scaled(c)
    return s


@dataclass
class ControlPlan:
    """Synthesised control with its self-checks.

    Attributes
    ----------
    T : float
    n_tr : int
    coefficients : ndarray
        ``a_n`` for every supplied mode (not only the controlled ones).
    lambdas, terminal_fluxes : ndarray
        Data of the supplied modes.
    t : ndarray
        Uniform time grid on ``[0, T]``.
    h : ndarray
        Control values ``h(t)`` on ``t``.
    moment_residuals : ndarray
        ``|a_n e^{-lam_n T} - F_n int_0^T h(T-t) e^{-lam_n t} dt|`` for
        ``n <= N_tr`` (Simpson on ``t``).
    tail_free : float
        ``sum_{n > N_tr} |a_n| exp(-lam_n T)`` over the supplied modes.
    tail_forced : float
        ``sum_{n > N_tr} |F_n| |int_0^T h(T-t) exp(-lam_n t) dt|``: what the
        control injects into uncontrolled modes.
    family : BiorthogonalFamily or None
    """

    T: float
    n_tr: int
    coefficients: np.ndarray
    lambdas: np.ndarray
    terminal_fluxes: np.ndarray
    t: np.ndarray
    h: np.ndarray
    moment_residuals: np.ndarray
    tail_free: float
    tail_forced: float
    family: BiorthogonalFamily | None = None
    beta: list | None = None

    @property
    def tail_bound(self) -> float:
        return self.tail_free + self.tail_forced

    def __call__(self, t) -> np.ndarray:
        """``h`` at arbitrary times (exact series if available, else linear)."""
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.beta is None or self.family is None:
            out = np.interp(t, self.t, self.h)
        else:
            out = _evaluate_series(self.beta, self.family, self.T - t)
        return float(out[0]) if scalar else out

    def summary(self) -> dict:
        fam = self.family
        return {
            "T": self.T,
            "n_tr": self.n_tr,
            "weight_power": None if fam is None else fam.weight_power,
            "lambdas": self.lambdas[: self.n_tr].tolist(),
            "coefficients": self.coefficients.tolist(),
            "moment_residuals": self.moment_residuals.tolist(),
            "max_moment_residual": float(np.max(self.moment_residuals, initial=0.0)),
            "condition_number": None if fam is None else fam.condition,
            "precision": None if fam is None else fam.precision,
            "biorthogonality_residual": None if fam is None else fam.residual_sup,
            "biorthogonality_quad_residual": (
                None if fam is None or fam.quad_residual is None else float(np.max(fam.quad_residual))
            ),
            "theta_norms": None if fam is None else fam.theta_norms.tolist(),
            "tail_free": self.tail_free,
            "tail_forced": self.tail_forced,
            "tail_bound": self.tail_bound,
            "samples": len(self.t),
        }


def _evaluate_series(beta, family: BiorthogonalFamily, s) -> np.ndarray:
    """``s^p sum_m beta_m exp(-lam_m s)`` evaluated in multiprecision."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    out = np.empty(len(s))
    p = family.weight_power
    with mp.workdps(family.dps):
        lam = [mp.mpf(float(x)) for x in family.lambdas]
        for i, si in enumerate(s):
            sm = mp.mpf(max(float(si), 0.0))
            acc = mp.fsum(b * mp.exp(-lk * sm) for b, lk in zip(beta, lam))
            out[i] = float(acc * sm ** p) if p else float(acc)
    return out


def time_grid(T: float, lam_max: float, points_per_efold: float = 20.0, min_points: int = 1001) -> np.ndarray:
    """Uniform grid with an odd number of points and at least
    ``points_per_efold`` samples per ``1 / lam_max``."""
    n = max(min_points, int(math.ceil(points_per_efold * lam_max * T)) + 1)
    n += 1 - n % 2
    return np.linspace(0.0, T, n)


def synthesize_control(config: ProblemConfig, U0: StateVector, pairs: list[EigenPair], T: float,
                       n_tr: int = DEFAULT_NTR, weight_power: float = 2.0,
                       policy: PrecisionPolicy | None = None, points_per_efold: float = 20.0,
                       verify: bool = False) -> ControlPlan:
    """Solve the truncated moment problem and sample the control.

    Parameters
    ----------
    config : ProblemConfig
    U0 : StateVector
        Initial state, on the same grids as the eigenvectors.
    pairs : list of EigenPair
        At least ``n_tr`` normalised eigenpairs; extra pairs enter the
        tail estimates only.
    T : float
    n_tr : int
        Number of modes steered to zero.
    weight_power : float
        Weight exponent of the biorthogonal family.  The default ``2``
        makes ``h`` and ``h'`` vanish at ``t = T``.
    policy : PrecisionPolicy, optional
    points_per_efold : float
        Time samples per ``1 / lam_{N_tr}``.
    verify : bool
        Run the quadrature check of biorthogonality as well.

    Returns
    -------
    ControlPlan
    """
    if n_tr < 1 or n_tr > len(pairs):
        raise ValueError(f"n_tr must lie in [1, {len(pairs)}]")
    a = fourier_coefficients(config, U0, pairs)
    lam = np.array([p.lam for p in pairs])
    flux = np.array([p.terminal_flux for p in pairs])
    if np.any(flux[:n_tr] == 0.0):
        raise ValueError("terminal flux vanishes for a controlled mode")
    fam = biorthogonal(lam[:n_tr], T, policy, weight_power, verify=verify)
    t = time_grid(T, lam[n_tr - 1], points_per_efold)
    with mp.workdps(fam.dps):
        w = [mp.mpf(float(a[n])) * mp.exp(-mp.mpf(float(lam[n])) * T) / mp.mpf(float(flux[n]))
             for n in range(n_tr)]
        beta = [mp.fsum(w[n] * fam.coeffs[n, m] for n in range(n_tr)) for m in range(n_tr)]
    # h(T - s) on s = t, then flip so that h is indexed by real time
    h_rev = _evaluate_series(beta, fam, t)
    h = h_rev[::-1].copy()
    moments = np.array([simpson(h_rev * np.exp(-lam[n] * t), x=t) for n in range(len(pairs))])
    resid = np.abs(a[:n_tr] * np.exp(-lam[:n_tr] * T) - flux[:n_tr] * moments[:n_tr])
    tail_free = float(np.sum(np.abs(a[n_tr:]) * np.exp(-lam[n_tr:] * T)))
    tail_forced = float(np.sum(np.abs(flux[n_tr:] * moments[n_tr:])))
    return ControlPlan(float(T), n_tr, a, lam, flux, t, h, resid, tail_free, tail_forced, fam, beta)


def write_control_csv(plan: ControlPlan, path) -> None:
    """Columns ``t, h``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "h"])
        for ti, hi in zip(plan.t, plan.h):
            w.writerow([repr(float(ti)), repr(float(hi))])


def read_control_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`write_control_csv`."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1]


def write_plan_json(plan: ControlPlan, path) -> None:
    with open(path, "w") as fh:
        json.dump(plan.summary(), fh, indent=2)
