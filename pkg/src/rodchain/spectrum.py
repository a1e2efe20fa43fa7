"""Eigenvalues and eigenvectors of the coupled rod-mass operator.

Eigenvalues are the roots of the characteristic function
``lam -> phi_N(L, lam)`` (the terminal value of a left shot).  They are
isolated with the interlacing property against the merged Dirichlet
spectra ``mu_1 <= mu_2 <= ...`` of the individual rods::

    lam_1 in (0, mu_1],    lam_{n+1} in [mu_n, mu_{n+1}],

then refined with a bracketing root finder.  A bracket endpoint may itself
be an eigenvalue (when Dirichlet spectra of different rods coincide); such
endpoints are detected with the Prufer sine and excluded from the next
bracket once claimed.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson
from scipy.optimize import brentq

from .model import ProblemConfig, Rod, StateVector, h_norm
from .shooting import (
    DEFAULT_RTOL,
    ShotState,
    SolverError,
    kscale,
    propagate_rod,
    shoot_left,
)

logger = logging.getLogger(__name__)

#: Prufer-sine level below which a bracket endpoint counts as a root
ENDPOINT_ROOT_TOL = 1e-7
#: initial and maximal number of subdivisions of a bracket
SCAN_START = 8
SCAN_MAX = 256


@dataclass(frozen=True)
class Characteristic:
    """Characteristic function value ``value * exp(log_scale)`` and its Prufer sine."""

    lam: float
    value: float
    flux: float
    log_scale: float
    sine: float
    zeros: int

    @property
    def sign(self) -> int:
        return (self.value > 0) - (self.value < 0)


def characteristic(config: ProblemConfig, lam: float, rtol: float = DEFAULT_RTOL) -> Characteristic:
    """Terminal value of the left shot at ``lam``, with a scale-free zero test."""
    tr = shoot_left(config, lam, rtol)
    t = tr.terminal
    sine = t.prufer_sine(kscale(config.rods[-1], lam))
    return Characteristic(float(lam), t.value, t.flux, t.log_scale, sine, tr.zero_count)


def _scaled_root(fun, a: float, b: float, fa_ls: float) -> float:
    """Brent's method on ``value * exp(log_scale - ref)``."""

    def g(lam):
        c = fun(lam)
        return c.value * math.exp(min(c.log_scale - fa_ls, 700.0))

    return brentq(g, a, b, xtol=1e-300, rtol=1e-15, maxiter=200)


# --- Dirichlet spectra of single rods -------------------------------------------


def _rod_shot(rod: Rod, lam: float, rtol: float) -> tuple[ShotState, int]:
    st, nz, _, _ = propagate_rod(rod, ShotState(rod.left, 0.0, 1.0), lam, "right", rtol)
    return st, nz


def dirichlet_spectrum(rod: Rod, count: int, rtol: float = DEFAULT_RTOL,
                       start: int = 1, previous: float | None = None) -> np.ndarray:
    """First ``count`` Dirichlet eigenvalues of one rod (indices from ``start``).

    Each eigenvalue is isolated by bisection on the oscillation count of
    the rod shot (``count(lam) >= n`` exactly when ``lam > mu_n``) and then
    polished with Brent's method on the terminal value.
    """
    stats = rod.stats
    omega = _omega(rod)
    out = []
    lo_floor = stats["q_rho_min"] - 1.0 if previous is None else previous
    for n in range(start, start + count):
        guess = (n * math.pi / omega) ** 2 + max(stats["q_rho_max"], 0.0)
        # step just past the previous root so it cannot be found again
        lo = lo_floor + 1e-10 * max(abs(lo_floor), 1.0)
        hi = 1.2 * guess + 10.0
        _, z_hi = _rod_shot(rod, hi, rtol)
        while z_hi < n:
            lo = hi
            hi *= 2.0
            _, z_hi = _rod_shot(rod, hi, rtol)
        _, z_lo = _rod_shot(rod, lo, rtol)
        for _ in range(200):
            if z_lo == n - 1 and z_hi == n:
                break
            mid = 0.5 * (lo + hi)
            _, z_mid = _rod_shot(rod, mid, rtol)
            if z_mid >= n:
                hi, z_hi = mid, z_mid
            else:
                lo, z_lo = mid, z_mid
        else:
            raise SolverError(f"could not isolate Dirichlet eigenvalue {n}")
        ref = _rod_shot(rod, lo, rtol)[0].log_scale

        def g(lam):
            st, _ = _rod_shot(rod, lam, rtol)
            return st.value * math.exp(min(st.log_scale - ref, 700.0))

        mu = brentq(g, lo, hi, xtol=1e-300, rtol=1e-15, maxiter=200)
        out.append(mu)
        lo_floor = mu
    return np.array(out)


def _omega(rod: Rod) -> float:
    x = np.linspace(rod.left, rod.right, 257)
    return float(simpson(np.sqrt(rod.coef("rho", x) / rod.coef("sigma", x)), x=x))


def merged_dirichlet(config: ProblemConfig, count: int, rtol: float = DEFAULT_RTOL) -> tuple[np.ndarray, np.ndarray]:
    """The smallest ``count`` values of the merged rod Dirichlet spectra.

    Returns the sorted values and the rod index of each.
    """
    omegas = np.array([_omega(r) for r in config.rods])
    share = omegas / omegas.sum()
    spectra = []
    for rod, s in zip(config.rods, share):
        spectra.append(dirichlet_spectrum(rod, max(2, int(math.ceil(count * s)) + 2), rtol))
    while True:
        allv = np.concatenate(spectra)
        tags = np.concatenate([np.full(len(s), j) for j, s in enumerate(spectra)])
        order = np.argsort(allv, kind="stable")
        allv, tags = allv[order], tags[order]
        if len(allv) >= count:
            cut = allv[count - 1]
            short = [j for j, s in enumerate(spectra) if s[-1] <= cut]
            if not short:
                return allv[:count], tags[:count]
        else:
            short = list(range(len(spectra)))
        for j in short:
            more = dirichlet_spectrum(config.rods[j], max(2, len(spectra[j]) // 4), rtol,
                                      start=len(spectra[j]) + 1, previous=spectra[j][-1])
            spectra[j] = np.concatenate([spectra[j], more])


# --- coupled eigenvalues ------------------------------------------------------


@dataclass(frozen=True)
class EigenPair:
    """An eigenvalue with its normalised eigenvector.

    Attributes
    ----------
    index : int
        One-based position in the spectrum.
    lam : float
    state : StateVector or None
        Eigenvector with unit energy norm and positive slope at ``x = 0``.
    norm : float
        Energy norm of the raw left shot before normalisation.
    terminal_flux : float
        ``sigma_N(L) phi_N'(L)`` of the normalised eigenvector.
    zeros : int
        Sign changes of the eigenfunction over the chain.
    """

    index: int
    lam: float
    state: StateVector | None
    norm: float
    terminal_flux: float
    zeros: int = -1

    @property
    def norm_ratio(self) -> float:
        """``||Phi|| / |sigma_N phi_N'(L)|`` (scale free)."""
        return 1.0 / abs(self.terminal_flux)


def _is_endpoint_root(c: Characteristic) -> bool:
    return c.sine <= ENDPOINT_ROOT_TOL


@dataclass
class SpectrumResult:
    """Eigenvalues with the Dirichlet data used to bracket them.

    Attributes
    ----------
    lams : ndarray
        Eigenvalues, ascending.
    mu : ndarray
        Merged rod Dirichlet eigenvalues ``mu_1 <= mu_2 <= ...``.
    mu_rod : ndarray
        Rod index of each ``mu``.
    bracketed : ndarray of bool
        True where the interlacing bracket held the eigenvalue; False where
        the oscillation-count fallback had to locate it.
    """

    lams: np.ndarray
    mu: np.ndarray
    mu_rod: np.ndarray
    bracketed: np.ndarray


def oscillation_count(config: ProblemConfig, lam: float, rtol: float = DEFAULT_RTOL) -> int:
    """Sign changes of the left shot on ``(0, L)``; equals ``#{n : lam_n < lam}``."""
    return shoot_left(config, lam, rtol).zero_count


def solve_spectrum(config: ProblemConfig, count: int, rtol: float = DEFAULT_RTOL) -> SpectrumResult:
    """The ``count`` smallest eigenvalues together with their brackets.

    Each eigenvalue is first sought in its interlacing bracket.  The root is
    accepted only if the oscillation count just below and above it equals
    ``n - 1`` and ``n``; otherwise the eigenvalue is isolated by bisection
    on the oscillation count, which does not rely on interlacing.
    """
    if count < 1:
        raise ValueError("count must be positive")
    mu, mu_rod = merged_dirichlet(config, count + 1, rtol)
    cache: dict[float, Characteristic] = {}

    def char(lam: float) -> Characteristic:
        c = cache.get(lam)
        if c is None:
            c = characteristic(config, lam, rtol)
            cache[lam] = c
        return c

    lams: list[float] = []
    bracketed: list[bool] = []
    for n in range(1, count + 1):
        a = 0.0 if n == 1 else float(mu[n - 2])
        b = float(mu[n - 1])
        claimed = bool(lams) and abs(lams[-1] - a) <= 1e-12 * max(a, 1.0)
        try:
            r = _solve_bracket(char, a, b, claimed, n)
            ok = _index_of(char, r) == n and (not lams or r > lams[-1])
        except SolverError:
            ok = False
        if not ok:
            logger.debug("eigenvalue %d outside its interlacing bracket; using counts", n)
            r = _isolate_by_count(char, n, lams[-1] if lams else 0.0, max(b, 1.0))
        lams.append(r)
        bracketed.append(ok)
    return SpectrumResult(np.array(lams), mu[:count], mu_rod[:count], np.array(bracketed))


def _index_of(char, r: float) -> int:
    """Index ``n`` with ``count(r-) = n - 1`` and ``count(r+) = n``, else -1."""
    eps = 1e-9 * max(r, 1.0)
    below = char(r - eps).zeros
    above = char(r + eps).zeros
    return above if above == below + 1 else -1


def _isolate_by_count(char, n: int, lo: float, hi: float) -> float:
    if lo > 0.0:
        lo += 1e-10 * lo
    z_lo = char(lo).zeros if lo > 0.0 else 0
    z_hi = char(hi).zeros
    while z_hi < n:
        lo, z_lo = hi, z_hi
        hi *= 1.5
        z_hi = char(hi).zeros
    for _ in range(200):
        if z_lo == n - 1 and z_hi == n:
            break
        mid = 0.5 * (lo + hi)
        z = char(mid).zeros
        if z >= n:
            hi, z_hi = mid, z
        else:
            lo, z_lo = mid, z
    else:
        raise SolverError(f"could not isolate eigenvalue {n} by oscillation count")
    clo, chi = char(lo), char(hi)
    if clo.sign == 0 or (lo > 0.0 and _is_endpoint_root(clo) and clo.sign * chi.sign >= 0):
        return lo
    if chi.sign == 0:
        return hi
    return _scaled_root(char, lo, hi, clo.log_scale)


def eigenvalues(config: ProblemConfig, count: int, rtol: float = DEFAULT_RTOL) -> np.ndarray:
    """The ``count`` smallest eigenvalues, ascending."""
    return solve_spectrum(config, count, rtol).lams


def _solve_bracket(char, a: float, b: float, claimed: bool, n: int) -> float:
    if b - a <= 1e-13 * max(b, 1.0):
        return 0.5 * (a + b)
    ca = char(a) if a > 0.0 else None
    if ca is not None and not claimed and _is_endpoint_root(ca):
        return a
    cb = char(b)
    b_root = _is_endpoint_root(cb)
    delta = 1e-6 * (b - a)
    m = SCAN_START
    while m <= SCAN_MAX:
        pts = np.linspace(a, b, m + 1)
        cands = []
        if a == 0.0:
            # value is +x at lam = 0; the positive sign is exact
            cands.append((a, None, 1))
        elif not claimed and not _is_endpoint_root(ca):
            cands.append((a, ca, ca.sign))
        else:
            # a root sits at a; probe just inside the bracket for the sign
            t = a + delta
            c = char(t)
            cands.append((t, c, c.sign))
        for t in pts[1:-1]:
            c = char(float(t))
            cands.append((float(t), c, c.sign))
        if not b_root:
            cands.append((b, cb, cb.sign))
        else:
            t = b - delta
            c = char(t)
            cands.append((t, c, c.sign))
        for (x0, c0, s0), (x1, c1, s1) in zip(cands, cands[1:]):
            if s0 * s1 < 0:
                ref = c1.log_scale if c0 is None else c0.log_scale
                return _scaled_root(char, x0, x1, ref)
            if s1 == 0:
                return x1
        if b_root:
            return b
        m *= 2
    raise SolverError(f"no sign change for eigenvalue {n} in [{a!r}, {b!r}]")


def eigenfunction(config: ProblemConfig, lam: float, grid=None, rtol: float = DEFAULT_RTOL,
                  index: int = 0) -> EigenPair:
    """Normalised eigenvector for an (already computed) eigenvalue ``lam``.

    The energy norm is computed with Simpson's rule on a grid fine enough to
    resolve the oscillation (at least 64 points per local wavelength).  If
    ``grid`` is given (an int or one array per rod) the returned state is
    sampled there; otherwise on the fine grid.
    """
    fine = []
    for rod in config.rods:
        periods = math.sqrt(max(lam, 1.0)) * _omega(rod) / (2 * math.pi)
        cells = int(max(128, math.ceil(64 * periods)))
        cells += cells % 2
        fine.append(np.linspace(rod.left, rod.right, cells + 1))
    tr = shoot_left(config, lam, rtol, grid=fine)
    ref = tr.terminal.log_scale
    vals = []
    for s in tr.samples:
        vals.append(s.value * np.exp(s.log_scale - ref))
    z = np.array([vals[j][-1] for j in range(len(config.rods) - 1)])
    raw = StateVector(tuple(fine), tuple(vals), z)
    nrm = h_norm(config, raw)
    if not nrm > 0.0:
        raise SolverError("zero eigenvector")
    flux_true = tr.terminal.flux / nrm
    # the shot starts with slope +1, so the sign convention holds already
    if grid is None:
        state = raw.scaled(1.0 / nrm)
    else:
        tr2 = shoot_left(config, lam, rtol, grid=grid)
        v2 = [s.value * np.exp(s.log_scale - ref) / nrm for s in tr2.samples]
        grids = tuple(s.x for s in tr2.samples)
        state = StateVector(grids, tuple(v2), z / nrm)
    zeros = _sign_changes(np.concatenate(vals), tol=1e-9 * max(np.max(np.abs(v)) for v in vals))
    return EigenPair(index, float(lam), state, nrm * math.exp(ref), float(flux_true), zeros)


def _sign_changes(v: np.ndarray, tol: float) -> int:
    s = np.sign(v[np.abs(v) > tol])
    return int(np.count_nonzero(s[1:] != s[:-1]))


def eigenpairs(config: ProblemConfig, count: int, grid=None, rtol: float = DEFAULT_RTOL,
               with_vectors: bool = True) -> list[EigenPair]:
    """Eigenvalues and (optionally) normalised eigenvectors."""
    lams = eigenvalues(config, count, rtol)
    out = []
    for i, lam in enumerate(lams, start=1):
        if with_vectors:
            out.append(eigenfunction(config, lam, grid, rtol, index=i))
        else:
            out.append(EigenPair(i, float(lam), None, float("nan"), float("nan")))
    return out


def count_sign_changes(config: ProblemConfig, lam_max: float, points: int,
                       rtol: float = DEFAULT_RTOL) -> int:
    """Brute-force count of characteristic sign changes on ``(0, lam_max]``."""
    grid = np.linspace(0.0, lam_max, points + 1)[1:]
    signs = [1]
    for lam in grid:
        signs.append(characteristic(config, float(lam), rtol).sign)
    s = np.array([x for x in signs if x != 0])
    return int(np.count_nonzero(s[1:] != s[:-1]))


# --- output -------------------------------------------------------------------


def write_spectrum_csv(pairs: list[EigenPair], path_or_file, branch_tags=None) -> None:
    """Columns ``n, lambda_n, branch_tag, terminal_flux, norm_ratio``."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh)
        w.writerow(["n", "lambda_n", "branch_tag", "terminal_flux", "norm_ratio"])
        for i, p in enumerate(pairs):
            tag = "" if branch_tags is None else branch_tags[i]
            w.writerow([p.index, repr(p.lam), tag, repr(p.terminal_flux), repr(p.norm_ratio)])
    finally:
        if own:
            fh.close()


def spectrum_json(pairs: list[EigenPair]) -> dict:
    """Eigenvalues with full eigenvector samples, ready for ``json.dump``."""
    modes = []
    for p in pairs:
        entry = {"n": p.index, "lambda": p.lam, "terminal_flux": p.terminal_flux,
                 "norm_ratio": p.norm_ratio}
        if p.state is not None:
            entry["rods"] = [
                {"x": g.tolist(), "value": v.tolist()} for g, v in zip(p.state.grids, p.state.values)
            ]
            entry["z"] = p.state.z.tolist()
        modes.append(entry)
    return {"modes": modes}


def write_spectrum_json(pairs: list[EigenPair], path) -> None:
    with open(path, "w") as fh:
        json.dump(spectrum_json(pairs), fh)
