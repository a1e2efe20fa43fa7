"""Finite-volume Crank-Nicolson simulation of the controlled heat chain.

Each rod carries a uniform vertex grid.  Interior vertices own a control
volume of width ``dx`` with lumped mass ``rho dx``; faces carry the flux
``sigma_face (u_right - u_left) / dx`` with the harmonic mean of the nodal
conductivities.  The vertex at an interface is the mass temperature ``z_j``
itself; its control volume is the point mass plus the two adjacent half
cells, so its row reads ``(M_j + half cells) z_j' = flux(right) -
flux(left) - q z_j (half cells)``.  ``u(0) = 0`` and ``u(L) = h(t)`` are
imposed strongly.  The semi-discrete system is ``M u' = -A u + b h(t)``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.integrate import simpson
from scipy.linalg import eigh
from scipy.sparse.linalg import splu

from .model import ProblemConfig, StateVector, h_norm, inner_product
from .spectrum import EigenPair

#: fewest cells accepted per rod
MIN_CELLS = 16


@dataclass
class DiscreteOperator:
    """Assembled semi-discrete operator ``M u' = -A u + b h``.

    Attributes
    ----------
    config : ProblemConfig
    grids : tuple of ndarray
        Vertex grids per rod, endpoints included.
    mass : ndarray
        Lumped mass (diagonal of ``M``), interface rows include ``M_j``.
    stiffness : scipy.sparse.csr_matrix
        ``A``, symmetric.
    inject : ndarray
        ``b``; a single nonzero entry in the row next to ``x = L``.
    slices : list of slice
        Interior-vertex unknowns of each rod.
    z_index : ndarray
        Unknown index of each interface vertex.
    """

    config: ProblemConfig
    grids: tuple
    mass: np.ndarray
    stiffness: sp.csr_matrix
    inject: np.ndarray
    slices: list
    z_index: np.ndarray
    _lu: dict = field(default_factory=dict, repr=False)

    @property
    def size(self) -> int:
        return len(self.mass)

    def energy(self, u: np.ndarray) -> float:
        """Discrete energy norm ``sqrt(u^T M u)`` (boundary value excluded)."""
        return math.sqrt(float(np.sum(self.mass * u * u)))

    def to_state(self, u: np.ndarray, h: float = 0.0) -> StateVector:
        """Vertex values as a :class:`StateVector`, boundary values filled in."""
        values = []
        n = len(self.grids)
        for j in range(n):
            left = 0.0 if j == 0 else u[self.z_index[j - 1]]
            right = h if j == n - 1 else u[self.z_index[j]]
            values.append(np.concatenate([[left], u[self.slices[j]], [right]]))
        return StateVector(self.grids, tuple(values), u[self.z_index].copy())

    def from_state(self, state: StateVector) -> np.ndarray:
        """Unknown vector of a state sampled on this operator's grids."""
        if len(state.grids) != len(self.grids) or any(
            g.shape != s.shape or not np.allclose(g, s, rtol=0, atol=1e-12)
            for g, s in zip(self.grids, state.grids)
        ):
            raise ValueError("state is not sampled on the operator grids")
        u = np.empty(self.size)
        for j, v in enumerate(state.values):
            u[self.slices[j]] = np.real(v[1:-1])
        u[self.z_index] = np.real(state.z)
        return u

    def eigenvalues(self, count: int) -> np.ndarray:
        """Smallest eigenvalues of ``A v = lam M v`` (dense solve)."""
        d = 1.0 / np.sqrt(self.mass)
        S = (self.stiffness.toarray() * d[:, None]) * d[None, :]
        return eigh(S, eigvals_only=True, subset_by_index=[0, count - 1])

    def factor(self, theta_dt: float):
        """Cached LU factors of ``M + theta_dt A``."""
        key = float(theta_dt)
        lu = self._lu.get(key)
        if lu is None:
            lu = splu((sp.diags(self.mass) + theta_dt * self.stiffness).tocsc())
            self._lu[key] = lu
        return lu


def _harmonic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 2.0 * a * b / (a + b)


def assemble(config: ProblemConfig, cells=256) -> DiscreteOperator:
    """Assemble the finite-volume operator.

    Parameters
    ----------
    config : ProblemConfig
    cells : int or sequence of int
        Cells per rod (at least 16 each).

    Raises
    ------
    ValueError
        If a rod has fewer than 16 cells.
    """
    rods = config.rods
    cells = [int(cells)] * len(rods) if np.ndim(cells) == 0 else [int(c) for c in cells]
    if len(cells) != len(rods):
        raise ValueError("need one cell count per rod")
    if min(cells) < MIN_CELLS:
        raise ValueError(f"grid too coarse: need at least {MIN_CELLS} cells per rod")
    grids = tuple(np.linspace(r.left, r.right, c + 1) for r, c in zip(rods, cells))

    # unknown numbering: interior of rod 0, z_1, interior of rod 1, z_2, ...
    slices, z_index, pos = [], [], 0
    for j, c in enumerate(cells):
        slices.append(slice(pos, pos + c - 1))
        pos += c - 1
        if j < len(rods) - 1:
            z_index.append(pos)
            pos += 1
    n = pos
    mass = np.zeros(n)
    rows, cols, vals = [], [], []
    inject = np.zeros(n)

    def idx(j: int, i: int) -> int | None:
        """Unknown index of vertex ``i`` of rod ``j`` (None for boundary vertices)."""
        if i == 0:
            return None if j == 0 else z_index[j - 1]
        if i == cells[j]:
            return None if j == len(rods) - 1 else z_index[j]
        return slices[j].start + i - 1

    for j, (rod, g) in enumerate(zip(rods, grids)):
        dx = g[1] - g[0]
        rho = rod.coef("rho", g)
        sig = rod.coef("sigma", g)
        q = rod.coef("q", g)
        w = np.full(len(g), dx)
        w[0] = w[-1] = 0.5 * dx
        for i in range(len(g)):
            k = idx(j, i)
            if k is not None:
                mass[k] += rho[i] * w[i]
                rows.append(k), cols.append(k), vals.append(q[i] * w[i])
        face = _harmonic(sig[:-1], sig[1:]) / dx
        for i in range(len(g) - 1):
            a, b = idx(j, i), idx(j, i + 1)
            c = face[i]
            for r, s in ((a, b), (b, a)):
                if r is None:
                    continue
                rows.append(r), cols.append(r), vals.append(c)
                if s is not None:
                    rows.append(r), cols.append(s), vals.append(-c)
            if j == len(rods) - 1 and i == len(g) - 2:
                inject[a] = c
    for k, m in zip(z_index, config.masses):
        mass[k] += m
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    A.sum_duplicates()
    return DiscreteOperator(config, grids, mass, A, inject, slices, np.array(z_index, dtype=int))


def step(u: np.ndarray, op: DiscreteOperator, h_pair: tuple[float, float], dt: float) -> np.ndarray:
    """One Crank-Nicolson step from ``t`` to ``t + dt``.

    ``h_pair`` holds the boundary values at ``t`` and ``t + dt``.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    rhs = op.mass * u - 0.5 * dt * (op.stiffness @ u) + 0.5 * dt * op.inject * (h_pair[0] + h_pair[1])
    out = op.factor(0.5 * dt).solve(rhs)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("linear solve produced non-finite values")
    return out


def euler_step(u: np.ndarray, op: DiscreteOperator, h_new: float, dt: float) -> np.ndarray:
    """One backward Euler step."""
    rhs = op.mass * u + dt * op.inject * h_new
    return op.factor(dt).solve(rhs)


def _control_function(plan) -> Callable[[float], float]:
    if plan is None:
        return lambda t: 0.0
    if callable(plan):
        return plan
    t, h = plan
    t = np.asarray(t, dtype=float)
    h = np.asarray(h, dtype=float)
    return lambda s: float(np.interp(s, t, h))


def run(u0: np.ndarray, op: DiscreteOperator, control, T: float, dt: float,
        startup: int = 2, snapshot_every: int = 0) -> tuple[np.ndarray, list]:
    """March ``u0`` to ``T`` with a boundary control.

    The first ``startup`` steps are each replaced by two backward Euler
    half steps, which damps the jump between ``u0`` and ``h(0)`` at
    ``x = L`` that plain Crank-Nicolson would carry along undamped.

    Returns
    -------
    u : ndarray
        Unknowns at ``T``.
    snapshots : list of (t, u, h)
    """
    nsteps = int(round(T / dt))
    if nsteps < 1 or abs(nsteps * dt - T) > 1e-9 * T:
        raise ValueError("T must be an integer multiple of dt")
    h = _control_function(control)
    u = np.array(u0, dtype=float)
    snaps = [(0.0, u.copy(), h(0.0))] if snapshot_every else []
    h_old = h(0.0)
    for k in range(nsteps):
        t0, t1 = k * dt, (k + 1) * dt
        h_new = h(t1)
        if k < startup:
            u = euler_step(u, op, h(t0 + 0.5 * dt), 0.5 * dt)
            u = euler_step(u, op, h_new, 0.5 * dt)
        else:
            u = step(u, op, (h_old, h_new), dt)
        h_old = h_new
        if snapshot_every and ((k + 1) % snapshot_every == 0 or k + 1 == nsteps):
            snaps.append((t1, u.copy(), h_new))
    return u, snaps


@dataclass
class SimulationReport:
    """Terminal summary of a controlled run.

    Attributes
    ----------
    T, dt : float
    initial_norm : float
        ``||U0||_H``.
    terminal_norm : float
        ``||U(T)||_H`` with the control.
    free_norm : float
        ``||U_free(T)||_H`` with ``h = 0``.
    projections : ndarray
        ``<U(T), Phi_n>`` for the supplied eigenpairs.
    free_projections : ndarray
    terminal : StateVector
    snapshots : list
    """

    T: float
    dt: float
    initial_norm: float
    terminal_norm: float
    free_norm: float
    projections: np.ndarray
    free_projections: np.ndarray
    terminal: StateVector
    snapshots: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "dt": self.dt,
            "initial_norm": self.initial_norm,
            "terminal_norm": self.terminal_norm,
            "free_norm": self.free_norm,
            "relative_terminal_norm": self.terminal_norm / self.initial_norm if self.initial_norm else 0.0,
            "ratio_to_free": self.terminal_norm / self.free_norm if self.free_norm else 0.0,
            "projections": self.projections.tolist(),
            "free_projections": self.free_projections.tolist(),
            "mass_temperatures": self.terminal.z.tolist(),
        }


def simulate(U0: StateVector, plan, op: DiscreteOperator, T: float | None = None, dt: float = 1e-3,
             pairs: list[EigenPair] | None = None, startup: int = 2,
             snapshot_every: int = 0) -> SimulationReport:
    """Run the controlled system and the uncontrolled baseline.

    Parameters
    ----------
    U0 : StateVector
        Initial state on the operator grids.
    plan : ControlPlan, callable, (t, h) tuple or None
        Boundary control; sample tables are interpolated linearly.
    op : DiscreteOperator
    T : float, optional
        Horizon; defaults to ``plan.T``.
    dt : float
    pairs : list of EigenPair, optional
        Eigenvectors on the operator grids for terminal projections.
    startup : int
        Number of damped startup steps.
    snapshot_every : int
        Keep every k-th state (0 keeps none).
    """
    if T is None:
        T = getattr(plan, "T", None)
        if T is None:
            raise ValueError("T is required when the plan does not carry one")
    config = op.config
    u0 = op.from_state(U0)
    u, snaps = run(u0, op, plan, T, dt, startup, snapshot_every)
    uf, _ = run(u0, op, None, T, dt, startup)
    h = _control_function(plan)
    terminal = op.to_state(u, h(T))
    free = op.to_state(uf, 0.0)
    if pairs:
        proj = np.array([inner_product(config, terminal, p.state) for p in pairs])
        fproj = np.array([inner_product(config, free, p.state) for p in pairs])
    else:
        proj = fproj = np.empty(0)
    return SimulationReport(float(T), float(dt), h_norm(config, U0), h_norm(config, terminal),
                            h_norm(config, free), proj, fproj, terminal, snaps)


@dataclass
class DualityReport:
    """Both sides of ``<U0, Uhat(0)> = int_0^T h(t) sigma_N d_x uhat_N(t, L) dt``.

    ``lhs_modal`` is the left side from the modal expansion
    ``sum a_n c_n exp(-lam_n T)``; ``lhs`` is the same quantity by spatial
    quadrature of the assembled adjoint state.
    """

    lhs: float
    lhs_modal: float
    rhs: float

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs) / (1.0 + abs(self.lhs))


def duality_check(config: ProblemConfig, U0: StateVector, uhat_T, plan, pairs: list[EigenPair],
                  T: float | None = None) -> DualityReport:
    """Evaluate the duality identity for an adjoint final datum.

    Parameters
    ----------
    uhat_T : array_like
        Coefficients of the adjoint final datum in the supplied modes.
    plan : ControlPlan or (t, h) tuple or None
        Control samples on a uniform grid (Simpson in time).
    pairs : list of EigenPair
    """
    c = np.asarray(uhat_T, dtype=float)
    if len(c) > len(pairs):
        raise ValueError("more adjoint coefficients than eigenpairs")
    if T is None:
        T = getattr(plan, "T", None)
        if T is None:
            raise ValueError("T is required when the plan does not carry one")
    lam = np.array([p.lam for p in pairs[: len(c)]])
    decay = np.exp(-lam * T)
    uhat0 = None
    for ci, di, p in zip(c, decay, pairs):
        term = p.state.scaled(ci * di)
        uhat0 = term if uhat0 is None else uhat0 + term
    lhs = float(np.real(inner_product(config, U0, uhat0))) if uhat0 is not None else 0.0
    a = np.array([float(np.real(inner_product(config, U0, p.state))) for p in pairs[: len(c)]])
    lhs_modal = float(np.sum(a * c * decay))
    if plan is None:
        rhs = 0.0
    else:
        if hasattr(plan, "t"):
            t, h = plan.t, plan.h
        else:
            t, h = (np.asarray(v, dtype=float) for v in plan)
        flux = np.array([p.terminal_flux for p in pairs[: len(c)]])
        # sigma_N d_x uhat(t, L) = sum c_n F_n exp(-lam_n (T - t))
        g = np.sum((c * flux)[:, None] * np.exp(-lam[:, None] * (T - t[None, :])), axis=0)
        rhs = float(simpson(h * g, x=t))
    return DualityReport(lhs, lhs_modal, rhs)


def write_snapshots_csv(op: DiscreteOperator, snapshots: list, path) -> None:
    """Long-format snapshots: ``t, x, u`` plus one ``z_j`` column per mass."""
    nz = len(op.z_index)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "u", *[f"z_{j + 1}" for j in range(nz)]])
        for t, u, h in snapshots:
            st = op.to_state(u, h)
            zs = [repr(float(z)) for z in st.z]
            seen = set()
            for g, v in zip(st.grids, st.values):
                for x, val in zip(g, v):
                    if x in seen:
                        continue
                    seen.add(x)
                    w.writerow([repr(float(t)), repr(float(x)), repr(float(val)), *zs])


def write_report_json(report: SimulationReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
