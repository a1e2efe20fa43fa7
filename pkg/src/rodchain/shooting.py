"""Left and right shots through the rod chain.

A left shot starts at ``x = 0`` with ``(value, flux) = (0, 1)`` and a right
shot at ``x = L`` with ``(0, -1)``.  Inside a rod the pair obeys
``value' = flux / sigma`` and ``flux' = (q - lam rho) value``; at an
interface the value is continuous and the flux jumps by ``-M lam value``
when moving rightwards.  Amplitudes are kept in ``[2^-40, 2^40]`` by exact
power-of-two rescaling, with the exponent carried in ``log_scale``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .model import ProblemConfig, Rod

#: default relative tolerance of the adaptive integrator
DEFAULT_RTOL = 1e-11


class SolverError(RuntimeError):
    """Raised when an integration or root search cannot complete."""


@dataclass(frozen=True)
class ShotState:
    """Value and flux at ``x``; the true pair is ``(value, flux) * exp(log_scale)``."""

    x: float
    value: float
    flux: float
    log_scale: float = 0.0

    def true_value(self) -> float:
        return self.value * math.exp(self.log_scale)

    def true_flux(self) -> float:
        return self.flux * math.exp(self.log_scale)

    def prufer_sine(self, k: float) -> float:
        """``|value| / hypot(value, flux / k)``, a scale-free zero test."""
        r = math.hypot(self.value, self.flux / k)
        return abs(self.value) / r if r > 0.0 else 0.0


@dataclass
class RodSamples:
    """Samples recorded on one rod, in the order they were visited."""

    x: np.ndarray
    value: np.ndarray
    flux: np.ndarray
    log_scale: np.ndarray

    def true_values(self) -> tuple[np.ndarray, np.ndarray]:
        s = np.exp(self.log_scale)
        return self.value * s, self.flux * s


@dataclass
class ShotTrace:
    """Result of a shot across the whole chain.

    Attributes
    ----------
    terminal : ShotState
        State at the far endpoint.
    zero_count : int
        Sign changes of the value seen by the integrator.
    interfaces : list of tuple
        ``(before, after)`` states at each interface crossed, in travel order.
    samples : list of RodSamples or None
        Per-rod samples (rod order, ascending ``x``) if a grid was requested.
    steps : int
        Accepted integrator steps.
    """

    lam: float
    direction: str
    terminal: ShotState
    zero_count: int
    interfaces: list = field(default_factory=list)
    samples: list | None = None
    steps: int = 0


def kscale(rod: Rod, lam: float) -> float:
    """Frequency scale weighting ``value`` against ``flux`` on ``rod``."""
    return math.sqrt(max(abs(lam), 1.0) * rod.stats["rho_sigma_mean"])


def _initial_step(rod: Rod, lam: float) -> float:
    nu = math.sqrt(max(abs(lam), 1.0)) * rod.stats["speed_max"]
    return min(rod.length, 0.05 / nu)


def propagate_rod(rod: Rod, state: ShotState, lam: float, towards: str = "right",
                  rtol: float = DEFAULT_RTOL, grid: np.ndarray | None = None,
                  fixed_steps: int = 0) -> tuple[ShotState, int, RodSamples | None, int]:
    """Integrate across one rod.

    Parameters
    ----------
    rod : Rod
    state : ShotState
        State at the starting endpoint (``rod.left`` when moving right).
    lam : float
    towards : {"right", "left"}
    rtol : float
        Relative tolerance in the energy-weighted norm.
    grid : ndarray, optional
        Ascending abscissae inside the rod where samples are recorded.
    fixed_steps : int
        Use a fixed number of steps instead of adaptive control.

    Returns
    -------
    state : ShotState
        State at the opposite endpoint.
    zeros : int
        Sign changes of the value inside the rod.
    samples : RodSamples or None
    steps : int
    """
    if towards == "right":
        x0, x1 = rod.left, rod.right
    elif towards == "left":
        x0, x1 = rod.right, rod.left
    else:
        raise ValueError("towards must be 'right' or 'left'")
    if grid is None:
        ox = np.empty(0)
    else:
        ox = np.asarray(grid, dtype=float)
        if towards == "left":
            ox = ox[::-1]
        ox = np.ascontiguousarray(ox)
    ov = np.zeros(len(ox))
    of = np.zeros(len(ox))
    ol = np.zeros(len(ox))
    k = kscale(rod, lam)
    try:
        v, f, ls, nacc, _, nz = kernels.propagate(
            state.value, state.flux, x0, x1, float(lam), *rod.kernel_data,
            rtol, k, _initial_step(rod, lam), ox, ov, of, ol, int(fixed_steps),
        )
    except RuntimeError as exc:
        raise SolverError(f"integration failed at lam={lam!r}: {exc}") from None
    if not (math.isfinite(v) and math.isfinite(f)):
        raise SolverError(f"non-finite state at lam={lam!r}")
    samples = None
    if grid is not None:
        ol = ol + state.log_scale
        if towards == "left":
            ox, ov, of, ol = ox[::-1], ov[::-1], of[::-1], ol[::-1]
        samples = RodSamples(ox.copy(), ov.copy(), of.copy(), ol.copy())
    return ShotState(x1, v, f, state.log_scale + ls), int(nz), samples, int(nacc)


def cross_interface_left(state: ShotState, mass: float, lam: float) -> ShotState:
    """Cross a mass while moving rightwards: ``flux+ = flux- - M lam value``."""
    return ShotState(state.x, state.value, state.flux - mass * lam * state.value, state.log_scale)


def cross_interface_right(state: ShotState, mass: float, lam: float) -> ShotState:
    """Cross a mass while moving leftwards: ``flux- = flux+ + M lam value``."""
    return ShotState(state.x, state.value, state.flux + mass * lam * state.value, state.log_scale)


def _grids_for(config: ProblemConfig, grid) -> list | None:
    if grid is None:
        return None
    if isinstance(grid, int):
        return [np.linspace(r.left, r.right, grid) for r in config.rods]
    if len(grid) != len(config.rods):
        raise ValueError("need one sample grid per rod")
    return [np.asarray(g, dtype=float) for g in grid]


def shoot_left(config: ProblemConfig, lam: float, rtol: float = DEFAULT_RTOL,
               grid=None, fixed_steps: int = 0) -> ShotTrace:
    """Shoot from ``x = 0`` with ``(value, flux) = (0, 1)`` to ``x = L``.

    ``grid`` is either an integer (uniform samples per rod) or one array per
    rod; when given, per-rod samples are stored in the trace.
    """
    grids = _grids_for(config, grid)
    state = ShotState(0.0, 0.0, 1.0, 0.0)
    zeros = 0
    steps = 0
    interfaces = []
    samples = [] if grids is not None else None
    for j, rod in enumerate(config.rods):
        if j > 0:
            before = state
            state = cross_interface_left(state, config.masses[j - 1], lam)
            interfaces.append((before, state))
        state, nz, smp, ns = propagate_rod(
            rod, state, lam, "right", rtol, None if grids is None else grids[j], fixed_steps
        )
        zeros += nz
        steps += ns
        if samples is not None:
            samples.append(smp)
    return ShotTrace(lam, "left", state, zeros, interfaces, samples, steps)


def shoot_right(config: ProblemConfig, lam: float, rtol: float = DEFAULT_RTOL,
                grid=None, fixed_steps: int = 0) -> ShotTrace:
    """Shoot from ``x = L`` with ``(value, flux) = (0, -1)`` to ``x = 0``."""
    grids = _grids_for(config, grid)
    state = ShotState(config.length, 0.0, -1.0, 0.0)
    zeros = 0
    steps = 0
    interfaces = []
    n = len(config.rods)
    samples = [None] * n if grids is not None else None
    for j in range(n - 1, -1, -1):
        rod = config.rods[j]
        if j < n - 1:
            before = state
            state = cross_interface_right(state, config.masses[j], lam)
            interfaces.append((before, state))
        state, nz, smp, ns = propagate_rod(
            rod, state, lam, "left", rtol, None if grids is None else grids[j], fixed_steps
        )
        zeros += nz
        steps += ns
        if samples is not None:
            samples[j] = smp
    return ShotTrace(lam, "right", state, zeros, interfaces, samples, steps)


def wronskian(a: ShotTrace, b: ShotTrace) -> list[np.ndarray]:
    """Per-rod ``value_a flux_b - flux_a value_b`` from two sampled traces."""
    out = []
    for sa, sb in zip(a.samples, b.samples):
        va, fa = sa.true_values()
        vb, fb = sb.true_values()
        out.append(va * fb - fa * vb)
    return out


def write_trace_csv(trace: ShotTrace, path_or_file) -> None:
    """Write a sampled trace with columns ``rod, x, value, flux, log_scale``."""
    if trace.samples is None:
        raise ValueError("trace has no samples; shoot with a grid")
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh)
        w.writerow(["rod", "x", "value", "flux", "log_scale"])
        for j, s in enumerate(trace.samples):
            for row in zip(s.x, s.value, s.flux, s.log_scale):
                w.writerow([j, *(repr(float(t)) for t in row)])
    finally:
        if own:
            fh.close()


def sampled_grid(config: ProblemConfig, points: Sequence[int] | int) -> list[np.ndarray]:
    """Uniform sample grids, ``points`` per rod (int or per-rod sequence)."""
    if isinstance(points, int):
        points = [points] * len(config.rods)
    return [np.linspace(r.left, r.right, p) for r, p in zip(config.rods, points)]
