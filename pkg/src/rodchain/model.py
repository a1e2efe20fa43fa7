"""Problem description for a chain of rods joined by point masses.

A configuration holds ``N + 1`` rods ``[l_j, l_{j+1}]`` covering ``[0, L]``,
each with density ``rho``, stiffness ``sigma`` and potential ``q``, plus a
point mass ``M_j`` at every interior interface.  The energy space pairs a
function on each rod with the displacement of each mass; its inner product
is ``sum_j int rho_j u_j v_j dx + sum_j M_j z_j w_j``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import PchipInterpolator, make_interp_spline

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

KINDS = ("constant", "polynomial", "sampled-grid")
_KIND_ALIASES = {"sampled": "sampled-grid", "grid": "sampled-grid", "poly": "polynomial"}

#: number of samples per rod used when validating positivity
VALIDATION_SAMPLES = 513


class ConfigError(ValueError):
    """Malformed configuration, with the file path and line when known."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


@dataclass(frozen=True)
class CoefficientDescriptor:
    """One coefficient function on one rod.

    Parameters
    ----------
    kind : {"constant", "polynomial", "sampled-grid"}
        ``constant`` takes a float.  ``polynomial`` takes coefficients
        ``c0, c1, ...`` of ``c0 + c1 s + ...`` in the local coordinate
        ``s = x - l_j``.  ``sampled-grid`` takes ``(abscissae, values)`` in
        absolute coordinates and is interpolated with a monotone-safe cubic.
    data : float, sequence or pair of sequences
        Payload matching ``kind``.
    """

    kind: str
    data: object

    def __post_init__(self):
        kind = _KIND_ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ValueError(f"unknown coefficient kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if kind == "constant":
            object.__setattr__(self, "data", float(self.data))
        elif kind == "polynomial":
            coeffs = tuple(float(c) for c in np.atleast_1d(self.data))
            if not coeffs:
                raise ValueError("polynomial needs at least one coefficient")
            object.__setattr__(self, "data", coeffs)
        else:
            xs, ys = self.data
            xs = tuple(float(t) for t in xs)
            ys = tuple(float(t) for t in ys)
            if len(xs) != len(ys):
                raise ValueError("sampled-grid abscissae and values differ in length")
            if len(xs) < 2:
                raise ValueError("sampled-grid needs at least two samples")
            if any(b <= a for a, b in zip(xs, xs[1:])):
                raise ValueError("sampled-grid abscissae must be strictly increasing")
            object.__setattr__(self, "data", (xs, ys))

    @classmethod
    def constant(cls, value: float) -> "CoefficientDescriptor":
        return cls("constant", value)

    @classmethod
    def polynomial(cls, coeffs: Sequence[float]) -> "CoefficientDescriptor":
        return cls("polynomial", tuple(coeffs))

    @classmethod
    def sampled(cls, xs: Sequence[float], ys: Sequence[float]) -> "CoefficientDescriptor":
        return cls("sampled-grid", (tuple(xs), tuple(ys)))

    def to_dict(self) -> dict:
        if self.kind == "sampled-grid":
            return {"kind": self.kind, "data": [list(self.data[0]), list(self.data[1])]}
        if self.kind == "polynomial":
            return {"kind": self.kind, "data": list(self.data)}
        return {"kind": self.kind, "data": self.data}

    def evaluate(self, x, origin: float = 0.0, derivative: int = 0) -> np.ndarray:
        """Evaluate the coefficient (or a derivative) at ``x``.

        Sampled grids use the monotone cubic for values and first
        derivatives; second derivatives come from an interpolating cubic
        spline, since the monotone cubic is only once differentiable.
        """
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full_like(x, self.data if derivative == 0 else 0.0)
        if self.kind == "polynomial":
            p = np.polynomial.Polynomial(self.data)
            if derivative:
                p = p.deriv(derivative)
            return p(x - origin)
        xs, ys = (np.asarray(a) for a in self.data)
        if derivative >= 2:
            if len(xs) < 8:
                raise ValueError("sampled-grid needs at least 8 samples for second derivatives")
            return make_interp_spline(xs, ys, k=3)(x, derivative)
        return PchipInterpolator(xs, ys, extrapolate=True)(x, derivative)

    def piecewise(self, left: float, right: float) -> tuple[np.ndarray, np.ndarray]:
        """Piecewise-polynomial form on ``[left, right]`` for the kernel.

        Returns
        -------
        breaks : ndarray, shape (p + 1,)
        coeffs : ndarray, shape (p, k)
            Lowest power first, in the variable ``x - breaks[i]``.
        """
        if self.kind == "constant":
            return np.array([left, right]), np.array([[self.data]])
        if self.kind == "polynomial":
            return np.array([left, right]), np.array([self.data])
        xs, ys = (np.asarray(a) for a in self.data)
        pp = PchipInterpolator(xs, ys, extrapolate=True)
        breaks = np.asarray(pp.x, dtype=float).copy()
        coeffs = np.ascontiguousarray(pp.c[::-1].T)
        # extend the outer pieces so the whole rod is covered
        breaks[0] = min(breaks[0], left)
        if breaks[0] < pp.x[0]:
            coeffs[0] = _shift_poly(coeffs[0], breaks[0] - pp.x[0])
        breaks[-1] = max(breaks[-1], right)
        return breaks, coeffs


def _shift_poly(c: np.ndarray, delta: float) -> np.ndarray:
    """Re-express ``sum c_k s^k`` in terms of ``t = s - delta``."""
    p = np.polynomial.Polynomial(c)
    shifted = p(np.polynomial.Polynomial([delta, 1.0]))
    out = np.zeros_like(c)
    out[: len(shifted.coef)] = shifted.coef[: len(c)]
    return out


@dataclass(frozen=True)
class Rod:
    """A single rod ``[left, right]`` with its three coefficients."""

    left: float
    right: float
    rho: CoefficientDescriptor
    sigma: CoefficientDescriptor
    q: CoefficientDescriptor

    @property
    def length(self) -> float:
        return self.right - self.left

    def coef(self, name: str, x, derivative: int = 0) -> np.ndarray:
        return getattr(self, name).evaluate(x, origin=self.left, derivative=derivative)

    @cached_property
    def kernel_data(self) -> tuple:
        """Piecewise data ``(rho_b, rho_c, sig_b, sig_c, q_b, q_c)``."""
        out = []
        for name in ("rho", "sigma", "q"):
            b, c = getattr(self, name).piecewise(self.left, self.right)
            out.extend([np.ascontiguousarray(b), np.ascontiguousarray(c, dtype=float)])
        return tuple(out)

    @cached_property
    def stats(self) -> dict:
        """Sampled summary used for step-size and weighting heuristics."""
        x = np.linspace(self.left, self.right, 129)
        rho = self.coef("rho", x)
        sig = self.coef("sigma", x)
        q = self.coef("q", x)
        return {
            "rho_sigma_mean": float(np.mean(rho * sig)),
            "speed_max": float(np.max(np.sqrt(np.abs(rho / sig)))),
            "q_rho_min": float(np.min(q / rho)),
            "q_rho_max": float(np.max(q / rho)),
        }


@dataclass(frozen=True)
class ProblemConfig:
    """Rods and interface masses.  Build with :func:`make_config`."""

    rods: tuple[Rod, ...]
    masses: tuple[float, ...]

    @property
    def n_interfaces(self) -> int:
        return len(self.masses)

    @property
    def length(self) -> float:
        return self.rods[-1].right

    @property
    def interfaces(self) -> tuple[float, ...]:
        return tuple(r.right for r in self.rods[:-1])

    def to_dict(self) -> dict:
        return {
            "masses": list(self.masses),
            "rods": [
                {
                    "interval": [r.left, r.right],
                    "rho": r.rho.to_dict(),
                    "sigma": r.sigma.to_dict(),
                    "q": r.q.to_dict(),
                }
                for r in self.rods
            ],
        }


def _as_descriptor(d) -> CoefficientDescriptor:
    if isinstance(d, CoefficientDescriptor):
        return d
    if isinstance(d, (int, float)):
        return CoefficientDescriptor.constant(d)
    if isinstance(d, dict):
        return CoefficientDescriptor(d["kind"], d["data"])
    raise TypeError(f"cannot interpret {d!r} as a coefficient")


def make_config(breakpoints: Sequence[float], masses: Sequence[float],
                rho, sigma, q) -> ProblemConfig:
    """Assemble a configuration from breakpoints ``0 = l_0 < ... < l_{N+1} = L``.

    ``rho``, ``sigma`` and ``q`` are either one coefficient shared by all rods
    or a sequence with one entry per rod.  Each entry may be a
    :class:`CoefficientDescriptor`, a number, or a ``{"kind", "data"}`` dict.
    Structural problems (ordering, counts) raise ``ValueError``; positivity is
    checked separately by :func:`validate`.
    """
    bp = [float(b) for b in breakpoints]
    n_rods = len(bp) - 1
    if n_rods < 1:
        raise ValueError("need at least one rod")
    if abs(bp[0]) > 0.0:
        raise ValueError("the first breakpoint must be 0")
    if any(b <= a for a, b in zip(bp, bp[1:])):
        raise ValueError("breakpoints must be strictly increasing")
    if len(masses) != n_rods - 1:
        raise ValueError(f"expected {n_rods - 1} masses, got {len(masses)}")

    def per_rod(c, name):
        if isinstance(c, (list, tuple)):
            if len(c) != n_rods:
                raise ValueError(f"{name}: expected {n_rods} entries, got {len(c)}")
            return [_as_descriptor(e) for e in c]
        return [_as_descriptor(c)] * n_rods

    rhos = per_rod(rho, "rho")
    sigmas = per_rod(sigma, "sigma")
    qs = per_rod(q, "q")
    rods = tuple(
        Rod(bp[j], bp[j + 1], rhos[j], sigmas[j], qs[j]) for j in range(n_rods)
    )
    return ProblemConfig(rods, tuple(float(m) for m in masses))


@dataclass
class ValidationReport:
    """Outcome of :func:`validate`.

    ``rho_min`` and ``sigma_min`` hold one sampled minimum per rod.
    """

    ok: bool
    violations: list[str] = field(default_factory=list)
    rho_min: list[float] = field(default_factory=list)
    sigma_min: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "violations": list(self.violations),
            "rho_min": list(self.rho_min),
            "sigma_min": list(self.sigma_min),
        }


def validate(config: ProblemConfig, samples: int = VALIDATION_SAMPLES) -> ValidationReport:
    """Check positivity of ``rho``, ``sigma``, ``M`` and non-negativity of ``q``.

    Sampled-grid coefficients are also checked at their own abscissae so a
    single negative sample is never missed.
    """
    rep = ValidationReport(ok=True)
    rods = config.rods
    if not rods:
        rep.violations.append("no rods")
    elif rods[0].left != 0.0:
        rep.violations.append(f"first rod starts at {rods[0].left} instead of 0")
    for j, rod in enumerate(rods):
        if not rod.left < rod.right:
            rep.violations.append(f"rod {j}: left {rod.left} is not below right {rod.right}")
    for j in range(len(rods) - 1):
        if abs(rods[j].right - rods[j + 1].left) > 1e-12:
            rep.violations.append(
                f"rods do not abut: rod {j} ends at {rods[j].right}, rod {j + 1} starts at {rods[j + 1].left}"
            )
    if len(config.masses) != max(len(rods) - 1, 0):
        rep.violations.append(f"expected {len(rods) - 1} masses, got {len(config.masses)}")
    if rep.violations:
        rep.ok = False
        return rep
    for j, rod in enumerate(rods):
        x = np.linspace(rod.left, rod.right, samples)
        mins = {}
        for name in ("rho", "sigma", "q"):
            desc = getattr(rod, name)
            pts = x
            if desc.kind == "sampled-grid":
                xs = np.asarray(desc.data[0])
                inside = xs[(xs >= rod.left) & (xs <= rod.right)]
                pts = np.union1d(x, inside)
                if desc.data[0][0] > rod.left + 1e-12 or desc.data[0][-1] < rod.right - 1e-12:
                    rep.violations.append(f"rod {j}: {name} samples do not span the rod")
            vals = rod.coef(name, pts)
            if not np.all(np.isfinite(vals)):
                rep.violations.append(f"rod {j}: {name} is not finite")
            i = int(np.argmin(vals))
            mins[name] = (float(vals[i]), float(pts[i]))
        rep.rho_min.append(mins["rho"][0])
        rep.sigma_min.append(mins["sigma"][0])
        for name, strict in (("rho", True), ("sigma", True), ("q", False)):
            v, at = mins[name]
            if (v <= 0.0) if strict else (v < 0.0):
                word = "nonpositive" if strict else "negative"
                rep.violations.append(f"rod {j}: {name} {word} at x={at:.6g} (value {v:.6g})")
    for j, m in enumerate(config.masses):
        if not (m > 0.0 and math.isfinite(m)):
            rep.violations.append(f"mass {j + 1}: M = {m!r} must be positive")
    rep.ok = not rep.violations
    return rep


@dataclass(frozen=True)
class StateVector:
    """An element of the energy space sampled on per-rod grids.

    Attributes
    ----------
    grids : tuple of ndarray
        Abscissae on each rod, including both endpoints.
    values : tuple of ndarray
        Function samples on each rod.
    z : ndarray
        Mass displacements, one per interface.
    """

    grids: tuple
    values: tuple
    z: np.ndarray

    def __post_init__(self):
        grids = tuple(np.array(g, dtype=float) for g in self.grids)
        values = tuple(np.array(v) for v in self.values)
        z = np.array(self.z)
        for a in (*grids, *values, z):
            a.setflags(write=False)
        if len(grids) != len(values):
            raise ValueError("one value array per rod grid is required")
        for g, v in zip(grids, values):
            if g.shape != v.shape:
                raise ValueError("grid and value shapes differ")
        object.__setattr__(self, "grids", grids)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "z", z)

    def scaled(self, c) -> "StateVector":
        return StateVector(self.grids, tuple(c * v for v in self.values), c * self.z)

    def __add__(self, other: "StateVector") -> "StateVector":
        _check_grids(self, other)
        return StateVector(
            self.grids, tuple(a + b for a, b in zip(self.values, other.values)), self.z + other.z
        )

    def __sub__(self, other: "StateVector") -> "StateVector":
        return self + other.scaled(-1.0)


def _check_grids(a: StateVector, b: StateVector) -> None:
    if len(a.grids) != len(b.grids) or a.z.shape != b.z.shape:
        raise ValueError("state vectors have different layouts")
    for ga, gb in zip(a.grids, b.grids):
        if ga.shape != gb.shape or not np.array_equal(ga, gb):
            raise ValueError("state vectors live on different grids")


def uniform_grids(config: ProblemConfig, cells: int) -> tuple:
    """Uniform grids with ``cells`` intervals per rod (``cells`` even)."""
    return tuple(np.linspace(r.left, r.right, cells + 1) for r in config.rods)


def zero_state(config: ProblemConfig, cells: int = 256) -> StateVector:
    grids = uniform_grids(config, cells)
    return StateVector(grids, tuple(np.zeros_like(g) for g in grids), np.zeros(config.n_interfaces))


def inner_product(config: ProblemConfig, a: StateVector, b: StateVector) -> complex | float:
    """Energy inner product ``<a, b>``, conjugating ``b`` for complex data.

    Rod integrals use composite Simpson on the shared grid.
    """
    _check_grids(a, b)
    if len(a.grids) != len(config.rods) or a.z.shape != (config.n_interfaces,):
        raise ValueError("state vector does not match the configuration")
    total = 0.0
    for rod, g, u, v in zip(config.rods, a.grids, a.values, b.values):
        total = total + simpson(u * np.conj(v) * rod.coef("rho", g), x=g)
    total = total + np.sum(np.asarray(config.masses) * a.z * np.conj(b.z))
    if np.iscomplexobj(total):
        return complex(total)
    return float(total)


def h_norm(config: ProblemConfig, a: StateVector) -> float:
    """Energy norm ``sqrt(<a, a>)``."""
    return math.sqrt(max(float(np.real(inner_product(config, a, a))), 0.0))


# --- configuration files -------------------------------------------------------

_RODS_HEADER = re.compile(r"^\s*\[\[\s*rods\s*\]\]")


def _rod_line(text: str, index: int) -> int | None:
    count = -1
    for lineno, line in enumerate(text.splitlines(), start=1):
        if _RODS_HEADER.match(line):
            count += 1
            if count == index:
                return lineno
    return None


def _key_line(text: str, key: str) -> int | None:
    pat = re.compile(rf"^\s*{re.escape(key)}\s*=")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if pat.match(line):
            return lineno
    return None


def config_from_dict(doc: dict, path: str | None = None, text: str = "") -> ProblemConfig:
    """Build a configuration from a parsed document.

    Expected layout::

        masses = [1.0]
        [[rods]]
        interval = [0.0, 0.5]
        rho = {kind = "constant", data = 1.0}
        sigma = 1.0
        q = {kind = "polynomial", data = [0.0, 0.5]}
    """
    rods = doc.get("rods")
    if not isinstance(rods, list) or not rods:
        raise ConfigError("missing [[rods]] tables", path, None)
    masses = doc.get("masses", [])
    if not isinstance(masses, list):
        raise ConfigError("masses must be an array", path, _key_line(text, "masses"))
    built = []
    for j, rod in enumerate(rods):
        line = _rod_line(text, j)
        try:
            a, b = (float(t) for t in rod["interval"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"rods[{j}]: interval must be [left, right]", path, line) from None
        coefs = {}
        for name in ("rho", "sigma", "q"):
            if name not in rod:
                if name == "q":
                    coefs[name] = CoefficientDescriptor.constant(0.0)
                    continue
                raise ConfigError(f"rods[{j}]: missing {name}", path, line)
            try:
                coefs[name] = _as_descriptor(rod[name])
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"rods[{j}].{name}: {exc}", path, line) from None
        built.append(Rod(a, b, coefs["rho"], coefs["sigma"], coefs["q"]))
    try:
        mass_values = tuple(float(m) for m in masses)
    except (TypeError, ValueError):
        raise ConfigError("masses must be numbers", path, _key_line(text, "masses")) from None
    # ordering, abutment and counts are reported by validate()
    return ProblemConfig(tuple(built), mass_values)


def load_config(path: str | Path) -> ProblemConfig:
    """Read a TOML configuration file; errors carry the path and line."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read file: {exc.strerror}", str(path)) from None
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        if line is None:
            m = re.search(r"line (\d+)", str(exc))
            line = int(m.group(1)) if m else None
        raise ConfigError(f"TOML syntax error: {exc}", str(path), line) from None
    return config_from_dict(doc, str(path), text)


def dump_config(config: ProblemConfig) -> str:
    """Serialise a configuration back to TOML text."""

    def fmt(v):
        if isinstance(v, dict):
            return "{" + ", ".join(f"{k} = {fmt(x)}" for k, x in v.items()) + "}"
        if isinstance(v, (list, tuple)):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        if isinstance(v, str):
            return f'"{v}"'
        return repr(float(v))

    d = config.to_dict()
    lines = [f"masses = {fmt(d['masses'])}", ""]
    for rod in d["rods"]:
        lines.append("[[rods]]")
        for key in ("interval", "rho", "sigma", "q"):
            lines.append(f"{key} = {fmt(rod[key])}")
        lines.append("")
    return "\n".join(lines)
