"""Ready-made configurations used by the tests, benchmarks and CLI."""
from __future__ import annotations

import numpy as np

from .model import CoefficientDescriptor, ProblemConfig, make_config


def unit_instance(l1: float = 0.5, mass: float = 1.0) -> ProblemConfig:
    """Two unit rods on ``[0, 1]`` with ``rho = sigma = 1``, ``q = 0``."""
    one = CoefficientDescriptor.constant(1.0)
    zero = CoefficientDescriptor.constant(0.0)
    return make_config([0.0, l1, 1.0], [mass], one, one, zero)


def constant_instance(breakpoints, masses, rho=1.0, sigma=1.0, q=0.0) -> ProblemConfig:
    """Piecewise-constant coefficients (one value or one per rod)."""
    return make_config(breakpoints, masses, rho, sigma, q)


def polynomial_instance(seed: int, n_masses: int | None = None) -> ProblemConfig:
    """Seeded instance with polynomial coefficients on ``[0, 1]``.

    ``rho`` and ``sigma`` are quadratics in the local coordinate with values
    in roughly ``[0.6, 1.8]``; ``q`` is a non-negative linear function.  The
    number of masses defaults to ``1 + seed % 3``.  Rods are at least 0.15
    long and masses lie in ``[0.5, 2]``.
    """
    rng = np.random.default_rng(seed)
    n = 1 + seed % 3 if n_masses is None else n_masses
    while True:
        inner = np.sort(rng.uniform(0.1, 0.9, size=n))
        bp = np.concatenate([[0.0], inner, [1.0]])
        if np.min(np.diff(bp)) >= 0.15:
            break
    masses = rng.uniform(0.5, 2.0, size=n)
    rhos, sigmas, qs = [], [], []
    for j in range(n + 1):
        h = bp[j + 1] - bp[j]
        for store in (rhos, sigmas):
            c0 = rng.uniform(0.8, 1.4)
            # quadratic through c0 with bounded variation over the rod
            a, b = rng.uniform(-0.3, 0.4, size=2)
            store.append(CoefficientDescriptor.polynomial([c0, a / h, b / h**2]))
        qs.append(CoefficientDescriptor.polynomial([rng.uniform(0.0, 2.0), rng.uniform(0.0, 1.0) / h]))
    return make_config(bp, masses, rhos, sigmas, qs)


def acceptance_instances() -> list[ProblemConfig]:
    """The five seeded polynomial instances (one to three masses)."""
    return [polynomial_instance(seed) for seed in range(5)]
