"""Command line front end: ``rodchain <subcommand> [options]``.

Exit codes: 0 success, 2 invalid configuration, 3 solver failure,
4 biorthogonal refusal, 5 excluded mass position, 64 usage error.
The number of worker threads for eigenfunction sampling is read from
``RODCHAIN_THREADS`` (default 1).
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import asymptotics, control, heat, schrodinger
from .instances import polynomial_instance, unit_instance
from .model import ConfigError, ProblemConfig, load_config, validate
from .shooting import DEFAULT_RTOL, SolverError
from .spectrum import eigenfunction, eigenvalues, write_spectrum_csv, write_spectrum_json

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_SOLVER = 3
EXIT_REFUSED = 4
EXIT_EXCLUDED = 5
EXIT_USAGE = 64

THREADS_ENV = "RODCHAIN_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunManifest:
    """Everything a subcommand needs, resolved from the command line."""

    subcommand: str
    config: str | None
    out: str
    seed: int | None
    count: int
    modes: int
    T: float
    dt: float
    cells: int
    tolerance: float
    threads: int = 1
    options: dict = field(default_factory=dict)

    def write(self) -> None:
        with open(Path(self.out) / "manifest.json", "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0.0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _load(m: RunManifest) -> ProblemConfig:
    if m.config:
        return load_config(m.config)
    if m.seed is not None:
        return polynomial_instance(m.seed)
    return unit_instance()


def _check(config: ProblemConfig) -> None:
    rep = validate(config)
    if not rep.ok:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(rep.violations))


def _pairs(config: ProblemConfig, lams, grid, rtol: float, threads: int, start: int = 1):
    def one(item):
        i, lam = item
        return eigenfunction(config, lam, grid, rtol, index=i)

    items = list(enumerate(lams, start=start))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, items))
    return [one(it) for it in items]


def _dump(obj, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)


# --- subcommands -----------------------------------------------------------------


def cmd_spectrum(m: RunManifest) -> int:
    config = _load(m)
    _check(config)
    lams = eigenvalues(config, m.count, m.tolerance)
    grid = [np.linspace(r.left, r.right, m.cells + 1) for r in config.rods]
    pairs = _pairs(config, lams, grid, m.tolerance, m.threads)
    tags = asymptotics.branch_classify(lams, asymptotics.asymptotic_data(config)).tags()
    out = Path(m.out)
    write_spectrum_csv(pairs, out / "spectrum.csv", tags)
    write_spectrum_json(pairs, out / "spectrum.json")
    print(f"wrote {len(pairs)} eigenpairs to {out}")
    return EXIT_OK


def cmd_validate(m: RunManifest) -> int:
    config = _load(m)
    _check(config)
    if m.count < 40:
        raise UsageError("validate needs --count of at least 40")
    lams = eigenvalues(config, m.count, m.tolerance)
    data = asymptotics.asymptotic_data(config)
    weyl = asymptotics.weyl_check(lams, data)
    formula = m.options["formula"]
    branch = asymptotics.branch_classify(lams, data, formula)
    gap = asymptotics.gap_check(lams, data)
    tail = range(3 * m.count // 4, m.count)
    pairs = _pairs(config, [lams[i] for i in tail], None, m.tolerance, m.threads, start=tail.start + 1)
    t = asymptotics.norm_equivalence_check(pairs, data)
    ratios = np.full(m.count, np.nan)
    ratios[list(tail)] = [p.norm_ratio for p in pairs]

    sc = branch.scaled_residuals()
    lo, hi = m.count // 10, m.count // 2
    med = float(np.median(sc[lo - 1:hi]))
    sup = float(np.max(sc[hi - 1:]))
    checks = {
        "weyl": {"value": weyl.tail_deviation, "tolerance": m.options["weyl_tol"],
                 "passed": weyl.tail_deviation <= m.options["weyl_tol"]},
        "branch": {"sup": sup, "median": med, "factor": m.options["branch_factor"],
                   "passed": sup <= m.options["branch_factor"] * med},
        "gap": {"min_gap": gap.empirical_inf, "bound": gap.bound, "slack": m.options["gap_slack"],
                "passed": gap.empirical_inf >= m.options["gap_slack"] * gap.bound},
        "norm_equivalence": {"max_deviation": float(np.max(np.abs(t - 1.0))),
                             "tolerance": m.options["norm_tol"],
                             "passed": bool(np.max(np.abs(t - 1.0)) <= m.options["norm_tol"])},
    }
    for c in checks.values():
        c["passed"] = bool(c["passed"])
    out = Path(m.out)
    asymptotics.write_branch_csv(branch, out / "branches.csv", ratios)
    _dump({"formula": formula, "count": m.count, "checks": checks,
           "all_passed": all(c["passed"] for c in checks.values())}, out / "validate.json")
    for name, c in checks.items():
        print(f"{name}: {'pass' if c['passed'] else 'FAIL'}")
    return EXIT_OK


def cmd_control(m: RunManifest) -> int:
    config = _load(m)
    _check(config)
    n_tr = m.modes
    k0 = m.options["initial_modes"]
    extra = m.options["tail_modes"]
    count = max(n_tr, k0) + extra
    op = heat.assemble(config, m.cells)
    lams = eigenvalues(config, count, m.tolerance)
    pairs = _pairs(config, lams, list(op.grids), m.tolerance, m.threads)
    coeffs = [(-1) ** n / (n + 1) for n in range(k0)]
    U0 = control.mode_mixture(pairs, coeffs)
    plan = control.synthesize_control(config, U0, pairs, m.T, n_tr,
                                      weight_power=m.options["weight_power"])
    every = max(1, int(round(m.options["snapshot_time"] / m.dt)))
    rep = heat.simulate(U0, plan, op, dt=m.dt, pairs=pairs[:n_tr], snapshot_every=every)
    out = Path(m.out)
    control.write_control_csv(plan, out / "control.csv")
    control.write_plan_json(plan, out / "plan.json")
    heat.write_report_json(rep, out / "terminal.json")
    heat.write_snapshots_csv(op, rep.snapshots, out / "snapshots.csv")
    print(f"terminal/initial = {rep.terminal_norm / rep.initial_norm:.3e}, "
          f"terminal/free = {rep.terminal_norm / rep.free_norm:.3e}")
    return EXIT_OK


def cmd_schrodinger(m: RunManifest) -> int:
    l1 = m.options["l1"]
    rep = schrodinger.run_suite(l1, m.count, m.T, m.options["trials"], m.seed or 0)
    out = Path(m.out)
    schrodinger.write_report_json(rep, out / "schrodinger.json")
    if rep.refusal is not None:
        print(rep.refusal, file=sys.stderr)
        if m.options["require_equivalence"]:
            return EXIT_EXCLUDED
    lo, hi = rep.observability
    print(f"l1={l1}: observability ratio in [{lo:.4g}, {hi:.4g}]")
    return EXIT_OK


COMMANDS = {
    "spectrum": cmd_spectrum,
    "validate": cmd_validate,
    "control": cmd_control,
    "schrodinger": cmd_schrodinger,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rodchain", description="Rod chains with point masses: spectra, "
                "asymptotic checks, null control and the Schrodinger variant.")
    sub = p.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    def common(sp, count, cells=64):
        sp.add_argument("--config", help="TOML configuration (default: unit instance, or --seed)")
        sp.add_argument("--seed", type=int, default=None, help="seeded polynomial instance")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--count", type=_positive_int, default=count)
        sp.add_argument("--cells", type=_positive_int, default=cells, help="cells per rod")
        sp.add_argument("--tolerance", type=_positive_float, default=DEFAULT_RTOL,
                        help="relative tolerance of the shooting integrator")

    sp = sub.add_parser("spectrum", help="eigenvalues and eigenfunctions")
    common(sp, 50)

    sp = sub.add_parser("validate", help="Weyl, branch, gap and norm checks")
    common(sp, 100)
    sp.add_argument("--formula", choices=asymptotics.FORMULAS, default="published")
    sp.add_argument("--weyl-tol", type=_positive_float, default=0.02)
    sp.add_argument("--branch-factor", type=_positive_float, default=10.0)
    sp.add_argument("--gap-slack", type=_positive_float, default=0.8)
    sp.add_argument("--norm-tol", type=_positive_float, default=0.1)

    sp = sub.add_parser("control", help="synthesise a null control and simulate it")
    common(sp, 1, cells=256)
    sp.add_argument("--modes", type=_positive_int, default=control.DEFAULT_NTR,
                    help="number of controlled modes N_tr")
    sp.add_argument("--T", type=_positive_float, default=1.0)
    sp.add_argument("--dt", type=_positive_float, default=1e-3)
    sp.add_argument("--initial-modes", type=_positive_int, default=8)
    sp.add_argument("--tail-modes", type=int, default=8)
    sp.add_argument("--weight-power", type=float, default=2.0)
    sp.add_argument("--snapshot-time", type=_positive_float, default=0.05)

    sp = sub.add_parser("schrodinger", help="single-mass Schrodinger suite")
    sp.add_argument("--out", default=".")
    sp.add_argument("--l1", type=float, default=1.0 / math.sqrt(2.0))
    sp.add_argument("--count", type=_positive_int, default=60)
    sp.add_argument("--T", type=_positive_float, default=1.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--trials", type=_positive_int, default=20)
    sp.add_argument("--require-equivalence", action="store_true",
                    help="exit 5 when l1 is excluded")
    return p


def _manifest(args) -> RunManifest:
    opts = {}
    for key in ("formula", "weyl_tol", "branch_factor", "gap_slack", "norm_tol", "initial_modes",
                "tail_modes", "weight_power", "snapshot_time", "l1", "trials", "require_equivalence"):
        if hasattr(args, key):
            opts[key] = getattr(args, key)
    return RunManifest(
        subcommand=args.subcommand,
        config=getattr(args, "config", None),
        out=args.out,
        seed=getattr(args, "seed", None),
        count=args.count,
        modes=getattr(args, "modes", 0),
        T=getattr(args, "T", 1.0),
        dt=getattr(args, "dt", 0.0),
        cells=getattr(args, "cells", 0),
        tolerance=getattr(args, "tolerance", DEFAULT_RTOL),
        threads=_threads(),
        options=opts,
    )


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    m = _manifest(args)
    if "l1" in m.options and not 0.0 < m.options["l1"] < 1.0:
        parser.error("--l1 must lie in (0, 1)")
    if args.subcommand == "control":
        n = round(m.T / m.dt)
        if abs(n * m.dt - m.T) > 1e-9 * m.T:
            parser.error("--T must be an integer multiple of --dt")
        if m.cells < heat.MIN_CELLS or m.cells % 2:
            parser.error(f"--cells must be even and at least {heat.MIN_CELLS}")
    try:
        Path(m.out).mkdir(parents=True, exist_ok=True)
        m.write()
    except OSError as exc:
        print(f"rodchain: cannot write to {m.out}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[m.subcommand](m)
    except ConfigError as exc:
        print(f"rodchain: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except UsageError as exc:
        print(f"rodchain: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except control.BiorthogonalRefusal as exc:
        print(f"rodchain: biorthogonal family refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except SolverError as exc:
        print(f"rodchain: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except FileNotFoundError as exc:
        print(f"rodchain: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
