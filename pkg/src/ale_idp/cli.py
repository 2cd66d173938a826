"""Command-line driver: ``ale-idp run | converge | check``.

Exit codes: 0 on success, 2 when the solver fails hard (or the command line
or configuration is invalid), 3 when an invariant violation is detected.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_SOLVER = 2
EXIT_INVARIANT = 3

log = logging.getLogger("ale_idp")

# Config-file keys that map straight onto command-line options.
_SIMPLE_KEYS = {
    "problem": str,
    "level": int,
    "levels": str,
    "scheme": str,
    "integrator": str,
    "fem": str,
    "cfl": float,
    "viscosity": str,
    "out": str,
    "final_time": float,
    "dt_max": float,
    "max_halvings": int,
    "vtk_every": int,
    "seed": int,
    "jobs": int,
}


class ConfigError(ValueError):
    pass


def read_config(path) -> dict:
    """Parse a plain ``key = value`` file; ``#`` starts a comment."""
    cfg = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        cfg[key] = value
    return cfg


def _truthy(value: str) -> bool:
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def merge_config(args: argparse.Namespace, cfg: dict) -> argparse.Namespace:
    """Fill options the user did not pass on the command line from ``cfg``."""
    extra = {}
    for key, value in cfg.items():
        if key in _SIMPLE_KEYS:
            attr = key
            if getattr(args, attr, None) is None:
                try:
                    setattr(args, attr, _SIMPLE_KEYS[key](value))
                except ValueError as exc:
                    raise ConfigError(f"bad value for {key}: {value!r}") from exc
        elif key.startswith("ale.") or (key.startswith("bc.") and key.endswith(".motion")):
            extra[key] = value
        else:
            raise ConfigError(f"unknown configuration key {key!r}")
    args.ale_overrides = extra
    return args


def parse_levels(text: str):
    """``"0..3"`` -> [0, 1, 2, 3]; ``"1,3"`` -> [1, 3]."""
    text = str(text).strip()
    if ".." in text:
        a, b = text.split("..", 1)
        lo, hi = int(a), int(b)
        if hi < lo:
            raise ConfigError(f"empty level range {text!r}")
        return list(range(lo, hi + 1))
    return [int(v) for v in text.split(",") if v.strip()]


def _apply_threads():
    value = os.environ.get("ALE_IDP_THREADS")
    if not value:
        return None
    try:
        n = max(1, int(value))
    except ValueError:
        raise ConfigError(f"ALE_IDP_THREADS must be an integer, got {value!r}") from None
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        import numba

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # threading-layer probing is noisy
            numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except Exception:  # pragma: no cover - numba thread layer unavailable
        pass
    return n


def build_spec(args):
    """BenchmarkSpec from parsed options (flags already merged with the config)."""
    from dataclasses import replace

    from .benchmarks import get_benchmark

    scheme = args.scheme or "v1"
    if scheme not in ("v1", "v2"):
        raise ConfigError(f"--scheme must be v1 or v2, got {scheme!r}")
    version = int(scheme[1])
    integrator = args.integrator
    if integrator is None:
        integrator = "ssp3" if version == 1 else "euler"
    if integrator not in ("euler", "ssp3"):
        raise ConfigError(f"--integrator must be euler or ssp3, got {integrator!r}")
    if integrator == "ssp3" and version == 2:
        raise ConfigError("SSP-RK3 is only available with scheme v1")
    viscosity = None
    if args.viscosity is not None:
        viscosity = args.viscosity if isinstance(args.viscosity, bool) else _truthy(args.viscosity)
    if args.problem == "rotation":
        from .benchmarks import rotation

        spec = rotation(viscosity=viscosity is not False)
    else:
        if viscosity is False:
            raise ConfigError("--no-viscosity is only meaningful for the rotation problem")
        spec = get_benchmark(args.problem)
    spec = spec.with_options(version=version, integrator=integrator, cfl=args.cfl, T=args.final_time,
                             dt_max=getattr(args, "dt_max", None), max_halvings=getattr(args, "max_halvings", None))
    overrides = getattr(args, "ale_overrides", {}) or {}
    if overrides:
        base = spec.ale

        def ale_factory(base=base, overrides=overrides):
            strat = base()
            kw = {}
            boundary = dict(strat.boundary)
            for key, value in overrides.items():
                if key == "ale.mode":
                    kw["mode"] = value
                elif key == "ale.omega":
                    kw["omega"] = float(value)
                elif key == "ale.sweeps":
                    kw["sweeps"] = int(value)
                elif key.startswith("bc."):
                    boundary[key[3:-len(".motion")]] = value
                else:
                    raise ConfigError(f"unknown ALE key {key!r}")
            return replace(strat, boundary=boundary, **kw)

        ale_factory()  # validate eagerly
        spec = replace(spec, ale=ale_factory)
    return spec


# ---------------------------------------------------------------------------
# Sub-commands
# ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    from .benchmarks import convergence_table, run_benchmark
    from .io import format_table, state_fields, write_reports, write_table, write_vtk

    spec = build_spec(args)
    level = 0 if args.level is None else args.level
    out = Path(args.out or f"out/{spec.name}-L{level}")
    fem = args.fem or "q1"
    system = spec.system()
    every = args.vtk_every or 0

    def callback(state, report):
        if every and state.n % every == 0:
            write_vtk(out / f"field_{state.n:06d}.vtk", state.mesh, state_fields(system, state.U))

    log.info("running %s level %d (%s, v%d, %s, cfl=%g)", spec.name, level, fem, spec.version,
             spec.integrator, spec.cfl)
    res = run_benchmark(spec, level, fem, callback=callback if every else None)
    write_reports(out / "reports.csv", res.reports)
    write_vtk(out / "initial.vtk", res.initial.mesh, state_fields(system, res.initial.U))
    write_vtk(out / "final.vtk", res.state.mesh, state_fields(system, res.state.U))
    rows = convergence_table([res.dofs], [res.l1], [res.l2], [1.0])
    write_table(out / "errors.csv", rows)
    print(f"{spec.name}: {res.dofs} dofs, {len(res.reports)} steps, "
          f"{sum(r.reductions for r in res.reports)} dt reductions, {res.wall_time:.1f} s")
    if spec.exact is not None:
        print(format_table(rows))
    if spec.name == "kpp":
        u = res.state.U[:, 0]
        lo, hi = 0.25 * np.pi, 3.5 * np.pi
        print(f"u range [{u.min():.6f}, {u.max():.6f}] (admissible [{lo:.6f}, {hi:.6f}])")
        if u.min() < lo - 1e-12 or u.max() > hi + 1e-12:
            print("invariant violation: KPP solution left [pi/4, 7pi/2]", file=sys.stderr)
            return EXIT_INVARIANT
    print(f"output written to {out}")
    return EXIT_OK


def _study_level(args_tuple):
    spec, level, fem = args_tuple
    from .benchmarks import run_benchmark

    res = run_benchmark(spec, level, fem)
    return res.dofs, res.l1, res.l2, res.wall_time


def cmd_converge(args) -> int:
    from .benchmarks import convergence_table
    from .io import format_table, write_table

    spec = build_spec(args)
    if spec.exact is None:
        raise ConfigError(f"{spec.name} has no exact solution; use 'run' for field dumps")
    levels = parse_levels(args.levels) if args.levels else list(spec.levels)
    if len(levels) < 2:
        raise ConfigError("a convergence study needs at least two levels")
    fem = args.fem or "q1"
    jobs = max(1, int(args.jobs or 1))
    cap = getattr(args, "thread_cap", None)
    if cap:
        jobs = min(jobs, cap)
    work = [(spec, lev, fem) for lev in levels]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_study_level, work))
    else:
        results = []
        for item in work:
            results.append(_study_level(item))
            dofs, l1, l2, wall = results[-1]
            log.info("level %d: %d dofs, L1 %.3e, L2 %.3e (%.1f s)", item[1], dofs, l1, l2, wall)
    ratios = [spec.refinement ** (b - a) for a, b in zip([levels[0]] + levels[:-1], levels)]
    rows = convergence_table([r[0] for r in results], [r[1] for r in results], [r[2] for r in results], ratios)
    out = Path(args.out or f"out/{spec.name}-{fem}")
    path = write_table(out / "table.csv", rows)
    print(format_table(rows))
    print(f"table written to {path}")
    return EXIT_OK


def cmd_check(args) -> int:
    from .checks import run_checks

    names = args.suite or None
    results = run_checks(names, seed=args.seed or 0)
    for res in results:
        print(f"{res.line()} [{res.seconds:.1f} s]")
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVARIANT


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser):
    from .benchmarks import REGISTRY

    p.add_argument("--config", help="plain-text key = value file; command-line flags win")
    p.add_argument("--problem", choices=sorted(REGISTRY))
    p.add_argument("--scheme", choices=["v1", "v2"])
    p.add_argument("--integrator", choices=["euler", "ssp3"])
    p.add_argument("--fem", choices=["p1", "q1"])
    p.add_argument("--cfl", type=float)
    p.add_argument("--final-time", dest="final_time", type=float, help="override the final time")
    p.add_argument("--dt-max", dest="dt_max", type=float, help="upper bound of the time step")
    p.add_argument("--max-halvings", dest="max_halvings", type=int,
                   help="time-step halvings allowed before a hard failure (default 20)")
    p.add_argument("--no-viscosity", dest="viscosity", action="store_false", default=None,
                   help="set d_ij = 0 (rotation accuracy study only)")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ale-idp",
        description="Invariant-domain preserving ALE finite-element solver: benchmarks and checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one benchmark at one refinement level")
    _common(run)
    run.add_argument("--level", type=int)
    run.add_argument("--vtk-every", dest="vtk_every", type=int, help="write a VTK field every N steps")
    run.set_defaults(func=cmd_run)

    conv = sub.add_parser("converge", help="run a convergence study and write table.csv")
    _common(conv)
    conv.add_argument("--levels", help="level range such as 0..3 or a list such as 0,2,4")
    conv.add_argument("--jobs", type=int, help="levels run concurrently (capped by ALE_IDP_THREADS)")
    conv.set_defaults(func=cmd_converge)

    chk = sub.add_parser("check", help="run the randomized property suites")
    chk.add_argument("--suite", action="append", help="suite name (repeatable); default: all")
    chk.add_argument("--seed", type=int, default=0)
    chk.add_argument("-v", "--verbose", action="count", default=0)
    chk.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    from .errors import AleIdpError, InvariantViolation

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.thread_cap = _apply_threads()
        if getattr(args, "config", None):
            merge_config(args, read_config(args.config))
        else:
            args.ale_overrides = {}
        if args.command in ("run", "converge") and not args.problem:
            raise ConfigError("--problem is required (on the command line or in the config file)")
        return args.func(args)
    except InvariantViolation as exc:
        print(f"ale-idp: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except AleIdpError as exc:
        print(f"ale-idp: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, KeyError, ValueError, OSError) as exc:
        print(f"ale-idp: configuration error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
