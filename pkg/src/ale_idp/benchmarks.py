"""Benchmark problems, single runs and convergence studies."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional

import numpy as np

from . import exact
from .ale_motion import AleStrategy
from .exact import convergence_rates, error_norms
from .fem_mesh import Mesh, normalize_kind, rectangle_mesh, tensor_mesh
from .scheme import BoundaryCondition, Solver, SolverState, StepReport, initial_state
from .systems import System, make_burgers_2d, make_euler, make_kpp, make_transport


@dataclass
class BenchmarkSpec:
    """Everything needed to run one benchmark at any refinement level.

    ``mesh(level, kind)`` builds the initial mesh, ``initial(x)`` returns nodal
    conserved states, ``exact(x, t)`` returns the reference value of the
    error component (``None`` when no exact solution is known).
    """

    name: str
    system: Callable[[], System]
    mesh: Callable[[int, str], Mesh]
    initial: Callable
    T: float
    cfl: float
    ale: Callable[[], AleStrategy]
    bc: Callable[[], Dict[str, BoundaryCondition]] = dict
    exact: Optional[Callable] = None
    version: int = 1
    integrator: str = "ssp3"
    viscosity: bool = True
    speeds: str = "shifted"
    dt_rule: str = "courant"
    freeze_dt: bool = False
    check_bounds: bool = True
    levels: tuple = (0, 1, 2, 3)
    refinement: float = 2.0
    dt_max: float = float("inf")
    max_halvings: int = 20

    def with_options(self, **kw) -> "BenchmarkSpec":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


# ---------------------------------------------------------------------------
# Individual problems
# ---------------------------------------------------------------------------


def _rotation_mesh(level, kind):
    n = 8 * 2**level  # 81, 289, 1089, ... dofs
    return rectangle_mesh(n, n, (0.0, 1.0, 0.0, 1.0), kind)


def rotation(viscosity: bool = False) -> BenchmarkSpec:
    return BenchmarkSpec(
        name="rotation",
        system=lambda: make_transport(exact.rotation_beta),
        mesh=_rotation_mesh,
        initial=lambda x: exact.rotation_u0(x)[:, None],
        T=0.5,
        cfl=1.0,
        ale=lambda: AleStrategy("analytic", beta=exact.rotation_beta),
        exact=lambda x, t: exact.exact_rotation(x, t),
        viscosity=viscosity,
        # Lagrangian motion makes the shifted speeds O(h); the time step is
        # driven by the transport speed itself and frozen at its t = 0 value
        # (the swirl amplitude cos(2 pi t) only decreases on [0, 1/4]).
        speeds="eulerian",
        freeze_dt=True,
        # The nodal velocity field is not exactly divergence free, so local
        # extrema are not invariant for this flux.
        check_bounds=False,
        levels=(0, 1, 2, 3, 4),
    )


def _burgers_mesh(level, kind):
    n = 8 * 2**level
    return rectangle_mesh(n, n, (-0.25, 1.75, -0.25, 1.75), kind)


def _unit_square_indicator(x):
    x = np.atleast_2d(x)
    return ((x[:, 0] > 0) & (x[:, 0] < 1) & (x[:, 1] > 0) & (x[:, 1] < 1)).astype(float)


def burgers2d() -> BenchmarkSpec:
    return BenchmarkSpec(
        name="burgers2d",
        system=make_burgers_2d,
        mesh=_burgers_mesh,
        initial=lambda x: _unit_square_indicator(x)[:, None],
        T=1.0,
        cfl=0.1,
        ale=lambda: AleStrategy(
            "smoothed_lagrangian",
            omega=0.9,
            sweeps=2,
            boundary={tag: "fixed" for tag in ("left", "right", "bottom", "top")},
        ),
        exact=exact.exact_burgers,
        levels=(0, 1, 2, 3, 4),
    )


def _kpp_mesh(level, kind):
    n = 32 * 2**level  # level 2 is the 128 x 128 grid
    return rectangle_mesh(n, n, (-2.5, 1.5, -2.0, 2.5), kind)


def kpp() -> BenchmarkSpec:
    return BenchmarkSpec(
        name="kpp",
        system=make_kpp,
        mesh=_kpp_mesh,
        initial=lambda x: (3.25 * np.pi * (np.linalg.norm(x, axis=1) < 1.0) + 0.25 * np.pi)[:, None],
        T=1.0,
        cfl=0.1,
        # The boundary carries the background state u = pi/4 whose Lagrangian
        # velocity is constant, so the domain translates and stays a rectangle.
        ale=lambda: AleStrategy("smoothed_lagrangian", omega=0.9, sweeps=2),
        exact=None,
        levels=(0, 1, 2),
    )


SOD_GAMMA = 1.4


def _sod_mesh(level, kind):
    nx = 320 * 2**level  # 1605, 3205, 6405, 12805 dofs
    return rectangle_mesh(nx, 4, (0.0, 1.0, 0.0, 1.0), kind)


def _sod_primitive(x):
    x = np.atleast_2d(x)
    left = x[:, 0] <= 0.5  # dofs on the interface take the left state
    rho = np.where(left, 1.0, 0.125)
    p = np.where(left, 1.0, 0.1)
    return rho, np.zeros((x.shape[0], 2)), p


def _sod_initial(x):
    return make_euler(SOD_GAMMA).conserved(*_sod_primitive(x))


def sod() -> BenchmarkSpec:
    dirichlet = BoundaryCondition("dirichlet", lambda x, t: _sod_initial(x))
    return BenchmarkSpec(
        name="sod",
        system=lambda: make_euler(SOD_GAMMA),
        mesh=_sod_mesh,
        initial=_sod_initial,
        T=0.2,
        cfl=0.1,
        ale=lambda: AleStrategy(
            "smoothed_lagrangian",
            omega=0.9,
            sweeps=2,
            boundary={"left": "fixed", "right": "fixed", "bottom": "slide-x", "top": "slide-x"},
        ),
        bc=lambda: {
            "left": dirichlet,
            "right": dirichlet,
            "bottom": BoundaryCondition("do-nothing"),
            "top": BoundaryCondition("do-nothing"),
        },
        exact=lambda x, t: exact.exact_sod(np.atleast_2d(x)[:, 0], t, SOD_GAMMA)[0],
        levels=(0, 1, 2, 3),
    )


NOH_GAMMA = exact.NOH_GAMMA


def _noh_mesh(level, kind):
    n = 30 * 2**level  # 961, 3721, 14641 dofs
    return rectangle_mesh(n, n, (-1.0, 1.0, -1.0, 1.0), kind)


def noh_nonuniform_mesh(kind="q1") -> Mesh:
    """Four-quadrant mesh: 32x32, 32x64, 64x64 and 64x32 cells on (-1, 1)^2."""
    xs = np.concatenate([np.linspace(-1.0, 0.0, 33), np.linspace(0.0, 1.0, 65)[1:]])
    return tensor_mesh(xs, xs, kind)


def _radial_inward(x):
    x = np.atleast_2d(x)
    r = np.linalg.norm(x, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(r[:, None] > 0, -x / r[:, None], 0.0)


def _noh_state(x, t):
    rho, vel, p = exact.exact_noh(x, t, NOH_GAMMA, exact.NOH_P0)
    p = np.maximum(p, exact.NOH_P0)
    return make_euler(NOH_GAMMA).conserved(rho, vel, p)


def noh() -> BenchmarkSpec:
    return BenchmarkSpec(
        name="noh",
        system=lambda: make_euler(NOH_GAMMA),
        mesh=_noh_mesh,
        initial=lambda x: _noh_state(x, 0.0),
        T=0.6,
        cfl=0.2,
        ale=lambda: AleStrategy(
            "smoothed_lagrangian",
            omega=0.9,
            sweeps=2,
            boundary={tag: "prescribed" for tag in ("left", "right", "bottom", "top")},
            prescribed=lambda x, t: _radial_inward(x),
        ),
        bc=lambda: {
            tag: BoundaryCondition("dirichlet", _noh_state) for tag in ("left", "right", "bottom", "top")
        },
        exact=lambda x, t: exact.exact_noh_density(x, t),
        levels=(0, 1, 2),
    )


REGISTRY: Dict[str, Callable[[], BenchmarkSpec]] = {
    "rotation": rotation,
    "burgers2d": burgers2d,
    "kpp": kpp,
    "sod": sod,
    "noh": noh,
}


def get_benchmark(name: str, **options) -> BenchmarkSpec:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; choose from {sorted(REGISTRY)}") from None
    return factory().with_options(**options)


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


@dataclass
class ConvergenceRow:
    dofs: int
    l1: float
    l1_rate: float
    l2: float
    l2_rate: float


@dataclass
class BenchmarkResult:
    spec: BenchmarkSpec
    level: int
    kind: str
    initial: SolverState
    state: SolverState
    reports: List[StepReport]
    l1: float = float("nan")
    l2: float = float("nan")
    wall_time: float = 0.0

    @property
    def dofs(self) -> int:
        return self.state.mesh.n_dofs


def make_solver(spec: BenchmarkSpec, system: System) -> Solver:
    return Solver(
        system,
        spec.ale(),
        bc=spec.bc(),
        version=spec.version,
        integrator=spec.integrator,
        cfl=spec.cfl,
        viscosity=spec.viscosity,
        speeds=spec.speeds,
        dt_rule=spec.dt_rule,
        check_bounds=spec.check_bounds,
        dt_max=spec.dt_max,
        max_halvings=spec.max_halvings,
    )


def run_benchmark(spec: BenchmarkSpec, level: int, kind: str = "q1", mesh: Optional[Mesh] = None,
                  callback: Optional[Callable] = None) -> BenchmarkResult:
    """Build the level-``level`` mesh, interpolate the data and integrate to T."""
    kind = normalize_kind(kind, dim=2)
    mesh = mesh if mesh is not None else spec.mesh(level, kind)
    system = spec.system()
    U0 = np.asarray(spec.initial(mesh.dof_points), dtype=float)
    state0 = initial_state(mesh, U0)
    solver = make_solver(spec, system)
    if spec.freeze_dt:
        solver.dt_max = min(solver.dt_max, solver.estimate_dt(state0))
    start = time.perf_counter()
    state, reports = solver.run(state0, spec.T, callback=callback)
    wall = time.perf_counter() - start
    result = BenchmarkResult(spec, level, kind, state0, state, reports, wall_time=wall)
    if spec.exact is not None:
        result.l1, result.l2 = error_norms(state.mesh, state.U, lambda x: spec.exact(x, spec.T))
    return result


def convergence_study(spec: BenchmarkSpec, levels, kind: str = "q1", csv_path=None,
                      progress: Optional[Callable] = None):
    """Run every level and return (rows, results); optionally write the table CSV."""
    levels = list(levels)
    if len(levels) < 2:
        raise ValueError("a convergence study needs at least two levels")
    if spec.exact is None:
        raise ValueError(f"{spec.name} has no exact solution to measure errors against")
    results = []
    for lev in levels:
        res = run_benchmark(spec, lev, kind)
        results.append(res)
        if progress is not None:
            progress(res)
    rows = convergence_table(
        [r.dofs for r in results], [r.l1 for r in results], [r.l2 for r in results],
        ratios=[spec.refinement ** (b - a) for a, b in zip([levels[0]] + levels[:-1], levels)],
    )
    if csv_path is not None:
        from .io import write_table

        write_table(csv_path, rows)
    return rows, results


def convergence_table(dofs, l1, l2, ratios) -> List[ConvergenceRow]:
    """Rates from consecutive errors; ``ratios`` are mesh-size ratios per level."""
    r1 = convergence_rates(l1, ratios)
    r2 = convergence_rates(l2, ratios)
    return [ConvergenceRow(int(n), float(a), float(ra), float(b), float(rb))
            for n, a, ra, b, rb in zip(dofs, l1, r1, l2, r2)]
