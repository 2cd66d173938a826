"""Graph-viscosity ALE time stepping.

Version 1 evolves approximate masses with the discrete identity
``mass^{n+1} = mass^n + dt * sum_j W_j . c_ij``; version 2 uses the exact
masses of the moved mesh together with time-averaged stencil vectors.
Both updates read

    mass^{n+1} U^{n+1} = mass^n U^n - dt * sum_j [(f(U_j) - U_j W_j) . c_ij - d_ij U_j]

and every accepted step is a convex combination of the current states and
of the bar states of the local Riemann problems.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional

import numpy as np

from . import _kernels
from .ale_motion import AleStrategy, check_invertibility, node_velocities
from .errors import (
    AssemblyError,
    InvariantViolation,
    MeshInvalidError,
    NumericalError,
    PeriodicPairingError,
    SolverError,
    StepRejected,
)
from .fem_mesh import (
    Mesh,
    StencilField,
    assemble_stencil,
    exact_masses,
    temporal_stencil,
    validate_mesh,
)
from .systems import System

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("n", "t", "dt", "reductions", "min_convexity", "conservation_defect", "entropy_max")


@dataclass
class SolverState:
    """Mesh, nodal conserved states and masses at one time level."""

    mesh: Mesh
    U: np.ndarray
    mass: np.ndarray
    t: float = 0.0
    n: int = 0

    @property
    def totals(self) -> np.ndarray:
        return self.mass @ self.U


def initial_state(mesh: Mesh, U0) -> SolverState:
    U0 = np.asarray(U0, dtype=float)
    if U0.ndim == 1:
        U0 = U0[:, None]
    return SolverState(mesh, U0.copy(), exact_masses(mesh), t=mesh.t, n=0)


@dataclass
class StepReport:
    n: int
    t: float
    dt: float
    reductions: int = 0
    min_convexity: float = 1.0
    rowsum_defect: float = 0.0
    total_before: Optional[np.ndarray] = None
    total_after: Optional[np.ndarray] = None
    entropy_max: float = float("nan")
    extra: dict = field(default_factory=dict, repr=False)

    @property
    def conservation_defect(self) -> float:
        if self.total_before is None or self.total_after is None:
            return float("nan")
        scale = max(float(np.abs(self.total_before).max()), 1e-300)
        return float(np.abs(self.total_after - self.total_before).max() / scale)

    def row(self) -> tuple:
        return (
            self.n,
            self.t,
            self.dt,
            self.reductions,
            self.min_convexity,
            self.conservation_defect,
            self.entropy_max,
        )


# ---------------------------------------------------------------------------
# Boundary conditions
# ---------------------------------------------------------------------------


@dataclass
class BoundaryCondition:
    """``kind`` is ``dirichlet`` (``value(x, t) -> U rows``), ``do-nothing`` or ``periodic``."""

    kind: str
    value: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in ("dirichlet", "do-nothing", "periodic"):
            raise ValueError(f"unknown boundary condition {self.kind!r}")
        if self.kind == "dirichlet" and self.value is None:
            raise ValueError("dirichlet condition needs a value function")


def dirichlet_dofs(mesh: Mesh, bc_table: Optional[Dict[str, BoundaryCondition]]) -> np.ndarray:
    mask = np.zeros(mesh.n_dofs, dtype=bool)
    for tag, bc in (bc_table or {}).items():
        if bc.kind == "dirichlet" and tag in mesh.boundary:
            mask[mesh.boundary[tag]] = True
    return mask


def apply_bc(state: SolverState, bc_table: Optional[Dict[str, BoundaryCondition]], t=None) -> SolverState:
    """Overwrite Dirichlet dofs with the prescribed values at their current position."""
    if not bc_table:
        return state
    t = state.t if t is None else t
    U = state.U
    x = None
    for tag, bc in bc_table.items():
        if bc.kind == "periodic":
            if tag in state.mesh.boundary:
                raise PeriodicPairingError(f"boundary {tag!r} is declared periodic but the mesh is not")
            continue
        if bc.kind != "dirichlet":
            continue
        dofs = state.mesh.boundary.get(tag)
        if dofs is None or dofs.size == 0:
            continue
        if x is None:
            x = state.mesh.dof_points
            U = U.copy()
        U[dofs] = np.asarray(bc.value(x[dofs], t), dtype=float).reshape(dofs.size, -1)
    return replace(state, U=U) if U is not state.U else state


# ---------------------------------------------------------------------------
# Graph viscosity
# ---------------------------------------------------------------------------


@dataclass
class Viscosity:
    """Per-pair d_ij (diagonal included) and the fan speeds behind them."""

    d: np.ndarray
    lam_shifted: np.ndarray
    lam_eulerian: np.ndarray

    def lambda_i(self, topology, which: str = "shifted") -> np.ndarray:
        """max over j in I(S_i) of the speeds of both orientations."""
        lam = _speeds_of(self, which)
        both = np.maximum(lam, lam[topology.transpose])
        return np.maximum.reduceat(both, topology.indptr[:-1])


def compute_dij(stencil: StencilField, U, W, system: System, x=None, t: float = 0.0) -> Viscosity:
    """Graph viscosity from the shifted Riemann fan speeds of every pair."""
    top = stencil.topology
    U = np.asarray(U, dtype=float)
    W = np.asarray(W, dtype=float)
    rows, cols, T = top.rows, top.cols, top.transpose
    c, norm = stencil.c, stencil.norm
    e = top.primary_idx
    lamL_p, lamR_p = system.pair_speeds(U, rows, cols, e, c, norm, x, t)
    d, lam_s, lam_e, n_bad = _kernels.pair_viscosity(
        rows, cols, T, e, top.mirror_idx, top.indptr, c, norm,
        np.ascontiguousarray(W), np.ascontiguousarray(lamL_p, dtype=float), np.ascontiguousarray(lamR_p, dtype=float),
    )
    if n_bad:
        raise NumericalError(f"non-finite wave speed for {n_bad} pairs")
    return Viscosity(d, lam_s, lam_e)


def zero_viscosity(stencil: StencilField) -> Viscosity:
    z = np.zeros(stencil.topology.nnz)
    return Viscosity(z, z.copy(), z.copy())


def _speeds_of(visc: Viscosity, which: str) -> np.ndarray:
    if which == "shifted":
        return visc.lam_shifted
    if which == "eulerian":
        return visc.lam_eulerian
    if which == "max":
        return np.maximum(visc.lam_shifted, visc.lam_eulerian)
    raise ValueError(f"unknown speed mode {which!r}")


def estimate_dt(stencil: StencilField, visc: Viscosity, cfl: float, dt_max: float = math.inf,
                speeds: str = "shifted", rule: str = "local") -> float:
    """Time step from the CFL condition, capped at ``dt_max``.

    ``rule="local"`` returns ``cfl * min_i h_min_i / (2 lambda_i kappa_i)``.
    ``rule="graph"`` returns ``cfl * min_i m_i / (2 sum_{j != i} d_ij)``, the
    convexity bound of the update with the masses frozen at t^n; with
    ``speeds="shifted"`` the d_ij are exactly those of the step.
    ``rule="courant"`` drops the factor 2; on a uniform Q1 grid with a
    constant velocity it is the classical Courant number ``|beta| dt / h``.
    """
    if not 0.0 < cfl:
        raise ValueError("cfl must be positive")
    top = stencil.topology
    if rule == "local":
        lam = visc.lambda_i(top, speeds)
        active = lam > 0
        if not active.any():
            return float(dt_max)
        bound = stencil.h_min[active] / (2.0 * lam[active] * stencil.kappa[active])
    elif rule in ("graph", "courant"):
        A = _speeds_of(visc, speeds) * stencil.norm
        d = np.where(top.offdiag, np.maximum(A, A[top.transpose]), 0.0)
        row = np.add.reduceat(d, top.indptr[:-1])
        active = row > 0
        if not active.any():
            return float(dt_max)
        factor = 2.0 if rule == "graph" else 1.0
        with np.errstate(over="ignore"):  # near-zero rows give harmless infinite bounds
            bound = stencil.mass[active] / (factor * row[active])
    else:
        raise ValueError(f"unknown time-step rule {rule!r}")
    return float(min(cfl * bound.min(), dt_max))


# ---------------------------------------------------------------------------
# Single forward-Euler steps
# ---------------------------------------------------------------------------


@dataclass
class StepData:
    """Everything a step used; kept for certificates and diagnostics."""

    stencil: StencilField
    visc: Viscosity
    W: np.ndarray
    x: np.ndarray
    t: float
    dt: float
    U_old: np.ndarray
    mass_old: np.ndarray
    mass_new: np.ndarray
    U_new: np.ndarray


def _shifted_flux(system, U, W, x, t):
    F = system.flux(U, x, t)
    return F - U[:, :, None] * W[:, None, :]


def _local_bounds(top, U):
    Uc = U[top.cols, 0]
    return np.minimum.reduceat(Uc, top.indptr[:-1]), np.maximum.reduceat(Uc, top.indptr[:-1])


def _finish_update(state, mesh_new, stencil, visc, W, dt, mass_new, system, x, t_flux,
                   check_bounds, skip):
    U = state.U
    top = stencil.topology
    G = _shifted_flux(system, U, W, x, t_flux)
    rhs = state.mass[:, None] * U - dt * (stencil.apply(G) - top.csr(visc.d) @ U)
    U_new = rhs / mass_new[:, None]
    if not np.all(np.isfinite(U_new)):
        raise NumericalError("non-finite state after update")
    convexity = 1.0 + 2.0 * dt * visc.d[top.diag] / mass_new
    min_conv = float(convexity.min())
    if min_conv < 0.0:
        raise StepRejected("convexity", f"min coefficient {min_conv:.3e}")
    if check_bounds:
        keep = ~skip
        if system.scalar:
            lo, hi = _local_bounds(top, U)
            ok = system.check_bounds(U_new, lo, hi)
        else:
            ok = system.check_bounds(U_new)
        if not np.all(ok[keep]):
            bad = np.where(~ok & keep)[0]
            raise InvariantViolation(f"{bad.size} dofs left the invariant set (first dof {bad[0]})")
    new_state = SolverState(mesh_new, U_new, mass_new, t=state.t + dt, n=state.n + 1)
    report = StepReport(
        n=state.n + 1,
        t=state.t + dt,
        dt=dt,
        min_convexity=min_conv,
        rowsum_defect=stencil.row_sum_defect(),
        total_before=state.totals,
        total_after=mass_new @ U_new,
    )
    report.extra["data"] = StepData(stencil, visc, W, x, t_flux, dt, U, state.mass, mass_new, U_new)
    return new_state, report


def euler_step_v1(state: SolverState, W, dt: float, stencil: Optional[StencilField], system: System,
                  bc=None, viscosity: bool = True, check_bounds: bool = True,
                  visc: Optional[Viscosity] = None):
    """One version-1 forward-Euler step; raises StepRejected when a check fails."""
    mesh = state.mesh
    W = np.asarray(W, dtype=float).reshape(-1, mesh.dim)
    stencil = stencil or assemble_stencil(mesh)
    inv = check_invertibility(mesh, W, dt)
    if not inv.ok:
        raise StepRejected("inversion", f"{len(inv.cells)} cells")
    mass_new = state.mass + dt * stencil.apply(W[:, None, :])[:, 0]
    if not np.all(mass_new > 0):
        raise StepRejected("mass", f"min mass {mass_new.min():.3e}")
    x = mesh.dof_points
    if visc is None:
        visc = compute_dij(stencil, state.U, W, system, x, state.t) if viscosity else zero_viscosity(stencil)
    mesh_new = mesh.moved(W, dt, t=state.t + dt)
    skip = dirichlet_dofs(mesh, bc)
    new_state, report = _finish_update(
        state, mesh_new, stencil, visc, W, dt, mass_new, system, x, state.t, check_bounds, skip
    )
    return apply_bc(new_state, bc), report


def euler_step_v2(state: SolverState, W, dt: float, system: System, bc=None,
                  viscosity: bool = True, check_bounds: bool = True):
    """One version-2 forward-Euler step with exact masses of the moved mesh."""
    mesh = state.mesh
    W = np.asarray(W, dtype=float).reshape(-1, mesh.dim)
    inv = check_invertibility(mesh, W, dt)
    if not inv.ok:
        raise StepRejected("inversion", f"{len(inv.cells)} cells")
    try:
        stencil = temporal_stencil(mesh, W, dt)
        mesh_new = mesh.moved(W, dt, t=state.t + dt)
        mass_new = exact_masses(mesh_new)
    except (MeshInvalidError, AssemblyError) as exc:
        raise StepRejected("inversion", str(exc)) from exc
    x = mesh.dof_points
    visc = compute_dij(stencil, state.U, W, system, x, state.t) if viscosity else zero_viscosity(stencil)
    skip = dirichlet_dofs(mesh, bc)
    new_state, report = _finish_update(
        state, mesh_new, stencil, visc, W, dt, mass_new, system, x, state.t, check_bounds, skip
    )
    return apply_bc(new_state, bc), report


def nonconservative_update(state: SolverState, W, dt: float, stencil: StencilField, d, system: System,
                           mass_new=None):
    """U^{n+1} from the non-conservative form of the scheme.

    ``mass_new`` defaults to the version-1 mass update; pass the exact masses
    of the moved mesh (and the time-averaged stencil) for version 2.
    """
    U = np.asarray(state.U, dtype=float)
    W = np.asarray(W, dtype=float).reshape(-1, state.mesh.dim)
    top = stencil.topology
    x = state.mesh.dof_points
    Wc = stencil.apply(W[:, None, :])[:, 0]  # sum_j W_j . c_ij
    if mass_new is None:
        mass_new = state.mass + dt * Wc
    F = system.flux(U, x, state.t)
    D = top.csr(np.asarray(d, dtype=float))
    # sum_j (U_j - U_i) W_j . c_ij = sum_j U_j (W_j . c_ij) - U_i sum_j W_j . c_ij
    UW = U[:, :, None] * W[:, None, :]
    rate = stencil.apply(UW) - U * Wc[:, None] - stencil.apply(F) + D @ U
    return U + dt * rate / mass_new[:, None]


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


def entropy_residual(data: StepData, system: System, pair: Optional[str] = None) -> np.ndarray:
    """Per-dof residual of the discrete entropy inequality (non-positive in theory).

    residual_i = (mass_i^{n+1} eta(U_i^{n+1}) - mass_i^n eta(U_i^n)) / dt
                 + sum_j (q(U_j) - eta(U_j) W_j) . c_ij - sum_j d_ij eta(U_j)
    """
    pair = pair or system.entropy_names[0]
    eta0, q0 = system.entropy(data.U_old, pair, data.x, data.t)
    eta1, _ = system.entropy(data.U_new, pair, data.x, data.t)
    top = data.stencil.topology
    G = (q0 - eta0[:, None] * data.W)[:, None, :]
    flux = data.stencil.apply(G)[:, 0]
    visc = top.csr(data.visc.d) @ eta0
    return (data.mass_new * eta1 - data.mass_old * eta0) / data.dt + flux - visc


def convex_certificate(data: StepData, system: System):
    """Rebuild U^{n+1} as the convex combination of U^n and the bar states.

    Returns ``(U_rebuilt, coefficients_min)``; pairs with d_ij = 0 contribute
    nothing.
    """
    top = data.stencil.topology
    U, W, c, d = data.U_old, data.W, data.stencil.c, data.visc.d
    rows, cols = top.rows, top.cols
    F = system.flux(U, data.x, data.t)
    e = np.where(top.offdiag & (d > 0))[0]
    i, j = rows[e], cols[e]
    jump = F[i] - F[j] - (U[i] - U[j])[:, :, None] * W[j][:, None, :]
    bar = 0.5 * (U[i] + U[j]) + np.einsum("emk,ek->em", jump, c[e]) / (2.0 * d[e, None])
    lam = 2.0 * data.dt * d[e] / data.mass_new[i]
    own = 1.0 - np.bincount(i, weights=lam, minlength=top.n_dofs)
    out = U * own[:, None]
    for k in range(U.shape[1]):
        out[:, k] += np.bincount(i, weights=lam * bar[:, k], minlength=top.n_dofs)
    return out, float(own.min()), bar


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


class Solver:
    """Time integrator with CFL estimation and the halving retry protocol.

    Parameters
    ----------
    system : System
    ale : AleStrategy
    bc : dict, optional
        Boundary tag -> BoundaryCondition.
    version : {1, 2}
    integrator : {"euler", "ssp3"}
        SSP-RK3 is only available for version 1.
    cfl : float
        Multiplier of the local CFL bound.
    viscosity : bool
        ``False`` sets d_ij = 0 (accuracy studies only).
    speeds : {"shifted", "eulerian", "max"}
        Which fan speeds enter the time-step estimate.
    dt_rule : {"local", "graph", "courant"}
        Form of the time-step bound, see :func:`estimate_dt`.
    dt_max : float
        Upper bound of the time step.
    """

    def __init__(self, system: System, ale: AleStrategy, bc=None, version: int = 1,
                 integrator: str = "euler", cfl: float = 0.5, viscosity: bool = True,
                 speeds: str = "shifted", dt_rule: str = "local", dt_max: float = math.inf, max_halvings: int = 20,
                 entropy: Optional[str] = None, check_bounds: bool = True):
        if version not in (1, 2):
            raise ValueError("version must be 1 or 2")
        if integrator not in ("euler", "ssp3"):
            raise ValueError("integrator must be 'euler' or 'ssp3'")
        if integrator == "ssp3" and version == 2:
            raise ValueError("SSP-RK3 is only defined for version 1")
        if not 0.0 < cfl:
            raise ValueError("cfl must be positive")
        self.system = system
        self.ale = ale
        self.bc = bc or {}
        self.version = version
        self.integrator = integrator
        self.cfl = cfl
        self.viscosity = viscosity
        self.speeds = speeds
        self.dt_rule = dt_rule
        self.dt_max = dt_max
        self.max_halvings = max_halvings
        self.entropy = entropy
        self.check_bounds = check_bounds

    # -- building blocks -------------------------------------------------
    def velocities(self, state: SolverState, t: float, dt: float):
        return node_velocities(self.ale, state.mesh, state.U, self.system, t, dt)

    def _euler(self, state, W, dt, stencil=None, visc=None):
        if self.version == 1:
            return euler_step_v1(state, W, dt, stencil, self.system, self.bc, self.viscosity,
                                 self.check_bounds, visc=visc)
        return euler_step_v2(state, W, dt, self.system, self.bc, self.viscosity, self.check_bounds)

    def _trial_velocities(self, state):
        # The smoothed velocity depends on dt; the estimate uses its Lagrangian part.
        ale = self.ale
        if ale.mode == "smoothed_lagrangian":
            ale = replace(ale, mode="lagrangian")
        return node_velocities(ale, state.mesh, state.U, self.system, state.t, 0.0)

    def estimate_dt(self, state: SolverState, stencil=None) -> float:
        stencil = stencil or assemble_stencil(state.mesh)
        W = self._trial_velocities(state)
        visc = compute_dij(stencil, state.U, W, self.system, state.mesh.dof_points, state.t)
        return estimate_dt(stencil, visc, self.cfl, self.dt_max, self.speeds, self.dt_rule)

    def _attempt(self, state, dt, stencil0):
        if self.integrator == "euler":
            W = self.velocities(state, state.t, dt)
            s = stencil0 if self.version == 1 else None
            new, rep = self._euler(state, W, dt, s)
            if self.entropy:
                rep.entropy_max = float(entropy_residual(rep.extra["data"], self.system, self.entropy).max())
            return new, rep
        return self.ssp_rk3_step(state, dt, stencil0)

    def ssp_rk3_step(self, state: SolverState, dt: float, stencil0=None):
        """Three version-1 substeps combined as in the SSP-RK3 scheme."""
        t0 = state.t
        W0 = self.velocities(state, t0, dt)
        s1, r1 = self._euler(state, W0, dt, stencil0)
        W1 = self.velocities(s1, t0 + dt, dt)
        s2t, r2 = self._euler(s1, W1, dt)
        mass2 = 0.75 * state.mass + 0.25 * s2t.mass
        U2 = (0.75 * state.mass[:, None] * state.U + 0.25 * s2t.mass[:, None] * s2t.U) / mass2[:, None]
        pts2 = 0.75 * state.mesh.points + 0.25 * s2t.mesh.points
        s2 = SolverState(state.mesh.with_points(pts2, t=t0 + 0.5 * dt), U2, mass2, t=t0 + 0.5 * dt, n=state.n)
        s2 = apply_bc(s2, self.bc)
        W2 = self.velocities(s2, t0 + 0.5 * dt, dt)
        s3t, r3 = self._euler(s2, W2, dt)
        mass3 = state.mass / 3.0 + 2.0 * s3t.mass / 3.0
        U3 = (state.mass[:, None] * state.U + 2.0 * s3t.mass[:, None] * s3t.U) / (3.0 * mass3[:, None])
        pts3 = state.mesh.points / 3.0 + 2.0 * s3t.mesh.points / 3.0
        s3 = SolverState(state.mesh.with_points(pts3, t=t0 + dt), U3, mass3, t=t0 + dt, n=state.n + 1)
        s3 = apply_bc(s3, self.bc)
        try:
            validate_mesh(s3.mesh)
        except MeshInvalidError as exc:
            raise StepRejected("inversion", "combined mesh") from exc
        rep = StepReport(
            n=state.n + 1,
            t=t0 + dt,
            dt=dt,
            min_convexity=min(r1.min_convexity, r2.min_convexity, r3.min_convexity),
            rowsum_defect=max(r1.rowsum_defect, r2.rowsum_defect, r3.rowsum_defect),
            total_before=state.totals,
            total_after=s3.totals,
        )
        if self.entropy:
            rep.entropy_max = max(
                float(entropy_residual(r.extra["data"], self.system, self.entropy).max()) for r in (r1, r2, r3)
            )
        rep.extra["stages"] = (r1, r2, r3)
        return s3, rep

    # -- public API --------------------------------------------------------
    def step(self, state: SolverState, dt: Optional[float] = None, T: float = math.inf):
        """Advance one accepted step, halving dt on rejection."""
        stencil0 = assemble_stencil(state.mesh)
        if dt is None:
            dt = self.estimate_dt(state, stencil0)
        dt = min(dt, T - state.t)
        if not dt > 0:
            raise SolverError(f"non-positive time step {dt!r} at t={state.t}")
        reasons = []
        for k in range(self.max_halvings + 1):
            try:
                new, rep = self._attempt(state, dt, stencil0)
            except StepRejected as exc:
                reasons.append(f"dt={dt:.3e}: {exc}")
                log.debug("step %d rejected (%s); halving dt", state.n + 1, exc)
                dt *= 0.5
                continue
            rep.reductions = k
            return new, rep
        raise SolverError(
            f"step {state.n + 1} at t={state.t:.6g} rejected {self.max_halvings + 1} times: "
            + "; ".join(reasons[-3:])
        )

    def run(self, state: SolverState, T: float, callback: Optional[Callable] = None,
            max_steps: int = 10**9):
        """Integrate to time T; returns (final state, list of reports)."""
        state = apply_bc(state, self.bc)
        reports: List[StepReport] = []
        tol = 1e-13 * max(1.0, abs(T))
        while state.t < T - tol:
            if len(reports) >= max_steps:
                raise SolverError(f"step limit {max_steps} reached at t={state.t}", reports)
            try:
                state, rep = self.step(state, T=T)
            except SolverError as exc:
                exc.reports = reports
                raise
            if T - state.t <= tol:
                state = replace(state, t=T, mesh=state.mesh.with_points(state.mesh.points, t=T))
            rep.extra.pop("data", None)
            rep.extra.pop("stages", None)
            reports.append(rep)
            if callback is not None:
                callback(state, rep)
        return state, reports
