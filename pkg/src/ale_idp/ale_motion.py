"""ALE node velocities and mesh-motion validity checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .errors import DegenerateStepError
from . import _kernels
from .fem_mesh import Mesh, default_quadrature

MODES = ("none", "analytic", "lagrangian", "smoothed_lagrangian")
POLICIES = ("fixed", "slide-x", "slide-y", "free", "prescribed")


@dataclass
class AleStrategy:
    """How the mesh moves.

    Parameters
    ----------
    mode : str
        One of ``none``, ``analytic`` (``W = beta(a, t)``), ``lagrangian``
        (``W`` = characteristic/fluid velocity) and ``smoothed_lagrangian``.
    beta : callable, optional
        ``beta(x, t)`` for the analytic mode, ``x`` of shape (N, d).
    omega, sweeps : float, int
        Blend weight of the Lagrangian positions and number of averaging
        sweeps of the smoothed mode.
    boundary : dict
        Boundary tag -> policy (``fixed``, ``slide-x``, ``slide-y``,
        ``free`` or ``prescribed``).  Tags not listed are ``free``.
    prescribed : callable, optional
        ``prescribed(x, t)`` giving the velocity of ``prescribed`` dofs.
    """

    mode: str = "none"
    beta: Optional[Callable] = None
    omega: float = 0.9
    sweeps: int = 2
    boundary: Dict[str, str] = field(default_factory=dict)
    prescribed: Optional[Callable] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown ALE mode {self.mode!r}")
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError("omega must lie in [0, 1]")
        if self.sweeps < 0:
            raise ValueError("sweeps must be non-negative")
        for tag, pol in self.boundary.items():
            if pol not in POLICIES:
                raise ValueError(f"boundary {tag!r}: unknown motion policy {pol!r}")
        if self.mode == "analytic" and self.beta is None:
            raise ValueError("analytic mode needs a velocity field")


def boundary_masks(mesh: Mesh, strategy: AleStrategy):
    """Per-dof component masks of allowed motion, plus the prescribed-dof mask.

    A dof shared by several tags keeps only the components every tag allows.
    """
    N, d = mesh.n_dofs, mesh.dim
    allow = np.ones((N, d), dtype=bool)
    prescribed = np.zeros(N, dtype=bool)
    for tag, pol in strategy.boundary.items():
        dofs = mesh.boundary.get(tag)
        if dofs is None or pol == "free":
            continue
        if pol == "fixed":
            allow[dofs] = False
        elif pol == "slide-x":
            allow[dofs, 1:] = False
        elif pol == "slide-y":
            allow[dofs, 0] = False
            if d > 2:
                allow[dofs, 2:] = False
        elif pol == "prescribed":
            prescribed[dofs] = True
    return allow, prescribed


def _apply_policy(W, x, t, allow, prescribed, strategy):
    W = np.where(allow, W, 0.0)
    if prescribed.any():
        if strategy.prescribed is None:
            raise ValueError("prescribed boundary motion needs a velocity function")
        W[prescribed] = strategy.prescribed(x[prescribed], t)
    return W


def smooth_positions(mesh: Mesh, positions, sweeps: int, hold=None):
    """Jacobi neighbour averaging over the dof graph.

    Dofs flagged in ``hold`` (by default the mesh boundary) keep their input
    position.
    """
    A = mesh.topology.neighbor_matrix()
    hold = mesh.topology.boundary_mask if hold is None else hold
    a = np.array(positions, dtype=float)
    fixed = a[hold]
    for _ in range(sweeps):
        a = A @ a
        a[hold] = fixed
    return a


def node_velocities(strategy: AleStrategy, mesh: Mesh, U, system, t: float, dt: float):
    """Per-dof ALE velocities W (N, d) for the step starting at ``t``."""
    x = mesh.dof_points
    N, d = x.shape
    allow, prescribed = boundary_masks(mesh, strategy)
    mode = strategy.mode
    if mode == "none":
        return np.zeros((N, d))
    if mode == "analytic":
        W = np.asarray(strategy.beta(x, t), dtype=float)
        return _apply_policy(np.broadcast_to(W, (N, d)).copy(), x, t, allow, prescribed, strategy)
    W_lag = np.asarray(system.lagrangian_velocity(U, x, t), dtype=float)
    W_lag = _apply_policy(W_lag, x, t, allow, prescribed, strategy)
    if mode == "lagrangian" or strategy.omega == 1.0 or strategy.sweeps == 0:
        return W_lag
    if not dt > 0:
        raise DegenerateStepError("smoothed Lagrangian motion needs dt > 0")
    if mesh.periodic:
        raise ValueError("mesh smoothing is not defined across periodic seams")
    a_lag = x + dt * W_lag
    a_smooth = smooth_positions(mesh, a_lag, strategy.sweeps)
    a_new = strategy.omega * a_lag + (1.0 - strategy.omega) * a_smooth
    W = (a_new - x) / dt
    # Boundary dofs were held at their Lagrangian (policy-filtered) positions.
    bnd = mesh.topology.boundary_mask
    W[bnd] = W_lag[bnd]
    return W


@dataclass
class InvertibilityReport:
    ok: bool
    cells: List[int]
    min_ratio: float

    def __bool__(self):
        return self.ok


def check_invertibility(mesh: Mesh, W, dt: float, eps: float = 1e-10) -> InvertibilityReport:
    """Check det J > eps |det J^n| on the moved mesh and the temporal midpoint."""
    quad = default_quadrature(mesh.kind)
    W = np.asarray(W, dtype=float).reshape(-1, mesh.dim)
    X = np.ascontiguousarray(mesh.cell_coordinates())
    D = np.ascontiguousarray(dt * W[mesh.dof_of_node][mesh.cells])
    G = np.ascontiguousarray(mesh.element.gradients(quad.points))
    r = _kernels.determinant_ratios(X, D, G, np.array([0.5, 1.0]))
    ratio = float(r.min())
    bad = (r < eps).any(axis=0)
    cells = np.where(bad)[0].tolist()
    return InvertibilityReport(not cells, cells, ratio)
