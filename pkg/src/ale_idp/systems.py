"""Hyperbolic systems: fluxes, Riemann fan speed bounds, invariant sets, entropies.

Every system works on batches.  A state array ``U`` has shape (N, m); a flux
array has shape (N, m, d); speed functions take one unit normal, one left and
one right state per row and return the left and right fan speeds
``(lam_L, lam_R)`` of the one-dimensional Riemann problem along the normal.
"""

from __future__ import annotations

import logging
from typing import Callable

import numpy as np

from . import _kernels
from .errors import AdmissibilityError

log = logging.getLogger(__name__)


def shifted_lambda_max(lam_L, lam_R, w_n):
    """Fastest speed of the flux translated by the mesh velocity component ``w_n``."""
    return np.maximum(np.abs(np.subtract(lam_L, w_n)), np.abs(np.subtract(lam_R, w_n)))


class System:
    """Base class for a hyperbolic system ``du/dt + div f(u) = 0``.

    Subclasses set ``m`` (number of components), ``dim`` and ``name`` and
    implement the batch methods below.  ``x`` and ``t`` are accepted by every
    method so that space-time dependent fluxes share the interface.
    """

    m: int = 1
    dim: int = 2
    name: str = "system"
    scalar: bool = True
    entropy_names: tuple = ("square",)

    def flux(self, U, x=None, t=0.0) -> np.ndarray:
        raise NotImplementedError

    def speeds(self, n, UL, UR, xL=None, xR=None, t=0.0):
        raise NotImplementedError

    def pair_speeds(self, U, rows, cols, idx, c, norm, x=None, t=0.0):
        """Fan speeds of the pairs ``idx`` of a sparse pattern along c / |c|."""
        ne = norm[idx]
        n = c[idx] / np.where(ne > 0, ne, 1.0)[:, None]
        i, j = rows[idx], cols[idx]
        xl = None if x is None else x[i]
        xr = None if x is None else x[j]
        return self.speeds(n, U[i], U[j], xl, xr, t)

    def spectral_radius(self, n, U, x=None, t=0.0) -> np.ndarray:
        raise NotImplementedError

    def admissible(self, U) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        return np.all(np.isfinite(U), axis=-1)

    def entropy(self, U, which: str = "square", x=None, t=0.0):
        raise NotImplementedError

    def lagrangian_velocity(self, U, x=None, t=0.0) -> np.ndarray:
        raise NotImplementedError

    def max_speed(self, n, UL, UR, xL=None, xR=None, t=0.0):
        """max(|lam_L|, |lam_R|) for single or batched input."""
        lamL, lamR = self.speeds(*_batch(n, UL, UR, self.m), _rows(xL), _rows(xR), t)
        out = shifted_lambda_max(lamL, lamR, 0.0)
        return float(out[0]) if np.ndim(UL) <= 1 and out.size == 1 else out

    def check_bounds(self, U, lo=None, hi=None, tol: float = 1e-12) -> np.ndarray:
        """Invariant-set membership per row.

        Scalars: ``lo - tol <= U <= hi + tol``.  Systems override this with a
        positivity test and ignore the bounds.
        """
        U = np.asarray(U, dtype=float)[:, 0]
        return (U >= np.asarray(lo) - tol) & (U <= np.asarray(hi) + tol)

    def _require_admissible(self, U):
        ok = self.admissible(U)
        if not np.all(ok):
            bad = np.where(~ok)[0]
            raise AdmissibilityError(
                f"{self.name}: {bad.size} non-admissible states (first at row {bad[0]})"
            )


def _batch(n, UL, UR, m):
    n = np.atleast_2d(np.asarray(n, dtype=float))
    UL = np.asarray(UL, dtype=float).reshape(-1, m)
    UR = np.asarray(UR, dtype=float).reshape(-1, m)
    return n, UL, UR


def _rows(x):
    return None if x is None else np.atleast_2d(np.asarray(x, dtype=float))


# ---------------------------------------------------------------------------
# Scalar systems
# ---------------------------------------------------------------------------


class Transport(System):
    """Linear transport ``du/dt + div(beta(x, t) u) = 0``.

    The velocity is frozen at the dof positions: the flux at dof j is
    ``beta(a_j, t) u_j`` and the fan of the pair (i, j) spans the two normal
    velocities ``beta(a_i, t).n`` and ``beta(a_j, t).n``.
    """

    name = "transport"

    def __init__(self, beta: Callable, dim: int = 2):
        self.beta = beta
        self.dim = dim

    def _b(self, x, t, size):
        if x is None:
            raise ValueError("transport needs node positions")
        b = np.asarray(self.beta(np.atleast_2d(x), t), dtype=float)
        return np.broadcast_to(b, (size, self.dim)) if b.shape[0] != size else b

    def flux(self, U, x=None, t=0.0):
        U = np.asarray(U, dtype=float)
        b = self._b(x, t, U.shape[0])
        return U[:, :, None] * b[:, None, :]

    def speeds(self, n, UL, UR, xL=None, xR=None, t=0.0):
        bl = np.einsum("ed,ed->e", self._b(xL, t, n.shape[0]), n)
        br = np.einsum("ed,ed->e", self._b(xR, t, n.shape[0]), n)
        return np.minimum(bl, br), np.maximum(bl, br)

    def spectral_radius(self, n, U, x=None, t=0.0):
        n = np.atleast_2d(n)
        return np.abs(np.einsum("ed,ed->e", self._b(x, t, n.shape[0]), n))

    def entropy(self, U, which="square", x=None, t=0.0):
        _check_pair(self, which)
        u = np.asarray(U, dtype=float)[:, 0]
        b = self._b(x, t, u.size)
        return 0.5 * u**2, 0.5 * u[:, None] ** 2 * b

    def lagrangian_velocity(self, U, x=None, t=0.0):
        return self._b(x, t, np.asarray(U).shape[0]).copy()


class Burgers(System):
    """Burgers flux ``u^2/2 * beta`` with a constant direction ``beta``."""

    name = "burgers"

    def __init__(self, beta=(1.0, 1.0)):
        self.direction = np.asarray(beta, dtype=float)
        self.dim = self.direction.size

    def flux(self, U, x=None, t=0.0):
        u = np.asarray(U, dtype=float)
        return 0.5 * u[:, :, None] ** 2 * self.direction

    def speeds(self, n, UL, UR, xL=None, xR=None, t=0.0):
        bn = n @ self.direction
        # f'(s).n = s (beta.n) is linear in s: the extremes sit at the end states.
        a, b = UL[:, 0] * bn, UR[:, 0] * bn
        return np.minimum(a, b), np.maximum(a, b)

    def spectral_radius(self, n, U, x=None, t=0.0):
        return np.abs(np.asarray(U, dtype=float)[:, 0] * (np.atleast_2d(n) @ self.direction))

    def entropy(self, U, which="square", x=None, t=0.0):
        _check_pair(self, which)
        u = np.asarray(U, dtype=float)[:, 0]
        return 0.5 * u**2, (u**3 / 3.0)[:, None] * self.direction

    def lagrangian_velocity(self, U, x=None, t=0.0):
        return np.asarray(U, dtype=float)[:, :1] * self.direction


def _cos_range(lo, hi):
    """Min and max of cos over the intervals [lo, hi] (arrays, lo <= hi)."""
    two_pi = 2.0 * np.pi
    ends_max = np.maximum(np.cos(lo), np.cos(hi))
    ends_min = np.minimum(np.cos(lo), np.cos(hi))
    has_peak = np.floor(hi / two_pi) * two_pi >= lo
    has_trough = np.floor((hi - np.pi) / two_pi) * two_pi + np.pi >= lo
    return np.where(has_trough, -1.0, ends_min), np.where(has_peak, 1.0, ends_max)


class KPP(System):
    """Non-convex flux ``f(u) = (sin u, cos u)``."""

    name = "kpp"

    def __init__(self):
        self.dim = 2

    def flux(self, U, x=None, t=0.0):
        u = np.asarray(U, dtype=float)
        return np.stack([np.sin(u), np.cos(u)], axis=-1)

    def speeds(self, n, UL, UR, xL=None, xR=None, t=0.0):
        # f'(s).n = cos(s) n1 - sin(s) n2 = |n| cos(s + phi)
        r = np.hypot(n[:, 0], n[:, 1])
        phi = np.arctan2(n[:, 1], n[:, 0])
        lo = np.minimum(UL[:, 0], UR[:, 0]) + phi
        hi = np.maximum(UL[:, 0], UR[:, 0]) + phi
        cmin, cmax = _cos_range(lo, hi)
        return r * cmin, r * cmax

    def spectral_radius(self, n, U, x=None, t=0.0):
        n = np.atleast_2d(n)
        u = np.asarray(U, dtype=float)[:, 0]
        return np.abs(np.cos(u) * n[:, 0] - np.sin(u) * n[:, 1])

    def entropy(self, U, which="square", x=None, t=0.0):
        _check_pair(self, which)
        u = np.asarray(U, dtype=float)[:, 0]
        # q(u) = int_0^u s f'(s) ds
        q1 = np.cos(u) + u * np.sin(u) - 1.0
        q2 = u * np.cos(u) - np.sin(u)
        return 0.5 * u**2, np.stack([q1, q2], axis=-1)

    def lagrangian_velocity(self, U, x=None, t=0.0):
        u = np.asarray(U, dtype=float)[:, 0]
        return np.stack([np.cos(u), -np.sin(u)], axis=-1)


def _check_pair(system, which):
    if which not in system.entropy_names:
        raise KeyError(f"{system.name}: no entropy pair named {which!r}")


def make_transport(beta: Callable, dim: int = 2) -> Transport:
    return Transport(beta, dim)


def make_burgers_2d(beta=(1.0, 1.0)) -> Burgers:
    return Burgers(beta)


def make_kpp() -> KPP:
    return KPP()


# ---------------------------------------------------------------------------
# Compressible Euler
# ---------------------------------------------------------------------------


def star_pressure(rhoL, uL, pL, rhoR, uR, pR, gamma, tol=1e-12, max_iter=100):
    """Star pressure of the 1D Riemann problem by safeguarded Newton iteration.

    Starts from the two-rarefaction pressure, clamps iterates to stay
    positive, and lifts the converged value slightly so that it bounds the
    exact star pressure from above.  Returns ``(p_star, converged)``; vacuum
    data give ``p_star = 0``.
    """
    args = np.broadcast_arrays(*(np.atleast_1d(np.asarray(v, dtype=float)) for v in (rhoL, uL, pL, rhoR, uR, pR)))
    args = [np.ascontiguousarray(a).ravel() for a in args]
    p, status = _kernels.star_pressure_many(*args, float(gamma), float(tol), int(max_iter))
    _warn_failures(status)
    return p, status != 2


def _warn_failures(status):
    failed = int(np.count_nonzero(status == 2))
    if failed:
        log.warning("star pressure Newton did not converge for %d pairs; using two-rarefaction value", failed)


def euler_wave_speeds(n, UL, UR, gamma, tol=1e-12, max_iter=100):
    """Left and right fan speeds of the Euler Riemann problem along ``n``.

    ``UL``/``UR`` are conserved states (rho, rho u, E) of shape (E, d+2) and
    ``n`` unit normals of shape (E, d).
    """
    n = np.ascontiguousarray(np.atleast_2d(np.asarray(n, dtype=float)))
    d = n.shape[1]
    UL = np.ascontiguousarray(np.asarray(UL, dtype=float).reshape(-1, d + 2))
    UR = np.ascontiguousarray(np.asarray(UR, dtype=float).reshape(-1, d + 2))
    if n.shape[0] != UL.shape[0]:
        n = np.ascontiguousarray(np.broadcast_to(n, (UL.shape[0], d)))
    lamL, lamR, status = _kernels.euler_speeds(n, UL, UR, float(gamma), float(tol), int(max_iter))
    _warn_failures(status)
    return lamL, lamR


def conserved_to_primitive(U, gamma):
    U = np.asarray(U, dtype=float)
    rho = U[:, 0]
    vel = U[:, 1:-1] / rho[:, None]
    p = (gamma - 1.0) * (U[:, -1] - 0.5 * rho * np.einsum("nd,nd->n", vel, vel))
    return rho, vel, p


def primitive_to_conserved(rho, vel, p, gamma):
    rho = np.asarray(rho, dtype=float)
    vel = np.atleast_2d(np.asarray(vel, dtype=float))
    vel = np.broadcast_to(vel, (rho.size, vel.shape[-1])) if vel.shape[0] == 1 else vel
    rho = rho.reshape(-1)
    E = np.asarray(p, dtype=float).reshape(-1) / (gamma - 1.0) + 0.5 * rho * np.einsum(
        "nd,nd->n", vel, vel
    )
    return np.column_stack([rho, rho[:, None] * vel, E])


class Euler(System):
    """Compressible Euler equations for a polytropic ideal gas."""

    name = "euler"
    scalar = False
    entropy_names = ("physical",)

    def __init__(self, gamma: float = 1.4, dim: int = 2):
        if not gamma > 1.0:
            raise ValueError("gamma must exceed 1")
        self.gamma = float(gamma)
        self.dim = dim
        self.m = dim + 2

    def primitive(self, U):
        return conserved_to_primitive(U, self.gamma)

    def conserved(self, rho, vel, p):
        return primitive_to_conserved(rho, vel, p, self.gamma)

    def internal_energy(self, U):
        U = np.asarray(U, dtype=float)
        mom = U[:, 1:-1]
        return U[:, -1] - 0.5 * np.einsum("nd,nd->n", mom, mom) / U[:, 0]

    def admissible(self, U):
        U = np.asarray(U, dtype=float).reshape(-1, self.m)
        with np.errstate(invalid="ignore", divide="ignore"):
            ok = (U[:, 0] > 0) & (self.internal_energy(U) > 0)
        return ok & np.all(np.isfinite(U), axis=1)

    def flux(self, U, x=None, t=0.0):
        U = np.asarray(U, dtype=float)
        self._require_admissible(U)
        rho, vel, p = self.primitive(U)
        F = U[:, :, None] * vel[:, None, :]
        idx = np.arange(self.dim)
        F[:, 1 + idx, idx] += p[:, None]
        F[:, -1, :] += p[:, None] * vel
        return F

    def speeds(self, n, UL, UR, xL=None, xR=None, t=0.0):
        return euler_wave_speeds(n, UL, UR, self.gamma)

    def pair_speeds(self, U, rows, cols, idx, c, norm, x=None, t=0.0):
        lamL, lamR, status = _kernels.euler_pair_speeds(
            np.ascontiguousarray(U, dtype=float), rows, cols, idx, c, norm, self.gamma, 1e-12, 100
        )
        _warn_failures(status)
        return lamL, lamR

    def spectral_radius(self, n, U, x=None, t=0.0):
        n = np.atleast_2d(n)
        rho, vel, p = self.primitive(np.asarray(U, dtype=float))
        c = np.sqrt(self.gamma * p / rho)
        return np.abs(np.einsum("nd,nd->n", vel, n)) + c * np.linalg.norm(n, axis=1)

    def check_bounds(self, U, lo=None, hi=None, tol: float = 0.0):
        return self.admissible(U)

    def entropy(self, U, which="physical", x=None, t=0.0):
        _check_pair(self, which)
        rho, vel, p = self.primitive(U)
        eta = -rho * np.log(p * rho ** (-self.gamma)) / (self.gamma - 1.0)
        return eta, eta[:, None] * vel

    def lagrangian_velocity(self, U, x=None, t=0.0):
        U = np.asarray(U, dtype=float)
        return U[:, 1:-1] / U[:, :1]


def make_euler(gamma: float = 1.4, dim: int = 2) -> Euler:
    return Euler(gamma, dim)


def entropy_pair_eval(system: System, which: str, U, x=None, t=0.0):
    """(eta(U), q(U)) for the registered pair ``which``."""
    return system.entropy(np.atleast_2d(np.asarray(U, dtype=float)), which, x, t)
