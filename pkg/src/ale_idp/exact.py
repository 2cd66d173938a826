"""Reference solutions and discrete error norms."""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .fem_mesh import Mesh, cell_data, gauss_rule


# ---------------------------------------------------------------------------
# Rotation (swirl) transport
# ---------------------------------------------------------------------------


def rotation_beta(x, t):
    """Time-periodic cell swirl on the unit square; tangent to its boundary."""
    x = np.atleast_2d(x)
    g = math.cos(2.0 * math.pi * t)
    px, py = np.pi * x[:, 0], np.pi * x[:, 1]
    return np.stack([np.sin(px) * np.cos(py) * g, -np.cos(px) * np.sin(py) * g], axis=-1)


def rotation_u0(x):
    x = np.atleast_2d(x)
    return x[:, 0] + x[:, 1]


def exact_rotation(x, t, tol=1e-12):
    """Solution value at (x, t): u0 at the foot of the backward characteristic."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if t == 0:
        return rotation_u0(x)
    n = x.shape[0]

    def rhs(s, y):
        return rotation_beta(y.reshape(n, 2), s).ravel()

    sol = solve_ivp(rhs, (t, 0.0), x.ravel(), method="DOP853", rtol=tol, atol=tol)
    if not sol.success:
        raise RuntimeError(f"characteristic integration failed: {sol.message}")
    return rotation_u0(sol.y[:, -1].reshape(n, 2))


# ---------------------------------------------------------------------------
# Burgers
# ---------------------------------------------------------------------------


def exact_burgers(x, t):
    """Entropy solution of 2D Burgers with direction (1, 1) and u0 = 1 on (0, 1)^2."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    # Reflect the half x2 > x1 onto x2 <= x1.
    x1 = np.maximum(x[:, 0], x[:, 1])
    x2 = np.minimum(x[:, 0], x[:, 1])
    u = np.zeros(x.shape[0])
    if t <= 0:
        inside = (x[:, 0] > 0) & (x[:, 0] < 1) & (x[:, 1] > 0) & (x[:, 1] < 1)
        return inside.astype(float)
    alpha = x1 - x2
    alpha0 = 1.0 - 0.5 * t
    fan = (x2 >= 0) & (x2 < t)
    a = alpha <= alpha0
    b = (alpha > alpha0) & (alpha <= 1.0)
    plateau = a & (x2 >= t) & (x2 < 0.5 * t + 1.0 - alpha)
    u[a & fan] = x2[a & fan] / t
    u[plateau] = 1.0
    edge = np.sqrt(np.maximum(2.0 * t * (1.0 - alpha), 0.0))
    sel = b & (x2 >= 0) & (x2 < edge)
    u[sel] = x2[sel] / t
    return u


# ---------------------------------------------------------------------------
# Euler: exact Riemann solution (independent of the scheme's Newton solver)
# ---------------------------------------------------------------------------


def _f(p, rho, pk, gamma):
    c = math.sqrt(gamma * pk / rho)
    if p > pk:
        A = 2.0 / ((gamma + 1.0) * rho)
        B = (gamma - 1.0) / (gamma + 1.0) * pk
        return (p - pk) * math.sqrt(A / (p + B))
    return 2.0 * c / (gamma - 1.0) * ((p / pk) ** ((gamma - 1.0) / (2.0 * gamma)) - 1.0)


class RiemannSolution:
    """Exact self-similar solution of a 1D Euler Riemann problem.

    The star pressure is bracketed and found with Brent's method; wave speeds
    follow from the Rankine-Hugoniot relations (shocks) or characteristic
    speeds (rarefaction heads and tails).
    """

    def __init__(self, left, right, gamma=1.4):
        self.gamma = g = float(gamma)
        self.rL, self.uL, self.pL = map(float, left)
        self.rR, self.uR, self.pR = map(float, right)
        self.cL = math.sqrt(g * self.pL / self.rL)
        self.cR = math.sqrt(g * self.pR / self.rR)
        du = self.uR - self.uL
        self.vacuum = 2.0 * (self.cL + self.cR) / (g - 1.0) <= du
        if self.vacuum:
            self.p_star = 0.0
            self.u_star = float("nan")
        else:
            F = lambda p: _f(p, self.rL, self.pL, g) + _f(p, self.rR, self.pR, g) + du
            hi = max(self.pL, self.pR)
            while F(hi) < 0:
                hi *= 2.0
            self.p_star = brentq(F, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
            p = self.p_star
            self.u_star = 0.5 * (self.uL + self.uR) + 0.5 * (_f(p, self.rR, self.pR, g) - _f(p, self.rL, self.pL, g))
        self._speeds()

    def _star_density(self, rho, pk):
        g, p = self.gamma, self.p_star
        if p > pk:
            k = (g - 1.0) / (g + 1.0)
            return rho * (p / pk + k) / (k * p / pk + 1.0)
        return rho * (p / pk) ** (1.0 / g)

    def _speeds(self):
        g = self.gamma
        if self.vacuum:
            self.left_head = self.uL - self.cL
            self.left_tail = self.uL + 2.0 * self.cL / (g - 1.0)
            self.right_tail = self.uR - 2.0 * self.cR / (g - 1.0)
            self.right_head = self.uR + self.cR
            self.left_shock = self.right_shock = False
            return
        p, us = self.p_star, self.u_star
        self.rho_star_L = self._star_density(self.rL, self.pL)
        self.rho_star_R = self._star_density(self.rR, self.pR)
        self.left_shock = p > self.pL
        self.right_shock = p > self.pR
        if self.left_shock:
            s = (self.rho_star_L * us - self.rL * self.uL) / (self.rho_star_L - self.rL)
            self.left_head = self.left_tail = s
        else:
            self.left_head = self.uL - self.cL
            self.left_tail = us - math.sqrt(g * p / self.rho_star_L)
        if self.right_shock:
            s = (self.rho_star_R * us - self.rR * self.uR) / (self.rho_star_R - self.rR)
            self.right_head = self.right_tail = s
        else:
            self.right_head = self.uR + self.cR
            self.right_tail = us + math.sqrt(g * p / self.rho_star_R)

    @property
    def fan(self):
        """Leftmost and rightmost wave speeds."""
        return self.left_head, self.right_head

    def sample(self, xi):
        """(rho, u, p) at similarity coordinates xi = (x - x0) / t."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        g = self.gamma
        rho = np.empty_like(xi)
        u = np.empty_like(xi)
        p = np.empty_like(xi)
        for k, s in enumerate(xi):
            rho[k], u[k], p[k] = self._sample_one(s, g)
        return rho, u, p

    def _sample_one(self, s, g):
        if s <= self.left_head:
            return self.rL, self.uL, self.pL
        if s >= self.right_head:
            return self.rR, self.uR, self.pR
        if self.vacuum:
            if s < self.left_tail:
                return self._left_fan(s, g)
            if s > self.right_tail:
                return self._right_fan(s, g)
            return 0.0, 0.5 * (self.left_tail + self.right_tail), 0.0
        if s < self.left_tail:
            return self._left_fan(s, g)
        if s > self.right_tail:
            return self._right_fan(s, g)
        if s <= self.u_star:
            return self.rho_star_L, self.u_star, self.p_star
        return self.rho_star_R, self.u_star, self.p_star

    def _left_fan(self, s, g):
        k = 2.0 / (g + 1.0)
        r = self.rL * (k + (g - 1.0) / ((g + 1.0) * self.cL) * (self.uL - s)) ** (2.0 / (g - 1.0))
        u = k * (self.cL + 0.5 * (g - 1.0) * self.uL + s)
        p = self.pL * (r / self.rL) ** g
        return r, u, p

    def _right_fan(self, s, g):
        k = 2.0 / (g + 1.0)
        r = self.rR * (k - (g - 1.0) / ((g + 1.0) * self.cR) * (self.uR - s)) ** (2.0 / (g - 1.0))
        u = k * (-self.cR + 0.5 * (g - 1.0) * self.uR + s)
        p = self.pR * (r / self.rR) ** g
        return r, u, p


SOD_LEFT = (1.0, 0.0, 1.0)
SOD_RIGHT = (0.125, 0.0, 0.1)


def exact_sod(x1, t, gamma=1.4, x0=0.5):
    """(rho, u, p) of the Sod shock tube at abscissae ``x1`` and time ``t``."""
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    if t <= 0:
        left = x1 <= x0
        rho = np.where(left, SOD_LEFT[0], SOD_RIGHT[0])
        u = np.zeros_like(x1)
        p = np.where(left, SOD_LEFT[2], SOD_RIGHT[2])
        return rho, u, p
    return RiemannSolution(SOD_LEFT, SOD_RIGHT, gamma).sample((x1 - x0) / t)


# ---------------------------------------------------------------------------
# Noh implosion
# ---------------------------------------------------------------------------

NOH_GAMMA = 5.0 / 3.0
NOH_P0 = 1e-15


def exact_noh_density(x, t):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r = np.linalg.norm(x, axis=1)
    with np.errstate(divide="ignore"):
        outer = 1.0 + t / np.where(r > 0, r, np.inf)
    return np.where(r < t / 3.0, 16.0, outer)


def exact_noh(x, t, gamma=NOH_GAMMA, p0=NOH_P0):
    """(rho, velocity, p) of the 2D Noh problem; velocity is -x/|x| outside the shock."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r = np.linalg.norm(x, axis=1)
    rho = exact_noh_density(x, t)
    inside = r < t / 3.0
    with np.errstate(invalid="ignore", divide="ignore"):
        vel = np.where(r[:, None] > 0, -x / r[:, None], 0.0)
    vel[inside] = 0.0
    p = np.where(inside, 16.0 / 3.0, p0 * (rho / 1.0) ** gamma)
    return rho, vel, p


# ---------------------------------------------------------------------------
# Error norms
# ---------------------------------------------------------------------------


def error_norms(mesh: Mesh, u_h, exact_fn, order: int = 4, component: int = 0):
    """L1 and L2 norms of u_h - exact over the mesh, by cell quadrature.

    ``u_h`` holds nodal values (N,) or (N, m); ``exact_fn(x)`` returns values
    of the selected component at points x of shape (P, d).
    """
    u = np.asarray(u_h, dtype=float)
    if u.ndim == 2:
        u = u[:, component]
    quad = gauss_rule(mesh.kind, order)
    cd = cell_data(mesh, quad)
    vals = cd.values  # (Q, nf)
    X = mesh.points[mesh.cells]  # (K, nf, d)
    xq = np.einsum("qa,kad->kqd", vals, X)
    uq = np.einsum("qa,ka->kq", vals, u[mesh.topology.cell_dofs])
    ex = np.asarray(exact_fn(xq.reshape(-1, mesh.dim)), dtype=float).reshape(uq.shape)
    w = cd.det * quad.weights
    diff = uq - ex
    return float(np.sum(w * np.abs(diff))), float(math.sqrt(np.sum(w * diff**2)))


def convergence_rates(errors, ratios):
    """rate_k = log(e_{k-1} / e_k) / log(ratio_k); first entry is NaN."""
    errors = np.asarray(errors, dtype=float)
    ratios = np.broadcast_to(np.asarray(ratios, dtype=float), errors.shape)
    rates = np.full(errors.shape, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        rates[1:] = np.log(errors[:-1] / errors[1:]) / np.log(ratios[1:])
    return rates
