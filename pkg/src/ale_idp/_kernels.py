"""Compiled inner loops (numba) for assembly and per-pair Riemann solves.

The public functions of :mod:`fem_mesh` and :mod:`systems` call into these
kernels; they hold no state and take plain arrays only.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _jacobian(X, G, k, q, J):
    nf, d = G.shape[1], G.shape[2]
    for r in range(d):
        for s in range(d):
            acc = 0.0
            for a in range(nf):
                acc += X[k, a, r] * G[q, a, s]
            J[r, s] = acc


@njit(cache=True)
def _det_and_inverse(J, inv):
    d = J.shape[0]
    if d == 1:
        det = J[0, 0]
        inv[0, 0] = 1.0 / det if det != 0.0 else np.inf
        return det
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    if det != 0.0:
        inv[0, 0] = J[1, 1] / det
        inv[0, 1] = -J[0, 1] / det
        inv[1, 0] = -J[1, 0] / det
        inv[1, 1] = J[0, 0] / det
    return det


@njit(cache=True)
def cell_determinants(X, G):
    """det J at every (cell, quadrature point); X is (K, nf, d), G is (Q, nf, d)."""
    K, Q, d = X.shape[0], G.shape[0], G.shape[2]
    out = np.empty((K, Q))
    J = np.empty((d, d))
    inv = np.empty((d, d))
    for k in range(K):
        for q in range(Q):
            _jacobian(X, G, k, q, J)
            out[k, q] = _det_and_inverse(J, inv)
    return out


@njit(cache=True)
def assemble(X, vals, G, w, scatter, cell_dofs, nnz, N):
    """c_ij, lumped masses, 1/h_min and sum_{j != i} int_{S_ij} psi_i.

    Returns ``(c, mass, hinv, shared, n_bad)``; ``n_bad`` counts cells with a
    non-positive Jacobian determinant at some quadrature point (the other
    outputs are then meaningless).
    """
    K, nf, d = X.shape
    Q = G.shape[0]
    c = np.zeros((nnz, d))
    mass = np.zeros(N)
    hinv = np.zeros(N)
    shared = np.zeros(N)
    J = np.empty((d, d))
    inv = np.empty((d, d))
    grad = np.empty((nf, d))
    local = np.empty(nf)
    n_bad = 0
    for k in range(K):
        local[:] = 0.0
        gmax = 0.0
        bad = False
        for q in range(Q):
            if d == 2:
                # Unrolled planar case.
                a00 = a01 = a10 = a11 = 0.0
                for a in range(nf):
                    g0 = G[q, a, 0]
                    g1 = G[q, a, 1]
                    a00 += X[k, a, 0] * g0
                    a01 += X[k, a, 0] * g1
                    a10 += X[k, a, 1] * g0
                    a11 += X[k, a, 1] * g1
                det = a00 * a11 - a01 * a10
                if not det > 0.0:
                    bad = True
                    break
                i00 = a11 / det
                i01 = -a01 / det
                i10 = -a10 / det
                i11 = a00 / det
                for b in range(nf):
                    g0 = G[q, b, 0]
                    g1 = G[q, b, 1]
                    x0 = g0 * i00 + g1 * i10
                    x1 = g0 * i01 + g1 * i11
                    grad[b, 0] = x0
                    grad[b, 1] = x1
                    g2 = x0 * x0 + x1 * x1
                    if g2 > gmax:
                        gmax = g2
            else:
                _jacobian(X, G, k, q, J)
                det = _det_and_inverse(J, inv)
                if not det > 0.0:
                    bad = True
                    break
                for b in range(nf):
                    g2 = 0.0
                    for s in range(d):
                        acc = 0.0
                        for r in range(d):
                            acc += G[q, b, r] * inv[r, s]
                        grad[b, s] = acc
                        g2 += acc * acc
                    if g2 > gmax:
                        gmax = g2
            wd = w[q] * det
            for a in range(nf):
                wa = wd * vals[q, a]
                local[a] += wa
                for b in range(nf):
                    e = scatter[k, a, b]
                    for s in range(d):
                        c[e, s] += wa * grad[b, s]
        if bad:
            n_bad += 1
            continue
        gmax = math.sqrt(gmax)
        for a in range(nf):
            i = cell_dofs[k, a]
            mass[i] += local[a]
            if gmax > hinv[i]:
                hinv[i] = gmax
            # psi_i restricted to this cell counts once per distinct partner dof
            for b in range(nf):
                if b != a and cell_dofs[k, b] != i:
                    shared[i] += local[a]
    return c, mass, hinv, shared, n_bad


# ---------------------------------------------------------------------------
# Euler Riemann problem
# ---------------------------------------------------------------------------


@njit(cache=True)
def _pressure_function(p, rho, pk, ck, gamma):
    if p > pk:
        A = 2.0 / ((gamma + 1.0) * rho)
        B = (gamma - 1.0) / (gamma + 1.0) * pk
        s = math.sqrt(A / (p + B))
        return (p - pk) * s, s * (1.0 - 0.5 * (p - pk) / (p + B))
    e = (gamma - 1.0) / (2.0 * gamma)
    ratio = p / pk
    f = 2.0 * ck / (gamma - 1.0) * (ratio**e - 1.0)
    df = ratio ** (-(gamma + 1.0) / (2.0 * gamma)) / (rho * ck)
    return f, df


@njit(cache=True)
def star_pressure_one(rL, uL, pL, rR, uR, pR, gamma, tol, max_iter):
    """Certified upper bound of the star pressure; returns (p, status).

    status is 0 (converged), 1 (vacuum) or 2 (Newton failed, the
    two-rarefaction value is returned).
    """
    cL = math.sqrt(gamma * pL / rL)
    cR = math.sqrt(gamma * pR / rR)
    du = uR - uL
    if 2.0 * (cL + cR) / (gamma - 1.0) <= du:
        return 0.0, 1
    e = (gamma - 1.0) / (2.0 * gamma)
    num = max(cL + cR - 0.5 * (gamma - 1.0) * du, 0.0)
    # Two-rarefaction pressure: exact for two rarefactions, an upper bound otherwise.
    p_tr = (num / (cL / pL**e + cR / pR**e)) ** (1.0 / e)
    if not p_tr > 0.0:
        return 0.0, 1
    if p_tr <= min(pL, pR):
        # Both waves are rarefactions, for which the two-rarefaction pressure
        # is the exact root; only the round-off lift below is needed.
        p = p_tr
    else:
        p = _newton(p_tr, rL, pL, cL, rR, pR, cR, du, gamma, tol, max_iter)
        if p < 0.0:
            return p_tr, 2
    # Lift p until the increasing pressure function is non-negative, which
    # certifies an upper bound of p* despite round-off.
    rel = 64.0 * max(tol, 2.220446049250313e-16)
    for _ in range(60):
        lifted = p * (1.0 + rel)
        fL, _ = _pressure_function(lifted, rL, pL, cL, gamma)
        fR, _ = _pressure_function(lifted, rR, pR, cR, gamma)
        if fL + fR + du >= 0.0:
            return lifted, 0
        rel *= 4.0
    return lifted, 2


@njit(cache=True)
def _newton(p, rL, pL, cL, rR, pR, cR, du, gamma, tol, max_iter):
    """Newton iteration for the star pressure from ``p``; -1 on failure."""
    for _ in range(max_iter):
        fL, dL = _pressure_function(p, rL, pL, cL, gamma)
        fR, dR = _pressure_function(p, rR, pR, cR, gamma)
        new = p - (fL + fR + du) / (dL + dR)
        # Concave increasing function: iterates after the first stay below p*;
        # the clamp keeps them positive.
        new = max(new, max(1e-3 * p, 1e-300))
        if abs(new - p) <= tol * max(new, 1e-300):
            return new
        p = new
    return -1.0


@njit(cache=True)
def star_pressure_many(rL, uL, pL, rR, uR, pR, gamma, tol, max_iter):
    n = rL.size
    p = np.empty(n)
    status = np.empty(n, dtype=np.int64)
    for e in range(n):
        p[e], status[e] = star_pressure_one(rL[e], uL[e], pL[e], rR[e], uR[e], pR[e], gamma, tol, max_iter)
    return p, status


@njit(cache=True)
def _euler_fan(rL, uL, pL, cL, peL, rR, uR, pR, cR, peR, gamma, tol, max_iter):
    """Fan speeds from primitive data; ``pe`` is p**((gamma-1)/(2 gamma))."""
    du = uR - uL
    if 2.0 * (cL + cR) / (gamma - 1.0) <= du:
        return uL - cL, uR + cR, 1  # vacuum: both heads are rarefaction heads
    if du == 0.0 and pL == pR:
        # p* = pL exactly: only a contact, the outer waves are sound waves.
        return uL - cL, uR + cR, 0
    e = (gamma - 1.0) / (2.0 * gamma)
    num = max(cL + cR - 0.5 * (gamma - 1.0) * du, 0.0)
    p_tr = (num / (cL / peL + cR / peR)) ** (1.0 / e)
    if p_tr <= min(pL, pR):
        # Two rarefactions: the heads move at u -/+ c whatever p* is.
        return uL - cL, uR + cR, 0
    ps = _newton(p_tr, rL, pL, cL, rR, pR, cR, du, gamma, tol, max_iter)
    st = 0
    if ps < 0.0:
        ps = p_tr
        st = 2
    else:
        rel = 64.0 * max(tol, 2.220446049250313e-16)
        for _ in range(60):
            lifted = ps * (1.0 + rel)
            fL, _ = _pressure_function(lifted, rL, pL, cL, gamma)
            fR, _ = _pressure_function(lifted, rR, pR, cR, gamma)
            if fL + fR + du >= 0.0:
                break
            rel *= 4.0
        ps = lifted
    k = (gamma + 1.0) / (2.0 * gamma)
    lamL = uL - cL * math.sqrt(1.0 + k * max(ps / pL - 1.0, 0.0))
    lamR = uR + cR * math.sqrt(1.0 + k * max(ps / pR - 1.0, 0.0))
    return lamL, lamR, st


@njit(cache=True)
def _primitive(U, i, n, gamma):
    d = n.shape[0]
    r = U[i, 0]
    un = 0.0
    kin = 0.0
    for s in range(d):
        v = U[i, 1 + s] / r
        un += v * n[s]
        kin += v * v
    return r, un, (gamma - 1.0) * (U[i, d + 1] - 0.5 * r * kin)


@njit(cache=True)
def euler_speeds(n, UL, UR, gamma, tol, max_iter):
    """Left/right fan speeds along unit normals n for conserved states (E, d+2)."""
    E = n.shape[0]
    lamL = np.empty(E)
    lamR = np.empty(E)
    status = np.empty(E, dtype=np.int64)
    e = (gamma - 1.0) / (2.0 * gamma)
    for k in range(E):
        rL, uL, pL = _primitive(UL, k, n[k], gamma)
        rR, uR, pR = _primitive(UR, k, n[k], gamma)
        cL = math.sqrt(gamma * pL / rL)
        cR = math.sqrt(gamma * pR / rR)
        lamL[k], lamR[k], status[k] = _euler_fan(
            rL, uL, pL, cL, pL**e, rR, uR, pR, cR, pR**e, gamma, tol, max_iter
        )
    return lamL, lamR, status


@njit(cache=True)
def euler_pair_speeds(U, rows, cols, idx, c, norm, gamma, tol, max_iter):
    """Fan speeds of pairs ``idx`` along c_ij / |c_ij| (zero vectors give zero speeds)."""
    N = U.shape[0]
    d = c.shape[1]
    ex = (gamma - 1.0) / (2.0 * gamma)
    rho = np.empty(N)
    vel = np.empty((N, d))
    p = np.empty(N)
    snd = np.empty(N)
    pe = np.empty(N)
    for i in range(N):
        r = U[i, 0]
        kin = 0.0
        for s in range(d):
            v = U[i, 1 + s] / r
            vel[i, s] = v
            kin += v * v
        rho[i] = r
        p[i] = (gamma - 1.0) * (U[i, d + 1] - 0.5 * r * kin)
        snd[i] = math.sqrt(gamma * p[i] / r)
        pe[i] = p[i] ** ex
    E = idx.size
    lamL = np.zeros(E)
    lamR = np.zeros(E)
    status = np.zeros(E, dtype=np.int64)
    for k in range(E):
        e = idx[k]
        ne = norm[e]
        if not ne > 0.0:
            continue
        i = rows[e]
        j = cols[e]
        uL = 0.0
        uR = 0.0
        for s in range(d):
            uL += vel[i, s] * c[e, s]
            uR += vel[j, s] * c[e, s]
        uL /= ne
        uR /= ne
        if rho[i] == rho[j] and p[i] == p[j] and uL == uR:
            lamL[k] = uL - snd[i]
            lamR[k] = uR + snd[j]
            continue
        lamL[k], lamR[k], status[k] = _euler_fan(
            rho[i], uL, p[i], snd[i], pe[i], rho[j], uR, p[j], snd[j], pe[j], gamma, tol, max_iter
        )
    return lamL, lamR, status


# ---------------------------------------------------------------------------
# Graph viscosity
# ---------------------------------------------------------------------------


@njit(cache=True)
def pair_viscosity(rows, cols, transpose, primary, mirror, indptr, c, norm, W, lamL_p, lamR_p):
    """d_ij with its shifted and Eulerian speeds from the primary-pair fan speeds.

    Mirror pairs reuse the reflected fan of their transpose: (lamL, lamR)
    becomes (-lamR, -lamL).  Returns ``(d, lam_shifted, lam_eulerian,
    n_nonfinite)``.
    """
    nnz, dim = c.shape
    lamL = np.zeros(nnz)
    lamR = np.zeros(nnz)
    for k in range(primary.size):
        e = primary[k]
        lamL[e] = lamL_p[k]
        lamR[e] = lamR_p[k]
    for k in range(mirror.size):
        e = mirror[k]
        t = transpose[e]
        lamL[e] = -lamR[t]
        lamR[e] = -lamL[t]
    lam_s = np.zeros(nnz)
    lam_e = np.zeros(nnz)
    n_bad = 0
    for e in range(nnz):
        i = rows[e]
        j = cols[e]
        if i == j:
            continue
        if not (math.isfinite(lamL[e]) and math.isfinite(lamR[e])):
            n_bad += 1
            continue
        ne = norm[e]
        if ne > 0.0:
            w_n = 0.0
            for s in range(dim):
                w_n += W[j, s] * c[e, s]
            w_n /= ne
            lam_s[e] = max(abs(lamL[e] - w_n), abs(lamR[e] - w_n))
            lam_e[e] = max(abs(lamL[e]), abs(lamR[e]))
    d = np.zeros(nnz)
    N = indptr.size - 1
    for i in range(N):
        total = 0.0
        diag = -1
        for e in range(indptr[i], indptr[i + 1]):
            if cols[e] == i:
                diag = e
                continue
            a = lam_s[e] * norm[e]
            b = lam_s[transpose[e]] * norm[transpose[e]]
            v = a if a > b else b
            d[e] = v
            total += v
        d[diag] = -total
    return d, lam_s, lam_e, n_bad


@njit(cache=True)
def determinant_ratios(X, D, G, zetas):
    """min over quadrature points of det J(X + zeta D) / |det J(X)|, per zeta and cell.

    Returns an array (len(zetas), K); cells are segments or planar cells.
    """
    K, nf, d = X.shape
    Q = G.shape[0]
    out = np.empty((zetas.size, K))
    for k in range(K):
        for z in range(zetas.size):
            out[z, k] = np.inf
        for q in range(Q):
            if d == 1:
                a00 = 0.0
                b00 = 0.0
                for a in range(nf):
                    a00 += X[k, a, 0] * G[q, a, 0]
                    b00 += D[k, a, 0] * G[q, a, 0]
                for z in range(zetas.size):
                    r = (a00 + zetas[z] * b00) / abs(a00)
                    if r < out[z, k]:
                        out[z, k] = r
                continue
            a00 = a01 = a10 = a11 = 0.0
            b00 = b01 = b10 = b11 = 0.0
            for a in range(nf):
                g0 = G[q, a, 0]
                g1 = G[q, a, 1]
                a00 += X[k, a, 0] * g0
                a01 += X[k, a, 0] * g1
                a10 += X[k, a, 1] * g0
                a11 += X[k, a, 1] * g1
                b00 += D[k, a, 0] * g0
                b01 += D[k, a, 0] * g1
                b10 += D[k, a, 1] * g0
                b11 += D[k, a, 1] * g1
            base = abs(a00 * a11 - a01 * a10)
            for z in range(zetas.size):
                t = zetas[z]
                r = ((a00 + t * b00) * (a11 + t * b11) - (a01 + t * b01) * (a10 + t * b10)) / base
                if r < out[z, k]:
                    out[z, k] = r
    return out


@njit(cache=True)
def symmetrize(c, idx, transpose):
    """Replace c_ij by (c_ij - c_ji)/2 on ``idx``; returns (c', max |c_ij + c_ji|)."""
    out = c.copy()
    worst = 0.0
    d = c.shape[1]
    for k in range(idx.size):
        e = idx[k]
        t = transpose[e]
        acc = 0.0
        for s in range(d):
            v = c[e, s] + c[t, s]
            acc += v * v
            out[e, s] = 0.5 * (c[e, s] - c[t, s])
        acc = math.sqrt(acc)
        if acc > worst:
            worst = acc
    return out, worst
