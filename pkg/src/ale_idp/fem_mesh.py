"""Reference elements, moving meshes, quadrature and stencil assembly.

The geometric and approximation spaces coincide (isoparametric P1/Q1), so a
mesh node is also a degree of freedom.  Periodic meshes keep duplicated
geometric nodes on the periodic faces and map them onto a single dof through
``Mesh.dof_of_node``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from . import _kernels
from .errors import AssemblyError, MeshInvalidError, PeriodicPairingError

SEGMENT = "P1-segment"
TRIANGLE = "P1-triangle"
QUAD = "Q1-quadrilateral"
KINDS = (SEGMENT, TRIANGLE, QUAD)

_ALIASES = {
    "p1-segment": SEGMENT,
    "segment": SEGMENT,
    "p1-triangle": TRIANGLE,
    "triangle": TRIANGLE,
    "q1-quadrilateral": QUAD,
    "quadrilateral": QUAD,
    "quad": QUAD,
    "q1": QUAD,
}


def normalize_kind(kind: str, dim: Optional[int] = None) -> str:
    """Map user spellings (``p1``, ``q1``, ``P1-triangle``...) to a canonical kind."""
    key = str(kind).strip().lower()
    if key == "p1":
        if dim is None:
            raise ValueError("'p1' is ambiguous without a dimension")
        return SEGMENT if dim == 1 else TRIANGLE
    if key in _ALIASES:
        return _ALIASES[key]
    raise ValueError(f"unsupported element kind {kind!r}")


# ---------------------------------------------------------------------------
# Reference elements
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReferenceElement:
    """Lagrange element on a reference cell.

    Reference cells are [0, 1] (segment), the unit right triangle and the
    unit square; local nodes are numbered counter-clockwise.
    """

    kind: str
    dim: int
    nodes: np.ndarray
    volume: float
    facets: tuple

    @property
    def n_f(self) -> int:
        return self.nodes.shape[0]

    def values(self, xhat) -> np.ndarray:
        """Shape values at points ``xhat`` of shape (Q, dim); returns (Q, n_f)."""
        x = np.atleast_2d(np.asarray(xhat, dtype=float))
        if self.kind == SEGMENT:
            s = x[:, 0]
            return np.stack([1.0 - s, s], axis=-1)
        if self.kind == TRIANGLE:
            s, r = x[:, 0], x[:, 1]
            return np.stack([1.0 - s - r, s, r], axis=-1)
        s, r = x[:, 0], x[:, 1]
        return np.stack(
            [(1 - s) * (1 - r), s * (1 - r), s * r, (1 - s) * r], axis=-1
        )

    def gradients(self, xhat) -> np.ndarray:
        """Reference gradients at ``xhat``; returns (Q, n_f, dim)."""
        x = np.atleast_2d(np.asarray(xhat, dtype=float))
        q = x.shape[0]
        if self.kind == SEGMENT:
            g = np.empty((q, 2, 1))
            g[:, 0, 0] = -1.0
            g[:, 1, 0] = 1.0
            return g
        if self.kind == TRIANGLE:
            g = np.empty((q, 3, 2))
            g[:, 0] = (-1.0, -1.0)
            g[:, 1] = (1.0, 0.0)
            g[:, 2] = (0.0, 1.0)
            return g
        s, r = x[:, 0], x[:, 1]
        g = np.empty((q, 4, 2))
        g[:, 0, 0], g[:, 0, 1] = -(1 - r), -(1 - s)
        g[:, 1, 0], g[:, 1, 1] = (1 - r), -s
        g[:, 2, 0], g[:, 2, 1] = r, s
        g[:, 3, 0], g[:, 3, 1] = -r, (1 - s)
        return g

    def shape_value(self, i: int, xhat) -> float:
        return float(self.values(np.reshape(xhat, (1, self.dim)))[0, i])

    def shape_gradient(self, i: int, xhat) -> np.ndarray:
        return self.gradients(np.reshape(xhat, (1, self.dim)))[0, i].copy()

    def contains(self, xhat, tol: float = 1e-12) -> np.ndarray:
        x = np.atleast_2d(np.asarray(xhat, dtype=float))
        inside = np.all(x >= -tol, axis=1) & np.all(x <= 1 + tol, axis=1)
        if self.kind == TRIANGLE:
            inside &= x.sum(axis=1) <= 1 + tol
        return inside


def build_reference_element(kind: str) -> ReferenceElement:
    kind = normalize_kind(kind, dim=2 if str(kind).lower() == "p1" else None)
    if kind == SEGMENT:
        return ReferenceElement(SEGMENT, 1, np.array([[0.0], [1.0]]), 1.0, ((0,), (1,)))
    if kind == TRIANGLE:
        return ReferenceElement(
            TRIANGLE,
            2,
            np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
            0.5,
            ((0, 1), (1, 2), (2, 0)),
        )
    return ReferenceElement(
        QUAD,
        2,
        np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
        1.0,
        ((0, 1), (1, 2), (2, 3), (3, 0)),
    )


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    """Spatial rule on the reference cell plus a temporal rule on [0, 1]."""

    points: np.ndarray
    weights: np.ndarray
    time_points: np.ndarray = field(default_factory=lambda: np.array([0.5]))
    time_weights: np.ndarray = field(default_factory=lambda: np.array([1.0]))


def _gauss01(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def gauss_rule(kind: str, n: int) -> QuadratureRule:
    """Tensor Gauss rule with ``n`` points per direction (collapsed on triangles)."""
    x, w = _gauss01(n)
    if kind == SEGMENT:
        return QuadratureRule(x[:, None], w)
    X, Y = np.meshgrid(x, x, indexing="ij")
    WX, WY = np.meshgrid(w, w, indexing="ij")
    if kind == QUAD:
        pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
        return QuadratureRule(pts, (WX * WY).ravel())
    # Duffy collapse of the square onto the triangle.
    s = X.ravel()
    r = Y.ravel() * (1.0 - s)
    return QuadratureRule(np.stack([s, r], axis=-1), (WX * WY).ravel() * (1.0 - s))


def default_quadrature(kind: str) -> QuadratureRule:
    """2-point Gauss (segment), 3-point degree-2 rule (triangle), 2x2 Gauss (quad)."""
    if kind == TRIANGLE:
        pts = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
        return QuadratureRule(pts, np.full(3, 1 / 6))
    return gauss_rule(kind, 2)


# ---------------------------------------------------------------------------
# Topology (time independent) and meshes
# ---------------------------------------------------------------------------


class Topology:
    """Dof connectivity and the sparse pair pattern of a mesh.

    Built once; every moved copy of a mesh shares it.
    """

    def __init__(self, cell_dofs: np.ndarray, n_dofs: int, element: ReferenceElement):
        self.cell_dofs = np.ascontiguousarray(cell_dofs, dtype=np.int64)
        self.n_dofs = int(n_dofs)
        K, nf = self.cell_dofs.shape
        N = self.n_dofs

        a = np.repeat(self.cell_dofs, nf, axis=1).ravel()
        b = np.tile(self.cell_dofs, (1, nf)).ravel()
        keys = a * N + b
        uniq, inverse = np.unique(keys, return_inverse=True)
        self.rows = uniq // N
        self.cols = uniq % N
        self.nnz = uniq.size
        self.scatter = np.ascontiguousarray(inverse.reshape(K, nf, nf), dtype=np.int64)
        self.indptr = np.searchsorted(self.rows, np.arange(N + 1))
        if np.any(np.diff(self.indptr) == 0):
            raise AssemblyError("mesh has dofs that belong to no cell")
        self.diag = np.searchsorted(uniq, np.arange(N) * N + np.arange(N))
        self.transpose = np.searchsorted(uniq, self.cols * N + self.rows)
        self.offdiag = self.rows != self.cols

        # Boundary dofs: facets owned by a single cell.
        fac = np.concatenate([self.cell_dofs[:, list(f)] for f in element.facets])
        fac_sorted = np.sort(fac, axis=1)
        _, inv, counts = np.unique(fac_sorted, axis=0, return_inverse=True, return_counts=True)
        inv = np.asarray(inv).ravel()
        on_boundary = counts[inv] == 1
        self.boundary_mask = np.zeros(N, dtype=bool)
        self.boundary_mask[fac[on_boundary].ravel()] = True
        self.interior_pair = ~(self.boundary_mask[self.rows] | self.boundary_mask[self.cols])
        self.interior_idx = np.where(self.interior_pair & self.offdiag)[0]
        self.offdiag_idx = np.where(self.offdiag)[0]
        # Antisymmetric pairs share one Riemann problem up to reflection: the
        # "primary" orientation is solved, the "mirror" one is reflected.
        primary = self.offdiag & ((self.rows < self.cols) | ~self.interior_pair)
        self.primary_idx = np.where(primary)[0]
        self.mirror_idx = np.where(self.offdiag & ~primary)[0]

        # Padded dof -> cells table; the padding points at a dummy cell K.
        flat = self.cell_dofs.ravel()
        order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=N)
        width = int(counts.max())
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        slot = np.arange(flat.size) - np.repeat(starts, counts)
        self.dof_cells = np.full((N, width), K, dtype=np.int64)
        self.dof_cells[flat[order], slot] = order // nf

        # Off-diagonal pairs where both dofs are distinct inside a cell; used for kappa.
        la = np.repeat(np.arange(nf), nf)
        lb = np.tile(np.arange(nf), nf)
        mask = la != lb
        self._kappa_a = la[mask]
        self._kappa_b = lb[mask]

    def csr(self, data):
        """CSR matrix with the given per-pair values on this pattern."""
        from scipy.sparse import csr_matrix

        return csr_matrix(
            (np.asarray(data, dtype=float), self.cols, self.indptr),
            shape=(self.n_dofs, self.n_dofs),
        )

    @property
    def card(self) -> np.ndarray:
        """card(I(S_i)) for every dof (pattern row lengths, diagonal included)."""
        return np.diff(self.indptr)

    def neighbor_matrix(self):
        """Row-normalised averaging operator over I(S_i) minus i (sparse)."""
        from scipy.sparse import csr_matrix

        if getattr(self, "_neighbors", None) is None:
            off = self.offdiag
            counts = np.bincount(self.rows[off], minlength=self.n_dofs).astype(float)
            data = 1.0 / counts[self.rows[off]]
            self._neighbors = csr_matrix(
                (data, (self.rows[off], self.cols[off])), shape=(self.n_dofs, self.n_dofs)
            )
        return self._neighbors


@dataclass(eq=False)
class Mesh:
    """Time-stamped node coordinates on top of a fixed connectivity."""

    points: np.ndarray
    cells: np.ndarray
    element: ReferenceElement
    dof_of_node: np.ndarray
    boundary: Dict[str, np.ndarray] = field(default_factory=dict)
    t: float = 0.0
    periodic_shift: Optional[np.ndarray] = None
    _topology: Optional[Topology] = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def kind(self) -> str:
        return self.element.kind

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_dofs(self) -> int:
        return self.topology.n_dofs

    @property
    def periodic(self) -> bool:
        return self.dof_of_node.max() + 1 < self.points.shape[0]

    @property
    def topology(self) -> Topology:
        if self._topology is None:
            n = int(self.dof_of_node.max()) + 1
            self._topology = Topology(self.dof_of_node[self.cells], n, self.element)
        return self._topology

    @property
    def node_of_dof(self) -> np.ndarray:
        """Representative geometric node (lowest index) of every dof."""
        top = self.topology
        rep = getattr(top, "_node_of_dof", None)
        if rep is None:
            rep = np.full(top.n_dofs, self.points.shape[0], dtype=np.int64)
            np.minimum.at(rep, self.dof_of_node, np.arange(self.points.shape[0]))
            top._node_of_dof = rep
        return rep

    @property
    def dof_points(self) -> np.ndarray:
        return self.points[self.node_of_dof]

    def cell_coordinates(self, points=None) -> np.ndarray:
        pts = self.points if points is None else points
        return pts[self.cells]

    def with_points(self, points, t=None) -> "Mesh":
        return dataclasses.replace(
            self,
            points=np.asarray(points, dtype=float),
            t=self.t if t is None else t,
            _topology=self.topology,
        )

    def moved(self, W, dt: float, t=None) -> "Mesh":
        """Nodes displaced by ``dt * W`` (W given per dof)."""
        W = np.asarray(W, dtype=float).reshape(-1, self.dim)
        return self.with_points(self.points + dt * W[self.dof_of_node], t=t)

    def volume(self) -> float:
        return float(exact_masses(self).sum())


# ---------------------------------------------------------------------------
# Mesh generators and file IO
# ---------------------------------------------------------------------------


def _identify_periodic(points, dof_of_node, axis, lo, hi, tol=1e-10):
    """Map nodes on face ``x[axis] = hi`` onto matching nodes at ``lo``."""
    span = hi - lo
    on_lo = np.where(np.abs(points[:, axis] - lo) <= tol * max(1.0, abs(span)))[0]
    on_hi = np.where(np.abs(points[:, axis] - hi) <= tol * max(1.0, abs(span)))[0]
    if on_lo.size != on_hi.size:
        raise PeriodicPairingError(
            f"axis {axis}: {on_lo.size} nodes at lower face, {on_hi.size} at upper face"
        )
    other = [k for k in range(points.shape[1]) if k != axis]
    if other:
        key_lo = points[on_lo][:, other]
        key_hi = points[on_hi][:, other]
        ord_lo = np.lexsort(key_lo.T[::-1])
        ord_hi = np.lexsort(key_hi.T[::-1])
        if not np.allclose(key_lo[ord_lo], key_hi[ord_hi], atol=tol * max(1.0, abs(span))):
            raise PeriodicPairingError(f"axis {axis}: face coordinates do not match")
        on_lo, on_hi = on_lo[ord_lo], on_hi[ord_hi]
    dof = dof_of_node.copy()
    dof[on_hi] = dof[on_lo]
    return dof


def _compress(dof_of_node):
    # Resolve chains (corner nodes identified twice) then renumber densely.
    dof = dof_of_node.copy()
    while True:
        nxt = dof[dof]
        if np.array_equal(nxt, dof):
            break
        dof = nxt
    _, dense = np.unique(dof, return_inverse=True)
    return dense.ravel()


def interval_mesh(n: int, a: float = 0.0, b: float = 1.0, periodic: bool = False) -> Mesh:
    pts = np.linspace(a, b, n + 1)[:, None]
    cells = np.stack([np.arange(n), np.arange(1, n + 1)], axis=-1)
    return _finish(pts, cells, SEGMENT, (periodic,), {"left": [0], "right": [n]}, ((a, b),))


def tensor_mesh(xs, ys, kind: str = QUAD, periodic=(False, False)) -> Mesh:
    """Structured mesh on the tensor grid ``xs`` x ``ys``.

    Triangles come from splitting every quadrilateral along its SW-NE diagonal.
    """
    kind = normalize_kind(kind, dim=2)
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    nx, ny = xs.size - 1, ys.size - 1
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=-1)

    def nid(i, j):
        return i * (ny + 1) + j

    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    I, J = I.ravel(), J.ravel()
    sw, se, ne, nw = nid(I, J), nid(I + 1, J), nid(I + 1, J + 1), nid(I, J + 1)
    if kind == QUAD:
        cells = np.stack([sw, se, ne, nw], axis=-1)
    else:
        t1 = np.stack([sw, se, ne], axis=-1)
        t2 = np.stack([sw, ne, nw], axis=-1)
        cells = np.stack([t1, t2], axis=1).reshape(-1, 3)
    ar = np.arange
    tags = {
        "left": nid(0, ar(ny + 1)),
        "right": nid(nx, ar(ny + 1)),
        "bottom": nid(ar(nx + 1), 0),
        "top": nid(ar(nx + 1), ny),
    }
    bounds = ((xs[0], xs[-1]), (ys[0], ys[-1]))
    return _finish(pts, cells, kind, tuple(periodic), tags, bounds)


def rectangle_mesh(nx, ny, box=(0.0, 1.0, 0.0, 1.0), kind=QUAD, periodic=(False, False)) -> Mesh:
    x0, x1, y0, y1 = box
    return tensor_mesh(np.linspace(x0, x1, nx + 1), np.linspace(y0, y1, ny + 1), kind, periodic)


def _finish(pts, cells, kind, periodic, tags, bounds) -> Mesh:
    dof = np.arange(pts.shape[0])
    shift = np.zeros(pts.shape[1])
    drop = set()
    for axis, per in enumerate(periodic):
        if per:
            lo, hi = bounds[axis]
            dof = _identify_periodic(pts, dof, axis, lo, hi)
            shift[axis] = hi - lo
            names = ("left", "right") if axis == 0 else ("bottom", "top")
            drop.update(names)
    dof = _compress(dof)
    boundary = {k: np.unique(dof[np.asarray(v)]) for k, v in tags.items() if k not in drop}
    mesh = Mesh(
        points=np.asarray(pts, dtype=float),
        cells=np.asarray(cells, dtype=np.int64),
        element=build_reference_element(kind),
        dof_of_node=dof,
        boundary=boundary,
        periodic_shift=shift if any(periodic) else None,
    )
    validate_mesh(mesh)
    return mesh


def read_mesh_file(path) -> Mesh:
    """Plain-text mesh: ``dim nnodes ncells kind`` header, node lines, 1-based cell lines."""
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    dim, nn, nc = (int(v) for v in lines[0][:3])
    kind = normalize_kind(lines[0][3], dim=dim)
    pts = np.array([[float(v) for v in ln[:dim]] for ln in lines[1 : 1 + nn]])
    cells = np.array([[int(v) - 1 for v in ln] for ln in lines[1 + nn : 1 + nn + nc]])
    elem = build_reference_element(kind)
    if pts.shape != (nn, dim) or cells.shape != (nc, elem.n_f):
        raise ValueError(f"{path}: malformed mesh file")
    mesh = Mesh(pts, cells, elem, np.arange(nn))
    mesh.boundary = {"boundary": np.where(mesh.topology.boundary_mask)[0]}
    validate_mesh(mesh)
    return mesh


def write_mesh_file(mesh: Mesh, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{mesh.dim} {mesh.points.shape[0]} {mesh.n_cells} {mesh.kind}\n")
        for p in mesh.points:
            fh.write(" ".join(repr(float(v)) for v in p) + "\n")
        for c in mesh.cells:
            fh.write(" ".join(str(int(v) + 1) for v in c) + "\n")


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


def row_norms(v) -> np.ndarray:
    """Euclidean norm of every row of a 2D array."""
    return np.sqrt(np.einsum("ij,ij->i", v, v))


def _det_inv(J):
    d = J.shape[-1]
    if d == 1:
        det = J[..., 0, 0]
        inv = 1.0 / J
        return det, inv
    a, b, c, e = J[..., 0, 0], J[..., 0, 1], J[..., 1, 0], J[..., 1, 1]
    det = a * e - b * c
    inv = np.empty_like(J)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv[..., 0, 0] = e / det
        inv[..., 0, 1] = -b / det
        inv[..., 1, 0] = -c / det
        inv[..., 1, 1] = a / det
    return det, inv


def geometric_map(mesh: Mesh, cell: int, xhat):
    """Image x = T_K(xhat) and Jacobian dx/dxhat of one cell."""
    xhat = np.reshape(np.asarray(xhat, dtype=float), (1, mesh.dim))
    X = mesh.points[mesh.cells[cell]]
    theta = mesh.element.values(xhat)[0]
    grad = mesh.element.gradients(xhat)[0]
    return theta @ X, X.T @ grad


def jacobians(mesh: Mesh, quad: QuadratureRule, points=None):
    """Jacobian matrices (K, Q, d, d) and determinants (K, Q) at quadrature points."""
    X = mesh.cell_coordinates(points)
    G = mesh.element.gradients(quad.points)
    # J[k, q] = X[k]^T G[q]; tensordot goes through BLAS.
    J = np.tensordot(X, G, axes=([1], [1])).transpose(0, 2, 1, 3)
    det, inv = _det_inv(J)
    return J, det, inv


def determinants(mesh: Mesh, quad: QuadratureRule, points=None) -> np.ndarray:
    """det J (K, Q) at the quadrature points, without forming the Jacobians."""
    X = np.ascontiguousarray(mesh.cell_coordinates(points))
    G = np.ascontiguousarray(mesh.element.gradients(quad.points))
    return _kernels.cell_determinants(X, G)


def validate_mesh(mesh: Mesh, quad: Optional[QuadratureRule] = None, points=None) -> None:
    quad = quad or default_quadrature(mesh.kind)
    det = determinants(mesh, quad, points)
    bad = np.where(~(det > 0).all(axis=1))[0]
    if bad.size:
        raise MeshInvalidError(f"{bad.size} cells with det J <= 0", cells=bad)


@dataclass
class CellData:
    det: np.ndarray        # (K, Q)
    values: np.ndarray     # (Q, n_f)
    grads: np.ndarray      # (K, Q, n_f, d) physical gradients
    local_mass: np.ndarray  # (K, n_f)


def cell_data(mesh: Mesh, quad: QuadratureRule, points=None, check=True) -> CellData:
    _, det, inv = jacobians(mesh, quad, points)
    if check and not (det > 0).all():
        bad = np.where(~(det > 0).all(axis=1))[0]
        raise MeshInvalidError(f"{bad.size} cells with det J <= 0", cells=bad)
    vals = mesh.element.values(quad.points)
    G = mesh.element.gradients(quad.points)
    # grads[k, q, b, :] = G[q, b, :] @ inv[k, q]
    dim = G.shape[-1]
    grads = G[None, :, :, 0, None] * inv[:, :, None, 0, :]
    for e in range(1, dim):
        grads += G[None, :, :, e, None] * inv[:, :, None, e, :]
    wdet = det * quad.weights
    local_mass = wdet @ vals
    return CellData(det, vals, grads, local_mass)


# ---------------------------------------------------------------------------
# Stencil assembly
# ---------------------------------------------------------------------------


@dataclass
class StencilField:
    """Per-pair c_ij on the sparse pattern plus per-dof m_i, h_min_i, kappa_i."""

    topology: Topology
    c: np.ndarray            # (nnz, d)
    mass: np.ndarray         # (N,)
    h_min: np.ndarray        # (N,)
    kappa: np.ndarray        # (N,)
    antisymmetry_defect: float = 0.0
    _matrices: Optional[list] = field(default=None, repr=False)
    _norm: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def norm(self) -> np.ndarray:
        if self._norm is None:
            self._norm = row_norms(self.c)
        return self._norm

    def row_sum_defect(self) -> float:
        s = np.add.reduceat(self.c, self.topology.indptr[:-1], axis=0)
        return float(np.abs(s).max())

    def matrices(self):
        """One CSR matrix per spatial component, rows i and columns j."""
        if self._matrices is None:
            self._matrices = [self.topology.csr(self.c[:, k]) for k in range(self.c.shape[1])]
        return self._matrices

    def apply(self, G) -> np.ndarray:
        """sum_j G_j . c_ij for G of shape (N, m, d); returns (N, m)."""
        G = np.asarray(G, dtype=float)
        out = np.zeros(G.shape[:2])
        for k, Ck in enumerate(self.matrices()):
            out += Ck @ G[:, :, k]
        return out


def _assemble_raw(mesh: Mesh, quad: QuadratureRule, points=None):
    top = mesh.topology
    X = np.ascontiguousarray(mesh.cell_coordinates(points))
    vals = np.ascontiguousarray(mesh.element.values(quad.points))
    G = np.ascontiguousarray(mesh.element.gradients(quad.points))
    c, mass, hinv, shared, n_bad = _kernels.assemble(
        X, vals, G, np.asarray(quad.weights, dtype=float), top.scatter, top.cell_dofs, top.nnz, top.n_dofs
    )
    if n_bad:
        det = _kernels.cell_determinants(X, G)
        bad = np.where(~(det > 0).all(axis=1))[0]
        raise MeshInvalidError(f"{bad.size} cells with det J <= 0", cells=bad)
    if not (mass > 0).all():
        raise AssemblyError("non-positive lumped mass")
    return c, mass, hinv, shared


def _symmetrize(top: Topology, c: np.ndarray):
    idx = top.interior_idx
    if idx.size == 0:
        return c, 0.0
    out, worst = _kernels.symmetrize(np.ascontiguousarray(c), idx, top.transpose)
    return out, float(worst)


def assemble_stencil(mesh: Mesh, quadrature: Optional[QuadratureRule] = None,
                     symmetrize: bool = True) -> StencilField:
    """Assemble c_ij, lumped masses, h_min and kappa on the current mesh."""
    quad = quadrature or default_quadrature(mesh.kind)
    top = mesh.topology
    c, mass, hinv, shared = _assemble_raw(mesh, quad)
    defect = 0.0
    if symmetrize:
        c, defect = _symmetrize(top, c)
    return StencilField(top, c, mass, 1.0 / hinv, shared / mass, defect)


def temporal_stencil(mesh: Mesh, W, dt: float, quadrature: Optional[QuadratureRule] = None,
                     symmetrize: bool = True) -> StencilField:
    """Time-averaged c_ij over the intermediate meshes a + dt*zeta_l*W.

    ``mass`` of the returned field is the averaged mass sum_l omega_l m_i(t_l),
    which is what the version-2 CFL condition compares against m_i^{n+1}.
    """
    quad = quadrature or default_quadrature(mesh.kind)
    top = mesh.topology
    W = np.asarray(W, dtype=float).reshape(-1, mesh.dim)
    c_acc = np.zeros((top.nnz, mesh.dim))
    mass_acc = np.zeros(top.n_dofs)
    shared_acc = np.zeros(top.n_dofs)
    hinv = np.zeros(top.n_dofs)
    for zeta, omega in zip(quad.time_points, quad.time_weights):
        pts = mesh.points + dt * zeta * W[mesh.dof_of_node]
        try:
            c, mass, hi, shared = _assemble_raw(mesh, quad, pts)
        except MeshInvalidError as exc:
            raise MeshInvalidError(
                f"intermediate mesh at zeta={zeta:g} is inverted", cells=exc.cells
            ) from exc
        c_acc += omega * c
        mass_acc += omega * mass
        shared_acc += omega * shared
        hinv = np.maximum(hinv, hi)
    defect = 0.0
    if symmetrize:
        c_acc, defect = _symmetrize(top, c_acc)
    return StencilField(top, c_acc, mass_acc, 1.0 / hinv, shared_acc / mass_acc, defect)


def exact_masses(mesh: Mesh, quadrature: Optional[QuadratureRule] = None, points=None) -> np.ndarray:
    """m_i = integral of psi_i over the mesh."""
    quad = quadrature or default_quadrature(mesh.kind)
    cd = cell_data(mesh, quad, points)
    top = mesh.topology
    mass = np.bincount(top.cell_dofs.ravel(), weights=cd.local_mass.ravel(), minlength=top.n_dofs)
    if not (mass > 0).all():
        raise AssemblyError("non-positive lumped mass")
    return mass


def divergence_at_quadrature(mesh: Mesh, W, quad: QuadratureRule, points=None) -> np.ndarray:
    """div of the interpolant sum_i W_i psi_i at every (cell, quadrature point)."""
    W = np.asarray(W, dtype=float).reshape(-1, mesh.dim)
    cd = cell_data(mesh, quad, points)
    Wc = W[mesh.topology.cell_dofs]  # (K, nf, d)
    return np.einsum("kqbd,kbd->kq", cd.grads, Wc)


def liouville_residual(mesh: Mesh, node_velocities_W, dt_probe: float,
                       quadrature: Optional[QuadratureRule] = None) -> float:
    """Forward-difference check of d/dt det J = (div v) det J at t = 0.

    Jacobians are taken relative to the current mesh, so det J(0) = 1.
    """
    quad = quadrature or default_quadrature(mesh.kind)
    W = np.asarray(node_velocities_W, dtype=float).reshape(-1, mesh.dim)
    _, det0, _ = jacobians(mesh, quad)
    moved = mesh.points + dt_probe * W[mesh.dof_of_node]
    _, det1, _ = jacobians(mesh, quad, moved)
    if not ((det0 > 0).all() and (det1 > 0).all()):
        raise MeshInvalidError("probe mesh is inverted")
    fd = (det1 / det0 - 1.0) / dt_probe
    div = divergence_at_quadrature(mesh, W, quad)
    return float(np.abs(fd - div).max())
