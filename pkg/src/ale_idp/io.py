"""Output writers: per-step CSV reports, convergence tables and VTK snapshots."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .fem_mesh import QUAD, SEGMENT, TRIANGLE, Mesh

REPORT_HEADER = ("step", "t", "dt", "reductions", "min_convexity", "conservation_defect", "entropy_max")
TABLE_HEADER = ("dofs", "L1", "L1_rate", "L2", "L2_rate")

# Legacy VTK cell type codes.
_VTK_TYPE = {SEGMENT: 3, TRIANGLE: 5, QUAD: 9}


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return f"{v:.10e}"


def write_reports(path, reports: Iterable) -> Path:
    """One CSV row per accepted time step."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_HEADER)
        for rep in reports:
            w.writerow([_fmt(v) for v in rep.row()])
    return path


def write_table(path, rows: Sequence) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_HEADER)
        for r in rows:
            w.writerow([r.dofs, _fmt(r.l1), _fmt(r.l1_rate), _fmt(r.l2), _fmt(r.l2_rate)])
    return path


def read_table(path):
    with Path(path).open() as fh:
        return [
            {k: (int(v) if k == "dofs" else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def format_table(rows: Sequence) -> str:
    """Plain-text rendering of a convergence table."""

    def rate(r):
        return "   -  " if math.isnan(r) else f"{r:6.2f}"

    lines = [f"{'dofs':>8}  {'L1':>10}  {'rate':>6}  {'L2':>10}  {'rate':>6}"]
    for r in rows:
        lines.append(f"{r.dofs:8d}  {r.l1:10.3e}  {rate(r.l1_rate)}  {r.l2:10.3e}  {rate(r.l2_rate)}")
    return "\n".join(lines)


def write_vtk(path, mesh: Mesh, fields: dict, title: str = "ale-idp") -> Path:
    """Legacy ASCII VTK unstructured grid with point data.

    ``fields`` maps names to nodal arrays indexed by dof, of shape (N,) for
    scalars or (N, d) for vectors (padded to three components).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pts = np.zeros((mesh.points.shape[0], 3))
    pts[:, : mesh.dim] = mesh.points
    cells = mesh.cells
    nf = cells.shape[1]
    node_dof = mesh.dof_of_node
    out = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {pts.shape[0]} double",
    ]
    out.extend(" ".join(f"{c:.12g}" for c in p) for p in pts)
    out.append(f"CELLS {cells.shape[0]} {cells.shape[0] * (nf + 1)}")
    out.extend(f"{nf} " + " ".join(str(int(v)) for v in cell) for cell in cells)
    out.append(f"CELL_TYPES {cells.shape[0]}")
    out.extend([str(_VTK_TYPE[mesh.kind])] * cells.shape[0])
    out.append(f"POINT_DATA {pts.shape[0]}")
    for name, arr in fields.items():
        a = np.asarray(arr, dtype=float)[node_dof]
        if a.ndim == 1:
            out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            out.extend(f"{v:.12g}" for v in a)
        else:
            v3 = np.zeros((a.shape[0], 3))
            v3[:, : a.shape[1]] = a
            out.append(f"VECTORS {name} double")
            out.extend(" ".join(f"{c:.12g}" for c in row) for row in v3)
    path.write_text("\n".join(out) + "\n")
    return path


def state_fields(system, U) -> dict:
    """Named nodal fields for output: the scalar, or density/velocity/pressure."""
    U = np.asarray(U, dtype=float)
    if system.scalar:
        return {"u": U[:, 0]}
    rho, vel, p = system.primitive(U)
    return {"density": rho, "velocity": vel, "pressure": p}
