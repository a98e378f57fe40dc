"""Legacy ASCII VTK output and atomic file writes."""

from __future__ import annotations

import os
import tempfile
from typing import Iterable, Sequence

import numpy as np

from .assembly import Field, Velocity
from .fe import ElementKind
from .mesh import Mesh

VTK_TRIANGLE = 5


def atomic_write_text(path: str, text: str) -> None:
    """Write through a temporary file in the same directory, then rename."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def vertex_values(mesh: Mesh, f) -> np.ndarray:
    """Per-vertex values: (nv,) for scalars, (nv, 2) for vectors."""
    if isinstance(f, Velocity):
        return f.vertex_values()
    if isinstance(f, Field):
        if f.dofmap.mesh is not mesh:
            raise ValueError("field lives on a different mesh")
        nv = mesh.n_vertices
        c = f.coefficients
        if f.kind is ElementKind.P2_vector2:
            nn = f.dofmap.n_nodes
            return np.column_stack([c[:nv], c[nn:nn + nv]])
        return c[:nv].copy()  # P1 and P2 number vertices first
    arr = np.asarray(f, dtype=float)
    if arr.shape[0] != mesh.n_vertices or arr.ndim not in (1, 2):
        raise ValueError(f"array of shape {arr.shape} is not per-vertex data")
    return arr


def _num(v: float) -> str:
    return repr(float(v))


def vtk_text(mesh: Mesh, fields: Sequence[tuple], title: str = "chns") -> str:
    nv, nt = mesh.n_vertices, mesh.n_triangles
    out = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
           "DATASET UNSTRUCTURED_GRID", f"POINTS {nv} double"]
    out += [f"{_num(x)} {_num(y)} 0.0" for x, y in mesh.vertices]
    out.append(f"CELLS {nt} {4 * nt}")
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    out.append(f"CELL_TYPES {nt}")
    out += [str(VTK_TRIANGLE)] * nt
    if fields:
        out.append(f"POINT_DATA {nv}")
    for name, f in fields:
        vals = vertex_values(mesh, f)
        if vals.ndim == 1:
            out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            out += [_num(v) for v in vals]
        else:
            out.append(f"VECTORS {name} double")
            out += [f"{_num(a)} {_num(b)} 0.0" for a, b in vals]
    return "\n".join(out) + "\n"


def write_vtk(mesh: Mesh, fields: Iterable[tuple], path: str, title: str = "chns") -> None:
    """Write ``(name, field)`` pairs as point data of a legacy unstructured grid.

    Fields may be P1/P2 ``Field`` objects, a ``Velocity`` or per-vertex
    arrays; P2 data is reduced to its vertex values.
    """
    atomic_write_text(path, vtk_text(mesh, list(fields), title))
