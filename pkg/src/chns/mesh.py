"""Uniform triangulations of axis-aligned rectangles."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BOUNDARY_TOL = 1e-12


@dataclass(frozen=True)
class Rect:
    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate rectangle {self}")

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)


UNIT_SQUARE = Rect(0.0, 1.0, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangle mesh with deduplicated edges and boundary flags.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counter-clockwise
    edges : (ne, 2) int array, each undirected pair once
    triangle_edges : (nt, 3) int array; local edge k joins local
        vertices k and (k + 1) % 3
    boundary_vertex_flags, boundary_edge_flags : bool arrays
    h : largest triangle diameter
    """

    domain: Rect
    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    triangle_edges: np.ndarray
    boundary_vertex_flags: np.ndarray
    boundary_edge_flags: np.ndarray
    h: float
    nx: int = 0
    ny: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def jacobians(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized affine maps for all triangles: (J, detJ, inv(J)^T)."""
        if "jac" not in self._cache:
            p = self.vertices[self.triangles]
            J = np.empty((self.n_triangles, 2, 2))
            J[:, :, 0] = p[:, 1] - p[:, 0]
            J[:, :, 1] = p[:, 2] - p[:, 0]
            det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
            invT = np.empty_like(J)
            invT[:, 0, 0] = J[:, 1, 1] / det
            invT[:, 0, 1] = -J[:, 1, 0] / det
            invT[:, 1, 0] = -J[:, 0, 1] / det
            invT[:, 1, 1] = J[:, 0, 0] / det
            self._cache["jac"] = (J, det, invT)
        return self._cache["jac"]


def build_rect_mesh(domain: Rect, nx: int, ny: int) -> Mesh:
    """Split an nx-by-ny grid of cells into two triangles each.

    Every cell is cut along its lower-left to upper-right diagonal.
    Vertices are numbered row-major, ``k = j * (nx + 1) + i``.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"nx and ny must be positive integers, got {nx}, {ny}")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(domain.x0, domain.x1, nx + 1)
    ys = np.linspace(domain.y0, domain.y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    v00 = j * (nx + 1) + i
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    local = triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 3, 2)
    keys = np.sort(local.reshape(-1, 2), axis=1)
    # first-appearance order keeps the numbering deterministic and local
    uniq, first, inverse, counts = np.unique(
        keys, axis=0, return_index=True, return_inverse=True, return_counts=True
    )
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    edges = uniq[order]
    triangle_edges = rank[inverse.ravel()].reshape(-1, 3)
    boundary_edge_flags = counts[order] == 1

    x, y = vertices[:, 0], vertices[:, 1]
    boundary_vertex_flags = (
        (np.abs(x - domain.x0) <= BOUNDARY_TOL)
        | (np.abs(x - domain.x1) <= BOUNDARY_TOL)
        | (np.abs(y - domain.y0) <= BOUNDARY_TOL)
        | (np.abs(y - domain.y1) <= BOUNDARY_TOL)
    )

    dx = (domain.x1 - domain.x0) / nx
    dy = (domain.y1 - domain.y0) / ny
    return Mesh(
        domain=domain,
        vertices=vertices,
        triangles=triangles,
        edges=edges,
        triangle_edges=triangle_edges,
        boundary_vertex_flags=boundary_vertex_flags,
        boundary_edge_flags=boundary_edge_flags,
        h=float(np.hypot(dx, dy)),
        nx=nx,
        ny=ny,
    )


def triangle_geometry(mesh: Mesh, t: int) -> tuple[float, np.ndarray, np.ndarray]:
    """Area, Jacobian and inverse-transpose Jacobian of triangle ``t``.

    The Jacobian maps the reference triangle (0,0), (1,0), (0,1) onto
    triangle ``t``: ``x = v0 + J @ xi``.
    """
    if not 0 <= t < mesh.n_triangles:
        raise IndexError(f"triangle index {t} out of range [0, {mesh.n_triangles})")
    J, det, invT = mesh.jacobians()
    return 0.5 * float(det[t]), J[t].copy(), invT[t].copy()


def mesh_from_arrays(vertices, triangles) -> Mesh:
    """Wrap explicit vertex/triangle arrays (used for single-element checks).

    Boundary flags are derived from edge multiplicity rather than from a
    bounding rectangle.
    """
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    local = triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    keys = np.sort(local, axis=1)
    uniq, first, inverse, counts = np.unique(
        keys, axis=0, return_index=True, return_inverse=True, return_counts=True
    )
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    edges = uniq[order]
    bedge = counts[order] == 1
    bvert = np.zeros(len(vertices), dtype=bool)
    bvert[edges[bedge].ravel()] = True
    lo, hi = vertices.min(axis=0), vertices.max(axis=0)
    diam = max(
        np.linalg.norm(vertices[a] - vertices[b]) for a, b in edges
    )
    return Mesh(
        domain=Rect(lo[0], hi[0], lo[1], hi[1]),
        vertices=vertices,
        triangles=triangles,
        edges=edges,
        triangle_edges=rank[inverse.ravel()].reshape(-1, 3),
        boundary_vertex_flags=bvert,
        boundary_edge_flags=bedge,
        h=float(diam),
    )
