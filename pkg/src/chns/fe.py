"""Lagrange P1/P2 reference bases, triangle quadrature and dof maps."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .mesh import Mesh

REF_TOL = 1e-12


class ElementKind(enum.Enum):
    P1_scalar = "P1"
    P2_scalar = "P2"
    P2_vector2 = "P2v"

    @property
    def n_nodes(self) -> int:
        return 3 if self is ElementKind.P1_scalar else 6

    @property
    def n_components(self) -> int:
        return 2 if self is ElementKind.P2_vector2 else 1

    @property
    def scalar(self) -> "ElementKind":
        return ElementKind.P2_scalar if self is ElementKind.P2_vector2 else self


# ---------------------------------------------------------------------------
# quadrature

@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 2) reference coordinates
    weights: np.ndarray  # (nq,), sum 1/2
    degree: int

    @property
    def n_points(self) -> int:
        return len(self.weights)


def _orbits(spec):
    pts, wts = [], []
    for w, bary in spec:
        for b in sorted(set(permutations(bary))):
            pts.append((b[1], b[2]))
            wts.append(w)
    return np.array(pts), 0.5 * np.array(wts)


_S15 = np.sqrt(15.0)
# symmetric rules (Dunavant); weights normalized to unit reference area
_RULES = {
    4: [
        (0.223381589678011, (0.108103018168070, 0.445948490915965, 0.445948490915965)),
        (0.109951743655322, (0.816847572980459, 0.091576213509771, 0.091576213509771)),
    ],
    5: [
        (9.0 / 40.0, (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)),
        ((155.0 - _S15) / 1200.0,
         (1.0 - 2.0 * (6.0 - _S15) / 21.0, (6.0 - _S15) / 21.0, (6.0 - _S15) / 21.0)),
        ((155.0 + _S15) / 1200.0,
         (1.0 - 2.0 * (6.0 + _S15) / 21.0, (6.0 + _S15) / 21.0, (6.0 + _S15) / 21.0)),
    ],
    6: [
        (0.116786275726379, (0.501426509658179, 0.249286745170910, 0.249286745170910)),
        (0.050844906370207, (0.873821971016996, 0.063089014491502, 0.063089014491502)),
        (0.082851075618374, (0.053145049844817, 0.310352451033784, 0.636502499121399)),
    ],
}


def quadrature(degree: int = 5) -> QuadratureRule:
    """Symmetric positive-weight rule exact up to ``degree`` (4, 5 or 6)."""
    if degree not in _RULES:
        raise ValueError(f"unsupported quadrature degree {degree}; choose 4, 5 or 6")
    pts, wts = _orbits(_RULES[degree])
    # tabulated digits are rounded; restore the exact total area
    wts = wts * (0.5 / wts.sum())
    return QuadratureRule(points=pts, weights=wts, degree=degree)


# ---------------------------------------------------------------------------
# reference bases

def _check_ref(pt):
    x, y = pt
    if x < -REF_TOL or y < -REF_TOL or x + y > 1.0 + REF_TOL:
        raise ValueError(f"point {tuple(pt)} lies outside the reference triangle")


def _p1(x, y):
    l0 = 1.0 - x - y
    vals = np.stack([l0, x, y], axis=-1)
    g = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    grads = np.broadcast_to(g, np.shape(x) + (3, 2)).copy()
    return vals, grads


def _p2(x, y):
    # vertices 0,1,2 then midpoints of edges (0,1), (1,2), (2,0)
    l0, l1, l2 = 1.0 - x - y, x, y
    dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    L = [l0, l1, l2]
    vals = [L[i] * (2.0 * L[i] - 1.0) for i in range(3)]
    vals += [4.0 * l0 * l1, 4.0 * l1 * l2, 4.0 * l2 * l0]
    Le = [np.asarray(v)[..., None] for v in L]
    grads = [(4.0 * Le[i] - 1.0) * dl[i] for i in range(3)]
    for a, b in ((0, 1), (1, 2), (2, 0)):
        grads.append(4.0 * (Le[a] * dl[b] + Le[b] * dl[a]))
    return np.stack(vals, axis=-1), np.stack(grads, axis=-2)


def reference_tables(kind: ElementKind, points: np.ndarray):
    """Basis values (nq, nb) and reference gradients (nq, nb, 2) at points."""
    x, y = points[:, 0], points[:, 1]
    return _p1(x, y) if kind is ElementKind.P1_scalar else _p2(x, y)


def eval_basis(kind: ElementKind, ref_point) -> tuple[np.ndarray, np.ndarray]:
    """Scalar shape functions and their reference gradients at one point.

    For ``P2_vector2`` the six scalar P2 functions are returned; the
    vector basis is their tensor product with the two unit vectors.
    """
    pt = np.asarray(ref_point, dtype=float)
    _check_ref(pt)
    vals, grads = reference_tables(kind.scalar, pt[None, :])
    return vals[0], grads[0]


# ---------------------------------------------------------------------------
# dof maps

@dataclass(frozen=True, eq=False)
class DofMap:
    """Global numbering for one element kind on one mesh.

    Vector dofs are component-blocked: the x components of all nodes come
    first, then the y components, so ``n_dofs = 2 * n_nodes``.  ``cell_dofs``
    of a vector map lists the six x dofs then the six y dofs.
    """

    kind: ElementKind
    mesh: Mesh
    n_dofs: int
    cell_dofs: np.ndarray
    boundary_dofs: np.ndarray
    dof_coords: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.n_dofs // self.kind.n_components


def build_dofmap(mesh: Mesh, kind: ElementKind) -> DofMap:
    nv = mesh.n_vertices
    if kind is ElementKind.P1_scalar:
        cells = mesh.triangles.copy()
        coords = mesh.vertices.copy()
        bnodes = np.flatnonzero(mesh.boundary_vertex_flags)
        return DofMap(kind, mesh, nv, cells, bnodes, coords)

    cells = np.concatenate([mesh.triangles, nv + mesh.triangle_edges], axis=1)
    mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    coords = np.concatenate([mesh.vertices, mids])
    bnodes = np.concatenate([
        np.flatnonzero(mesh.boundary_vertex_flags),
        nv + np.flatnonzero(mesh.boundary_edge_flags),
    ])
    nn = nv + mesh.n_edges
    if kind is ElementKind.P2_scalar:
        return DofMap(kind, mesh, nn, cells, np.sort(bnodes), coords)
    cells = np.concatenate([cells, cells + nn], axis=1)
    bdofs = np.sort(np.concatenate([bnodes, bnodes + nn]))
    return DofMap(kind, mesh, 2 * nn, cells, bdofs, coords)
