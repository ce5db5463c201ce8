"""Coarse quantities of interest as linear functionals on fine mixed dofs.

Edge functionals average q . nu along a coarse edge (exact trapezoidal
integration of the piecewise-affine q); vertex functionals read the nodal
value of u at a coarse interior vertex.  Edges come first, then interior
vertices, each in the coarse mesh's own order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh2D
from .mixed_fem import DofMap

EDGE, VERTEX = 0, 1


@dataclass(frozen=True, eq=False)
class QoiSet:
    coarse: Mesh2D
    fine: Mesh2D
    dofmap: DofMap
    kind: np.ndarray             # EDGE or VERTEX per functional
    entity: np.ndarray           # coarse edge or vertex index
    full_matrix: sp.csr_matrix   # N x (3 nv_fine), acts on full nodal vectors
    matrix: sp.csr_matrix        # N x n_free, acts on free dof vectors
    supports: list               # coarse triangles touching each entity

    @property
    def n(self) -> int:
        return len(self.kind)

    @property
    def n_edges(self) -> int:
        return int(np.sum(self.kind == EDGE))

    def entity_vertices(self, i: int) -> np.ndarray:
        if self.kind[i] == EDGE:
            return self.coarse.edges[self.entity[i]]
        return np.array([self.entity[i]])


def _check_nested(coarse: Mesh2D, fine: Mesh2D) -> np.ndarray:
    cv = fine.coarse_vertex
    if (len(fine.parent) != fine.n_triangles or fine.parent.max() >= coarse.n_triangles
            or cv.max() >= coarse.n_vertices
            or np.count_nonzero(cv >= 0) != coarse.n_vertices):
        raise ValueError("fine mesh is not a refinement of the coarse mesh")
    fine_of = np.full(coarse.n_vertices, -1, dtype=np.int64)
    hit = np.flatnonzero(cv >= 0)
    fine_of[cv[hit]] = hit
    if not np.allclose(fine.vertices[fine_of], coarse.vertices, atol=1e-12):
        raise ValueError("fine mesh is not a refinement of the coarse mesh")
    return fine_of


def build_qois(coarse: Mesh2D, fine: Mesh2D, dofmap: DofMap | None = None) -> QoiSet:
    fine_of = _check_nested(coarse, fine)
    dofmap = DofMap(fine) if dofmap is None else dofmap
    nv = fine.n_vertices
    rows, cols, vals = [], [], []

    # fine vertices strictly inside each coarse edge, grouped by edge
    on_edge = np.flatnonzero(fine.vertex_coarse_edge >= 0)
    order = np.argsort(fine.vertex_coarse_edge[on_edge], kind="stable")
    on_edge = on_edge[order]
    bounds = np.searchsorted(fine.vertex_coarse_edge[on_edge], np.arange(coarse.n_edges + 1))

    normals, lengths = coarse.edge_normals, coarse.edge_lengths
    for e, (a, b) in enumerate(coarse.edges):
        inner = on_edge[bounds[e]:bounds[e + 1]]
        verts = np.concatenate([[fine_of[a]], inner, [fine_of[b]]])
        s = (fine.vertices[verts] - coarse.vertices[a]) @ (
            (coarse.vertices[b] - coarse.vertices[a]) / lengths[e])
        o = np.argsort(s)
        verts, s = verts[o], s[o]
        ds = np.diff(s)
        w = (np.concatenate([ds, [0.0]]) + np.concatenate([[0.0], ds])) / (2.0 * lengths[e])
        for c in range(2):
            if normals[e, c] != 0.0:
                rows.append(np.full(len(verts), e))
                cols.append(nv + 2 * verts + c)
                vals.append(w * normals[e, c])

    interior = coarse.interior_vertices
    n_edges = coarse.n_edges
    rows.append(n_edges + np.arange(len(interior)))
    cols.append(fine_of[interior])
    vals.append(np.ones(len(interior)))

    N = n_edges + len(interior)
    full = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(N, 3 * nv))
    full.sum_duplicates()
    full.sort_indices()
    free = full[:, dofmap.free].tocsr()
    free.sort_indices()

    kind = np.concatenate([np.full(n_edges, EDGE), np.full(len(interior), VERTEX)])
    entity = np.concatenate([np.arange(n_edges), interior])
    supports = [coarse.elements_touching(coarse.edges[e]) for e in range(n_edges)]
    supports += [coarse.elements_touching([z]) for z in interior]
    return QoiSet(coarse, fine, dofmap, kind, entity, full, free, supports)


def apply_qois(qois: QoiSet, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[0] != qois.matrix.shape[1]:
        raise ValueError(f"expected {qois.matrix.shape[1]} fine dofs, got {x.shape[0]}")
    return qois.matrix @ x


def apply_nodal(qois: QoiSet, u: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Apply to nodal fields directly, boundary values included."""
    return qois.full_matrix @ np.concatenate([np.asarray(u, float), np.asarray(q, float).ravel()])
