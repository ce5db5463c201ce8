"""Structured triangulations of the square (-1, 1)^2.

Meshes are immutable bundles of numpy arrays.  A fine mesh produced by
:func:`refine` remembers how its entities sit inside the mesh it was refined
from (``parent``, ``coarse_vertex``, ``vertex_coarse_edge``,
``edge_coarse_edge``), so coarse edges and vertices are resolved exactly by
fine ones without any geometric search.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional

import numpy as np
import scipy.sparse as sp

# local edge k of a triangle joins local vertices LOCAL_EDGES[k]
LOCAL_EDGES = np.array([[0, 1], [1, 2], [2, 0]])


@dataclass(frozen=True, eq=False)
class Mesh2D:
    vertices: np.ndarray
    triangles: np.ndarray
    # maps to the mesh this one was refined from; identity for a root mesh
    parent: np.ndarray = field(default=None)
    coarse_vertex: np.ndarray = field(default=None)
    vertex_coarse_edge: np.ndarray = field(default=None)
    edge_coarse_edge: np.ndarray = field(default=None)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if self.parent is None:
            object.__setattr__(self, "parent", np.arange(len(t)))
        if self.coarse_vertex is None:
            object.__setattr__(self, "coarse_vertex", np.arange(len(v)))
        if self.vertex_coarse_edge is None:
            object.__setattr__(self, "vertex_coarse_edge", np.full(len(v), -1))
        if self.edge_coarse_edge is None:
            object.__setattr__(self, "edge_coarse_edge", np.arange(self.n_edges))
        for name in ("vertices", "triangles", "parent", "coarse_vertex",
                     "vertex_coarse_edge", "edge_coarse_edge"):
            getattr(self, name).setflags(write=False)

    # -- topology -----------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def _edge_tables(self):
        nv = self.n_vertices
        # lexicographic (x, y) rank decides the edge orientation
        rank = np.empty(nv, dtype=np.int64)
        rank[np.lexsort((self.vertices[:, 1], self.vertices[:, 0]))] = np.arange(nv)
        local = self.triangles[:, LOCAL_EDGES]            # (nt, 3, 2)
        a, b = local[..., 0], local[..., 1]
        swap = rank[a] > rank[b]
        first = np.where(swap, b, a)
        second = np.where(swap, a, b)
        keys = (first * nv + second).ravel()
        uniq, inverse = np.unique(keys, return_inverse=True)
        edges = np.column_stack([uniq // nv, uniq % nv])
        triangle_edges = inverse.reshape(-1, 3)

        edge_triangles = np.full((len(edges), 2), -1, dtype=np.int64)
        flat_t = np.repeat(np.arange(self.n_triangles), 3)
        order = np.argsort(inverse, kind="stable")
        sorted_e = inverse[order]
        counts = np.bincount(sorted_e, minlength=len(edges))
        if counts.max() > 2:
            raise ValueError("non-manifold triangulation: edge shared by >2 triangles")
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        slot = np.arange(len(order)) - starts[sorted_e]
        edge_triangles[sorted_e, slot] = flat_t[order]
        return edges, triangle_edges, edge_triangles

    @property
    def edges(self) -> np.ndarray:
        """(ne, 2) vertex pairs, lexicographically smaller endpoint first."""
        return self._edge_tables[0]

    @property
    def triangle_edges(self) -> np.ndarray:
        """(nt, 3) edge index of local edge k (vertices k, k+1)."""
        return self._edge_tables[1]

    @property
    def edge_triangles(self) -> np.ndarray:
        """(ne, 2) incident triangles; -1 in the second slot on the boundary."""
        return self._edge_tables[2]

    @cached_property
    def boundary_edge(self) -> np.ndarray:
        return self.edge_triangles[:, 1] < 0

    @cached_property
    def boundary_vertex(self) -> np.ndarray:
        flag = np.zeros(self.n_vertices, dtype=bool)
        flag[self.edges[self.boundary_edge].ravel()] = True
        return flag

    @property
    def interior_vertices(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_vertex)

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        """Triangle-by-vertex 0/1 incidence matrix."""
        nt = self.n_triangles
        rows = np.repeat(np.arange(nt), 3)
        data = np.ones(3 * nt, dtype=np.int8)
        return sp.csr_matrix((data, (rows, self.triangles.ravel())),
                             shape=(nt, self.n_vertices))

    # -- geometry -----------------------------------------------------------

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @property
    def element_size(self) -> np.ndarray:
        """H_T = |T|^(1/2)."""
        return np.sqrt(self.areas)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def edge_normals(self) -> np.ndarray:
        """Unit normals: the tangent (first -> second vertex) rotated by +90 degrees."""
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        t = d / self.edge_lengths[:, None]
        return np.column_stack([-t[:, 1], t[:, 0]])

    @cached_property
    def barycentric_gradients(self) -> np.ndarray:
        """(nt, 3, 2) gradients of the three P1 hat functions on each triangle."""
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        g1 = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
        g2 = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
        return np.stack([-g1 - g2, g1, g2], axis=1)

    @property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def edge_midpoints(self) -> np.ndarray:
        """(nt, 3, 2) midpoints of the local edges of every triangle."""
        p = self.vertices[self.triangles]
        return 0.5 * (p + p[:, [1, 2, 0]])

    # -- queries ------------------------------------------------------------

    def elements_touching(self, vertex_ids: Iterable[int]) -> np.ndarray:
        """Sorted indices of triangles sharing at least one of the given vertices."""
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[np.asarray(list(vertex_ids), dtype=np.int64)] = True
        return np.flatnonzero(self.incidence @ mask)

    def dump(self) -> str:
        """Line-oriented text dump for debugging and diffing."""
        lines = ["VERTICES"]
        lines += [f"{i} {x:.17g} {y:.17g}" for i, (x, y) in enumerate(self.vertices)]
        lines.append("TRIANGLES")
        lines += [f"{i} {a} {b} {c}" for i, (a, b, c) in enumerate(self.triangles)]
        lines.append("EDGES")
        lines += [f"{i} {a} {b} {int(f)}"
                  for i, ((a, b), f) in enumerate(zip(self.edges, self.boundary_edge))]
        return "\n".join(lines) + "\n"


def uniform_mesh(n: int) -> Mesh2D:
    """n x n cells on (-1, 1)^2, each cut along its lower-left/upper-right diagonal."""
    if n < 1:
        raise ValueError(f"need at least one cell per side, got n={n}")
    s = np.linspace(-1.0, 1.0, n + 1)
    x, y = np.meshgrid(s, s)
    vertices = np.column_stack([x.ravel(), y.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (j * (n + 1) + i).ravel()
    v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return Mesh2D(vertices, triangles)


def _red_refine_once(mesh: Mesh2D) -> tuple[Mesh2D, np.ndarray, np.ndarray]:
    nv = mesh.n_vertices
    te = mesh.triangle_edges
    mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    vertices = np.vstack([mesh.vertices, mids])
    a, b, c = mesh.triangles.T
    mab, mbc, mca = (nv + te[:, k] for k in range(3))
    children = np.stack([
        np.column_stack([a, mab, mca]),
        np.column_stack([mab, b, mbc]),
        np.column_stack([mca, mbc, c]),
        np.column_stack([mab, mbc, mca]),
    ], axis=1).reshape(-1, 3)
    # which old edge each new local edge lies on (-1: strictly inside a triangle)
    eab, ebc, eca = te.T
    none = np.full_like(eab, -1)
    local_on = np.stack([
        np.column_stack([eab, none, eca]),
        np.column_stack([eab, ebc, none]),
        np.column_stack([none, ebc, eca]),
        np.column_stack([none, none, none]),
    ], axis=1).reshape(-1, 3)
    fine = Mesh2D(vertices, children)
    edge_on_old = np.full(fine.n_edges, -1, dtype=np.int64)
    edge_on_old[fine.triangle_edges.ravel()] = local_on.ravel()
    return fine, np.repeat(np.arange(mesh.n_triangles), 4), edge_on_old


def refine(mesh: Mesh2D, k: int) -> Mesh2D:
    """k rounds of red refinement; the result's maps point back into ``mesh``."""
    if k < 0:
        raise ValueError("refinement levels must be nonnegative")
    parent = np.arange(mesh.n_triangles)
    coarse_vertex = np.arange(mesh.n_vertices)
    vertex_edge = np.full(mesh.n_vertices, -1)
    edge_edge = np.arange(mesh.n_edges)
    current = mesh
    for _ in range(k):
        old_edges = current.n_edges
        fine, tri_parent, edge_on_old = _red_refine_once(current)
        parent = parent[tri_parent]
        coarse_vertex = np.concatenate([coarse_vertex, np.full(old_edges, -1)])
        vertex_edge = np.concatenate([vertex_edge, edge_edge])
        edge_edge = np.where(edge_on_old >= 0, edge_edge[np.maximum(edge_on_old, 0)], -1)
        current = fine
    return Mesh2D(current.vertices, current.triangles, parent=parent,
                  coarse_vertex=coarse_vertex, vertex_coarse_edge=vertex_edge,
                  edge_coarse_edge=edge_edge)


def patch(mesh: Mesh2D, seed: Iterable[int], ell: int) -> np.ndarray:
    """N^ell(seed): ell rounds of growth by all triangles sharing a vertex."""
    seed = np.unique(np.asarray(list(seed), dtype=np.int64))
    if seed.size == 0:
        raise ValueError("patch seed must be nonempty")
    if seed.min() < 0 or seed.max() >= mesh.n_triangles:
        raise IndexError("patch seed contains invalid triangle indices")
    if ell < 0:
        raise ValueError("patch radius must be nonnegative")
    inc = mesh.incidence
    mask = np.zeros(mesh.n_triangles, dtype=bool)
    mask[seed] = True
    for _ in range(ell):
        touched = (inc.T @ mask.astype(np.int8)) > 0
        grown = (inc @ touched.astype(np.int8)) > 0
        if grown.sum() == mask.sum():
            break
        mask = grown
    return np.flatnonzero(mask)


def prolong(mesh: Mesh2D, values: np.ndarray, k: int) -> np.ndarray:
    """Nodal values of a P1 field on ``mesh`` interpolated to ``refine(mesh, k)``.

    Works on any trailing shape of ``values`` (scalar or vector fields).
    """
    values = np.asarray(values, dtype=float)
    current = mesh
    for _ in range(k):
        e = current.edges
        values = np.concatenate([values, 0.5 * (values[e[:, 0]] + values[e[:, 1]])])
        current = _red_refine_once(current)[0]
    return values


def coordinate_permutation(source: Mesh2D, target: Mesh2D) -> np.ndarray:
    """perm with source.vertices[perm] == target.vertices (same vertex sets)."""
    if source.n_vertices != target.n_vertices:
        raise ValueError("meshes have different vertex counts")

    def order(m):
        key = np.round(m.vertices * 2.0 ** 40)
        return np.lexsort((key[:, 1], key[:, 0]))

    so, to = order(source), order(target)
    if not np.allclose(source.vertices[so], target.vertices[to], atol=1e-12, rtol=0.0):
        raise ValueError("meshes do not share the same vertex coordinates")
    perm = np.empty(source.n_vertices, dtype=np.int64)
    perm[to] = so
    return perm


def levels_between(coarse: Mesh2D, fine: Mesh2D) -> int:
    """Number of red refinements separating two nested meshes."""
    ratio = fine.n_triangles / coarse.n_triangles
    k = int(round(np.log(ratio) / np.log(4.0))) if ratio >= 1 else -1
    if k < 0 or coarse.n_triangles * 4 ** k != fine.n_triangles:
        raise ValueError("fine mesh is not a uniform refinement of the coarse mesh")
    return k
