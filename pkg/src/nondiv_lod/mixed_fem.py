"""Stabilized mixed non-symmetric P1 finite elements for A:D^2 u = f.

Unknowns are a continuous piecewise-affine pair (u, q) with u = 0 and
q . t = 0 on the boundary.  The discrete equations are

    (grad u - q, grad z)                              = 0
    (gamma A:Dq, div v) + 1/2 (rot q, rot v)          = (gamma f, div v)

with boundary conditions imposed by eliminating degrees of freedom.  Rows
of the system matrix are test functions, columns are trial functions, and
unknowns are ordered [u | q].
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Union

import numpy as np
import scipy.sparse as sp

from . import sparse as sps
from .coeffs import CoefficientField, ExactSolution
from .mesh import Mesh2D, coordinate_permutation, levels_between, prolong, refine

QUADRATURE = "interior-3"
# degree-2 rule with interior points: coefficient jumps along mesh lines are
# never sampled on the jump itself
INTERIOR3_POINTS = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
ROT_WEIGHT = 0.5  # sigma^2 with sigma = 1/sqrt(2)


class DofMap:
    """Free degrees of freedom of the mixed space on one mesh.

    Full numbering: u at vertex v is ``v``, component c of q at vertex v is
    ``nv + 2 v + c``.  Free dofs are numbered u first, then q, each in
    increasing full index.
    """

    def __init__(self, mesh: Mesh2D):
        self.mesh = mesh
        nv = mesh.n_vertices
        self.n_full = 3 * nv
        bd_edges = mesh.edges[mesh.boundary_edge]
        t = mesh.vertices[bd_edges[:, 1]] - mesh.vertices[bd_edges[:, 0]]
        if np.any(np.all(np.abs(t) > 1e-14, axis=1)):
            raise ValueError("q boundary dofs need an axis-aligned boundary")
        # component c is fixed wherever a boundary edge has a tangent along e_c
        fixed = np.zeros((nv, 2), dtype=bool)
        for c in range(2):
            along = np.abs(t[:, c]) > 1e-14
            fixed[bd_edges[along].ravel(), c] = True
        self.u_vertices = mesh.interior_vertices
        qv, qc = np.nonzero(~fixed)
        self.q_vertices, self.q_components = qv, qc
        self.n_u = len(self.u_vertices)
        self.n_q = len(qv)
        self.n_dofs = self.n_u + self.n_q
        self.free = np.concatenate([self.u_vertices, nv + 2 * qv + qc])
        self.full_to_free = np.full(self.n_full, -1, dtype=np.int64)
        self.full_to_free[self.free] = np.arange(self.n_dofs)

    @property
    def dof_vertex(self) -> np.ndarray:
        """Mesh vertex carrying each free dof."""
        return np.concatenate([self.u_vertices, self.q_vertices])

    def to_nodal(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        full = np.zeros(self.n_full)
        full[self.free] = x
        nv = self.mesh.n_vertices
        return full[:nv].copy(), full[nv:].reshape(nv, 2).copy()

    def from_nodal(self, u: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Free-dof vector of a nodal pair; fixed values are dropped."""
        full = np.concatenate([np.asarray(u, float), np.asarray(q, float).ravel()])
        return full[self.free]


@dataclass(frozen=True, eq=False)
class MixedSystem:
    matrix: sp.csr_matrix
    load: np.ndarray
    dofmap: DofMap
    quadrature: str = QUADRATURE

    @property
    def mesh(self) -> Mesh2D:
        return self.dofmap.mesh

    @property
    def n_u(self) -> int:
        return self.dofmap.n_u

    def blocks(self):
        """(K, B, Q): Laplacian, coupling (u rows, q columns) and q block."""
        nu = self.n_u
        m = self.matrix
        return m[:nu, :nu].tocsr(), m[:nu, nu:].tocsr(), m[nu:, nu:].tocsr()


@dataclass(frozen=True, eq=False)
class FineSolution:
    mesh: Mesh2D
    u: np.ndarray          # (nv,) nodal values
    q: np.ndarray          # (nv, 2) nodal vector values
    dofs: np.ndarray | None = None


def _quadrature_points(mesh: Mesh2D) -> np.ndarray:
    # (nt, 3, 2); equal weights |T|/3
    return np.einsum("qk,tkd->tqd", INTERIOR3_POINTS, mesh.vertices[mesh.triangles])


def assemble(mesh: Mesh2D, field: CoefficientField,
             gamma: Callable[[np.ndarray], np.ndarray],
             f: Callable[[np.ndarray], np.ndarray]) -> MixedSystem:
    if field.has_lower_order:
        raise ValueError("the mixed discretization supports vanishing lower-order terms only")
    if len(mesh.interior_vertices) == 0:
        raise ValueError("mesh has no interior vertices")
    dm = DofMap(mesh)
    nv, nt = mesh.n_vertices, mesh.n_triangles
    area = mesh.areas
    G = mesh.barycentric_gradients                       # (nt, 3, 2)
    xq = _quadrature_points(mesh)
    gam = gamma(xq)                                      # (nt, 3)
    A_bar = np.einsum("tk,tkij->tij", gam, field.A(xq)) * (area / 3.0)[:, None, None]
    f_bar = np.einsum("tk,tk->t", gam, f(xq)) * (area / 3.0)

    tri = mesh.triangles
    u_idx = tri                                          # (nt, 3)
    q_idx = nv + 2 * tri[:, :, None] + np.arange(2)      # (nt, 3, 2)

    # (grad u, grad z)
    Kloc = area[:, None, None] * np.einsum("tad,tbd->tab", G, G)
    # -(q, grad z): integral of the hat of b is |T|/3
    Bloc = -(area / 3.0)[:, None, None, None] * np.broadcast_to(
        G[:, :, None, :], (nt, 3, 3, 2))
    # (gamma A:Dq, div v) + 1/2 (rot q, rot v); Dq for hat_b e_c has row c = G_b
    AG = np.einsum("tij,tbj->tbi", A_bar, G)             # (nt, b, c)
    R = np.stack([-G[:, :, 1], G[:, :, 0]], axis=-1)     # rot of hat_b e_c
    Qloc = (np.einsum("tad,tbc->tadbc", G, AG)
            + ROT_WEIGHT * area[:, None, None, None, None]
            * np.einsum("tad,tbc->tadbc", R, R))

    rows = np.concatenate([
        np.repeat(u_idx, 3, axis=1).ravel(),
        np.broadcast_to(u_idx[:, :, None, None], (nt, 3, 3, 2)).ravel(),
        np.broadcast_to(q_idx[:, :, :, None, None], (nt, 3, 2, 3, 2)).ravel(),
    ])
    cols = np.concatenate([
        np.tile(u_idx, (1, 3)).ravel(),
        np.broadcast_to(q_idx[:, None, :, :], (nt, 3, 3, 2)).ravel(),
        np.broadcast_to(q_idx[:, None, None, :, :], (nt, 3, 2, 3, 2)).ravel(),
    ])
    vals = np.concatenate([Kloc.ravel(), Bloc.ravel(), Qloc.ravel()])
    full = sp.csr_matrix((vals, (rows, cols)), shape=(dm.n_full, dm.n_full))
    matrix = sps.canonical(full[dm.free][:, dm.free])

    load_full = np.zeros(dm.n_full)
    np.add.at(load_full, q_idx.ravel(), (G * f_bar[:, None, None]).ravel())
    return MixedSystem(matrix, load_full[dm.free], dm)


def solve_fine(system: MixedSystem) -> FineSolution:
    """Block back-substitution: q from the q block, then the Poisson solve for u."""
    K, B, Q = system.blocks()
    nu = system.n_u
    bu, bq = system.load[:nu], system.load[nu:]
    try:
        q = sps.factorize(Q).solve(bq)
    except sps.SingularMatrixError as exc:
        raise sps.SingularMatrixError(f"q block singular: {exc}") from exc
    u = sps.factorize(K).solve(bu - B @ q)
    x = np.concatenate([u, q])
    un, qn = system.dofmap.to_nodal(x)
    return FineSolution(system.mesh, un, qn, x)


def solution_from_dofs(dofmap: DofMap, x: np.ndarray) -> FineSolution:
    u, q = dofmap.to_nodal(x)
    return FineSolution(dofmap.mesh, u, q, np.asarray(x, float))


# -- error evaluation ---------------------------------------------------------

class Errors(NamedTuple):
    l2: float
    h1: float
    h2: float


# 7-point rule, exact for polynomials of degree 5 (Dunavant)
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
DUNAVANT5_POINTS = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
DUNAVANT5_WEIGHTS = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)


def element_derivatives(mesh: Mesh2D, u: np.ndarray, q: np.ndarray):
    """Piecewise-constant grad u (nt, 2) and broken Dq (nt, 2, 2), Dq[i, j] = d_j q_i."""
    G = mesh.barycentric_gradients
    grad_u = np.einsum("tk,tkd->td", u[mesh.triangles], G)
    Dq = np.einsum("tki,tkj->tij", q[mesh.triangles], G)
    return grad_u, Dq


def _eval_levels(mesh: Mesh2D, min_cells: int) -> int:
    leg = np.sqrt(2.0 * mesh.areas.max())
    target = 2.0 / min_cells
    return max(0, int(np.ceil(np.log2(leg / target) - 1e-9)))


def exact_errors(sol: FineSolution, exact: ExactSolution, min_cells: int = 256,
                 absolute: bool = False) -> Errors:
    """Relative L2 / H1-semi / H2-semi errors against an exact solution.

    The P1 pair is interpolated to a refinement with at least ``min_cells``
    cells per side and integrated with a degree-5 rule on every sub-element.
    """
    k = _eval_levels(sol.mesh, min_cells)
    mesh = refine(sol.mesh, k) if k else sol.mesh
    u = prolong(sol.mesh, sol.u, k)
    q = prolong(sol.mesh, sol.q, k)
    _, Dq = element_derivatives(mesh, u, q)
    p = mesh.vertices[mesh.triangles]                     # (nt, 3, 2)
    x = np.einsum("qk,tkd->tqd", DUNAVANT5_POINTS, p)      # (nt, 7, 2)
    w = DUNAVANT5_WEIGHTS[None, :] * mesh.areas[:, None]
    uh = np.einsum("qk,tk->tq", DUNAVANT5_POINTS, u[mesh.triangles])
    qh = np.einsum("qk,tkd->tqd", DUNAVANT5_POINTS, q[mesh.triangles])
    ue, ge, he = exact.u(x), exact.grad(x), exact.hess(x)
    e0 = np.sum(w * (uh - ue) ** 2)
    e1 = np.sum(w * np.sum((qh - ge) ** 2, axis=-1))
    e2 = np.sum(w * np.sum((Dq[:, None] - he) ** 2, axis=(-1, -2)))
    if absolute:
        return Errors(np.sqrt(e0), np.sqrt(e1), np.sqrt(e2))
    n0 = np.sum(w * ue ** 2)
    n1 = np.sum(w * np.sum(ge ** 2, axis=-1))
    n2 = np.sum(w * np.sum(he ** 2, axis=(-1, -2)))
    return Errors(float(np.sqrt(e0 / n0)), float(np.sqrt(e1 / n1)), float(np.sqrt(e2 / n2)))


def _p1_l2_squared(mesh: Mesh2D, v: np.ndarray) -> float:
    vt = v[mesh.triangles]
    return float(np.sum(mesh.areas / 12.0 * (np.sum(vt ** 2, axis=1) + np.sum(vt, axis=1) ** 2)))


def discrete_errors(sol: FineSolution, reference: FineSolution) -> Errors:
    """Relative errors against a discrete reference on the same or a finer mesh."""
    k = levels_between(sol.mesh, reference.mesh)
    u = prolong(sol.mesh, sol.u, k)
    q = prolong(sol.mesh, sol.q, k)
    fine_mesh = refine(sol.mesh, k) if k else sol.mesh
    perm = coordinate_permutation(fine_mesh, reference.mesh)
    u, q = u[perm], q[perm]
    mesh = reference.mesh
    _, Dq = element_derivatives(mesh, u, q)
    _, Dr = element_derivatives(mesh, reference.u, reference.q)
    a = mesh.areas
    e0 = _p1_l2_squared(mesh, u - reference.u)
    e1 = sum(_p1_l2_squared(mesh, q[:, c] - reference.q[:, c]) for c in range(2))
    e2 = np.sum(a * np.sum((Dq - Dr) ** 2, axis=(-1, -2)))
    n0 = _p1_l2_squared(mesh, reference.u)
    n1 = sum(_p1_l2_squared(mesh, reference.q[:, c]) for c in range(2))
    n2 = np.sum(a * np.sum(Dr ** 2, axis=(-1, -2)))
    return Errors(float(np.sqrt(e0 / n0)), float(np.sqrt(e1 / n1)), float(np.sqrt(e2 / n2)))


def error_norms(sol: FineSolution,
                reference: Union[FineSolution, ExactSolution]) -> Errors:
    if isinstance(reference, ExactSolution):
        return exact_errors(sol, reference)
    return discrete_errors(sol, reference)
