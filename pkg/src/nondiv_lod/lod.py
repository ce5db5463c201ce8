"""Localized trial/test correctors and the Petrov-Galerkin coarse solve.

For every quantity of interest i the trial basis function solves the
bordered problem

    [ M_p  C_p^T ] [x]   [ 0  ]
    [ C_p  0     ] [mu] = [ e_i]

on the fine dofs interior to the patch N^ell(Omega_i); the test basis
function solves the transposed problem.  Dofs on the interior boundary of
a patch are removed entirely, global boundary conditions apply on the
parts of the patch touching the boundary of the domain.
"""
from __future__ import annotations

import hashlib
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import sparse as sps
from .mesh import patch as grow_patch
from .mixed_fem import FineSolution, MixedSystem, solution_from_dofs
from .qoi import VERTEX, QoiSet

log = logging.getLogger(__name__)

CONSTRAINT_TOL = 1e-9


class CorrectorError(RuntimeError):
    def __init__(self, failures):
        self.failures = failures
        detail = "; ".join(f"qoi {i} (ell={ell}): {msg}" for i, ell, msg in failures)
        super().__init__(f"{len(failures)} corrector solve(s) failed: {detail}")


def default_ell(H: float) -> int:
    """ceil(|log2 H|)."""
    return int(math.ceil(abs(math.log2(H)) - 1e-12))


@dataclass
class PatchProblem:
    elements: np.ndarray      # coarse triangles of the patch
    dofs: np.ndarray          # free fine dofs interior to the patch
    constraints: np.ndarray   # QoI indices active on the patch


def patch_dofs(system: MixedSystem, elements: np.ndarray) -> np.ndarray:
    """Free fine dofs whose vertex only touches fine triangles of the patch."""
    fine = system.mesh
    inside = np.zeros(system.mesh.parent.max() + 1, dtype=bool)
    inside[elements] = True
    outside_tri = ~inside[fine.parent]
    touched = (fine.incidence.T @ outside_tri.astype(np.int8)) > 0
    return np.flatnonzero(~touched[system.dofmap.dof_vertex])


def patch_problem(system: MixedSystem, qois: QoiSet, elements: np.ndarray) -> PatchProblem:
    dofs = patch_dofs(system, elements)
    Cp = qois.matrix[:, dofs]
    active = np.flatnonzero(np.diff(Cp.indptr) > 0) if sp.isspmatrix_csr(Cp) else \
        np.flatnonzero(np.asarray(abs(Cp).sum(axis=1)).ravel() > 0)
    return PatchProblem(np.asarray(elements), dofs, active)


def bordered_matrix(system: MixedSystem, qois: QoiSet, prob: PatchProblem) -> sp.csr_matrix:
    Mp = system.matrix[prob.dofs][:, prob.dofs]
    Cp = qois.matrix[prob.constraints][:, prob.dofs]
    return sps.canonical(sp.bmat([[Mp, Cp.T], [Cp, None]], format="csr"))


def _bordered_block(system: MixedSystem, C, dofs, cons):
    M = system.matrix
    Mp = M[dofs][:, dofs]
    Cp = C[cons][:, dofs]
    points = system.mesh.vertices[system.dofmap.dof_vertex[dofs]]
    # multipliers couple whole coarse edges, so they go last
    order = np.concatenate([sps.nested_dissection(points), len(dofs) + np.arange(len(cons))])
    return sps.factorize(sp.bmat([[Mp, Cp.T], [Cp, None]], format="csr"), ordering=order)


def solve_patch(system: MixedSystem, qois: QoiSet, prob: PatchProblem,
                indices: Sequence[int]):
    """Trial and test corrector vectors for the QoIs ``indices`` sharing one patch.

    The fine matrix is block upper triangular in (u, q) and every functional
    acts on either u or q alone, so the bordered problem splits into a q
    system and a u system that are factorized separately.

    Returns (dofs-restricted trial, test, trial multipliers, test multipliers).
    """
    n_u = system.n_u
    M, C = system.matrix, qois.matrix
    d = prob.dofs
    iu, iq = np.flatnonzero(d < n_u), np.flatnonzero(d >= n_u)
    du, dq = d[iu], d[iq]
    if np.count_nonzero(M[dq][:, du].data):
        # not block triangular (e.g. a modified operator): no splitting
        return solve_patch_monolithic(system, qois, prob, indices)
    cons = prob.constraints
    cu_mask = np.asarray(qois.kind)[cons] == VERTEX
    cu, cq = cons[cu_mask], cons[~cu_mask]
    ku, kq = np.flatnonzero(cu_mask), np.flatnonzero(~cu_mask)
    nu_, nq_ = len(du), len(dq)

    m = len(indices)
    pos = {j: k for k, j in enumerate(cons)}
    e = np.zeros((len(cons), m))
    for col, i in enumerate(indices):
        e[pos[i], col] = 1.0
    B = M[du][:, dq]

    trial = np.zeros((len(d), m))
    test = np.zeros((len(d), m))
    mtr = np.zeros((len(cons), m))
    mte = np.zeros((len(cons), m))
    lu_q = _bordered_block(system, C, dq, cq) if nq_ else None
    lu_u = _bordered_block(system, C, du, cu) if nu_ else None

    # trial: q first, then u driven by the coupling block
    xq = np.zeros((nq_, m))
    if lu_q is not None:
        sol = lu_q.solve(np.vstack([np.zeros((nq_, m)), e[kq]]))
        xq, mtr[kq] = sol[:nq_], sol[nq_:]
    if lu_u is not None:
        sol = lu_u.solve(np.vstack([-(B @ xq), e[ku]]))
        trial[iu], mtr[ku] = sol[:nu_], sol[nu_:]
    trial[iq] = xq

    # test: u first (transposed), then q
    yu = np.zeros((nu_, m))
    if lu_u is not None:
        sol = lu_u.solve(np.vstack([np.zeros((nu_, m)), e[ku]]), transposed=True)
        yu, mte[ku] = sol[:nu_], sol[nu_:]
    if lu_q is not None:
        sol = lu_q.solve(np.vstack([-(B.T @ yu), e[kq]]), transposed=True)
        test[iq], mte[kq] = sol[:nq_], sol[nq_:]
    test[iu] = yu
    return trial, test, mtr, mte


def solve_patch_monolithic(system: MixedSystem, qois: QoiSet, prob: PatchProblem,
                           indices: Sequence[int]):
    """Same as :func:`solve_patch` with one factorization of the full bordered matrix."""
    Bm = bordered_matrix(system, qois, prob)
    lu = sps.factorize(Bm)
    nd = len(prob.dofs)
    pos = {j: k for k, j in enumerate(prob.constraints)}
    rhs = np.zeros((Bm.shape[0], len(indices)))
    for col, i in enumerate(indices):
        rhs[nd + pos[i], col] = 1.0
    trial = lu.solve(rhs)
    test = lu.solve(rhs, transposed=True)
    return trial[:nd], test[:nd], trial[nd:], test[nd:]


@dataclass
class CorrectorBasis:
    ell: Optional[int]               # None for global (ideal) correctors
    trial: sp.csc_matrix             # n_dofs x N, column i is the trial function of QoI i
    test: sp.csc_matrix
    patches: list                    # coarse element set per QoI
    trial_multipliers: list
    test_multipliers: list

    @property
    def n(self) -> int:
        return self.trial.shape[1]

    def constraint_residual(self, qois: QoiSet) -> float:
        eye = np.eye(self.n)
        r1 = np.abs((qois.matrix @ self.trial).toarray() - eye).max()
        r2 = np.abs((qois.matrix @ self.test).toarray() - eye).max()
        return float(max(r1, r2))


def corrector_patch(qois: QoiSet, i: int, ell: Optional[int]) -> np.ndarray:
    if ell is None:
        return np.arange(qois.coarse.n_triangles)
    return grow_patch(qois.coarse, qois.supports[i], ell)


def corrector(i: int, ell: Optional[int], side: str, system: MixedSystem,
              qois: QoiSet):
    """Single trial or test corrector as a global fine dof vector plus multipliers."""
    if side not in ("trial", "test"):
        raise ValueError("side must be 'trial' or 'test'")
    prob = patch_problem(system, qois, corrector_patch(qois, i, ell))
    try:
        tr, te, mtr, mte = solve_patch(system, qois, prob, [i])
    except sps.SingularMatrixError as exc:
        raise CorrectorError([(i, ell, str(exc))]) from exc
    x = np.zeros(system.dofmap.n_dofs)
    if side == "trial":
        x[prob.dofs] = tr[:, 0]
        mult = np.zeros(qois.n)
        mult[prob.constraints] = mtr[:, 0]
    else:
        x[prob.dofs] = te[:, 0]
        mult = np.zeros(qois.n)
        mult[prob.constraints] = mte[:, 0]
    return x, mult


def _cache_key(system: MixedSystem, qois: QoiSet, ell: Optional[int]) -> str:
    h = hashlib.sha256()
    h.update(repr((ell, qois.coarse.n_triangles, system.mesh.n_triangles)).encode())
    for arr in (system.matrix.indptr, system.matrix.indices, system.matrix.data,
                qois.matrix.indptr, qois.matrix.indices, qois.matrix.data):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:32]


def compute_basis(ell: Optional[int], system: MixedSystem, qois: QoiSet,
                  threads: int = 1, cache_dir: Optional[os.PathLike] = None) -> CorrectorBasis:
    """Trial and test correctors for every QoI; ell=None gives global correctors.

    QoIs whose patches coincide share one factorization.  Results are merged
    in QoI order, so the output does not depend on ``threads``.
    """
    cache_file = None
    if cache_dir is not None:
        cache_file = Path(cache_dir) / f"basis-{_cache_key(system, qois, ell)}.npz"
        if cache_file.exists():
            return _load_basis(cache_file, ell, qois)

    N = qois.n
    patches = [corrector_patch(qois, i, ell) for i in range(N)]
    groups: dict[bytes, list[int]] = {}
    for i, p in enumerate(patches):
        groups.setdefault(p.tobytes(), []).append(i)
    jobs = list(groups.values())

    def run(indices):
        prob = patch_problem(system, qois, patches[indices[0]])
        try:
            return indices, prob, solve_patch(system, qois, prob, indices), None
        except sps.SingularMatrixError as exc:
            return indices, prob, None, str(exc)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    n_dofs = system.dofmap.n_dofs
    trial_cols: list = [None] * N
    test_cols: list = [None] * N
    mtr: list = [None] * N
    mte: list = [None] * N
    failures = []
    for indices, prob, out, err in results:
        if out is None:
            failures += [(i, ell, err) for i in indices]
            continue
        tr, te, a, b = out
        for col, i in enumerate(indices):
            trial_cols[i] = (prob.dofs, tr[:, col])
            test_cols[i] = (prob.dofs, te[:, col])
            mtr[i] = (prob.constraints, a[:, col])
            mte[i] = (prob.constraints, b[:, col])
    if failures:
        raise CorrectorError(sorted(failures))

    basis = CorrectorBasis(ell, _columns(trial_cols, n_dofs), _columns(test_cols, n_dofs),
                           patches, mtr, mte)
    if cache_file is not None:
        _save_basis(cache_file, basis)
    return basis


def _columns(cols, n_rows: int) -> sp.csc_matrix:
    indptr = np.concatenate([[0], np.cumsum([len(r) for r, _ in cols])])
    indices = np.concatenate([r for r, _ in cols])
    data = np.concatenate([v for _, v in cols])
    return sp.csc_matrix((data, indices, indptr), shape=(n_rows, len(cols)))


def _save_basis(path: Path, basis: CorrectorBasis) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp,
             trial_data=basis.trial.data, trial_indices=basis.trial.indices,
             trial_indptr=basis.trial.indptr, test_data=basis.test.data,
             test_indices=basis.test.indices, test_indptr=basis.test.indptr,
             shape=np.array(basis.trial.shape))
    os.replace(tmp, path)


def _load_basis(path: Path, ell, qois: QoiSet) -> CorrectorBasis:
    z = np.load(path)
    shape = tuple(z["shape"])
    trial = sp.csc_matrix((z["trial_data"], z["trial_indices"], z["trial_indptr"]), shape=shape)
    test = sp.csc_matrix((z["test_data"], z["test_indices"], z["test_indptr"]), shape=shape)
    patches = [corrector_patch(qois, i, ell) for i in range(qois.n)]
    return CorrectorBasis(ell, trial, test, patches, [], [])


@dataclass
class LodSolution:
    coefficients: np.ndarray
    dofs: np.ndarray
    solution: FineSolution
    ell: Optional[int]
    basis: CorrectorBasis
    coarse_matrix: np.ndarray
    coarse_rhs: np.ndarray


def solve_lod(basis: CorrectorBasis, system: MixedSystem) -> LodSolution:
    """Petrov-Galerkin projection of the fine system onto the corrector bases."""
    if basis.trial.shape[0] != system.dofmap.n_dofs:
        raise ValueError("basis and system live on different fine meshes")
    K = sps.triple_product(basis.test, system.matrix, basis.trial)
    g = basis.test.T @ system.load
    try:
        c = sps.dense_solve(K, g)
    except sps.SingularMatrixError as exc:
        raise sps.SingularMatrixError(
            f"coarse Petrov-Galerkin matrix singular (ell={basis.ell}): {exc}") from exc
    x = basis.trial @ c
    return LodSolution(c, x, solution_from_dofs(system.dofmap, x), basis.ell, basis, K, g)


def global_saddle_point(system: MixedSystem, qois: QoiSet, i: int, side: str = "trial"):
    """Unlocalized bordered solve over all fine dofs; the oracle for ell -> infinity."""
    C = qois.matrix
    M = system.matrix if side == "trial" else system.matrix.T
    B = sp.bmat([[M, C.T], [C, None]], format="csr")
    rhs = np.zeros(B.shape[0])
    rhs[system.dofmap.n_dofs + i] = 1.0
    sol = sps.factorize(B).solve(rhs)
    return sol[:system.dofmap.n_dofs], sol[system.dofmap.n_dofs:]
