import numpy as np
import pytest
import scipy.sparse as sp

from nondiv_lod import sparse as sps
from nondiv_lod.coeffs import builtin_field, builtin_rhs, cordes_analyze
from nondiv_lod.lod import (CorrectorError, compute_basis, corrector, corrector_patch,
                            default_ell, global_saddle_point, patch_problem, solve_lod,
                            solve_patch, solve_patch_monolithic)
from nondiv_lod.mesh import refine, uniform_mesh
from nondiv_lod.mixed_fem import MixedSystem, assemble, solve_fine
from nondiv_lod.qoi import apply_qois, build_qois


def setup(n, fine_n, field="monoscale", f=None):
    fld = builtin_field(field, 2.0 ** -3 if field != "monoscale" else None)
    rhs, _ = builtin_rhs("monoscale_exact")
    c = uniform_mesh(n)
    fine = refine(c, int(np.log2(fine_n // n)))
    system = assemble(fine, fld, cordes_analyze(fld).gamma, rhs if f is None else f)
    return system, build_qois(c, fine, system.dofmap)


@pytest.fixture(scope="module")
def toy():
    return setup(2, 16)


@pytest.fixture(scope="module")
def medium():
    return setup(4, 16)


def test_default_ell():
    assert [default_ell(2.0 ** -k) for k in range(1, 6)] == [1, 2, 3, 4, 5]


def test_toy_basis_constraints(toy):
    system, qois = toy
    b = compute_basis(2, system, qois)
    assert b.trial.shape == (system.dofmap.n_dofs, 17) and b.test.shape == b.trial.shape
    assert b.constraint_residual(qois) <= 1e-9


@pytest.mark.parametrize("side", ["trial", "test"])
def test_large_patch_matches_global_saddle_point(toy, side):
    system, qois = toy
    for i in range(qois.n):
        x, _ = corrector(i, 4, side, system, qois)
        y, _ = global_saddle_point(system, qois, i, side)
        assert np.linalg.norm(x - y) <= 1e-10 * np.linalg.norm(y)


def test_split_solve_matches_single_bordered_solve(medium):
    system, qois = medium
    for i in (0, 7, qois.n - 1):
        prob = patch_problem(system, qois, corrector_patch(qois, i, 1))
        a = solve_patch(system, qois, prob, [i])
        b = solve_patch_monolithic(system, qois, prob, [i])
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, atol=1e-10)


def test_ell_zero_basis(medium):
    system, qois = medium
    b = compute_basis(0, system, qois)
    assert b.constraint_residual(qois) <= 1e-9


def test_support_inside_patch(medium):
    system, qois = medium
    ell = 1
    b = compute_basis(ell, system, qois)
    fine = system.mesh
    vert = system.dofmap.dof_vertex
    for i in range(qois.n):
        inside_tris = np.isin(fine.parent, b.patches[i])
        allowed = np.zeros(fine.n_vertices, bool)
        allowed[fine.triangles[inside_tris].ravel()] = True
        for mat in (b.trial, b.test):
            rows = mat[:, i].nonzero()[0]
            assert allowed[vert[rows]].all()


def test_symmetric_operator_gives_equal_trial_and_test(toy):
    system, qois = toy
    M = system.matrix
    sym = MixedSystem(sps.canonical(0.5 * (M + M.T)), system.load, system.dofmap)
    for i in (0, 5, 16):
        x, _ = corrector(i, 1, "trial", sym, qois)
        y, _ = corrector(i, 1, "test", sym, qois)
        np.testing.assert_allclose(x, y, atol=1e-10)


def test_corrector_rejects_bad_side(toy):
    with pytest.raises(ValueError):
        corrector(0, 1, "both", *toy)


def test_ideal_qoi_conservation(medium):
    system, qois = medium
    lod = solve_lod(compute_basis(None, system, qois), system)
    ref = solve_fine(system)
    diff = apply_qois(qois, ref.dofs) - apply_qois(qois, lod.dofs)
    assert np.abs(diff).max() <= 1e-8


def test_localized_qoi_error_decays(medium):
    system, qois = medium
    ref = apply_qois(qois, solve_fine(system).dofs)
    errs = [np.abs(ref - apply_qois(qois, solve_lod(compute_basis(l, system, qois),
                                                    system).dofs)).max()
            for l in range(4)]
    for a, b in zip(errs, errs[1:]):
        assert b <= 1.1 * a + 1e-12


def test_corrector_decay_towards_ideal(medium):
    system, qois = medium
    ideal = compute_basis(None, system, qois)
    dist = []
    for ell in (0, 1, 2, 8):
        b = compute_basis(ell, system, qois)
        dist.append(sp.linalg.norm(b.trial - ideal.trial))
    assert all(b <= a for a, b in zip(dist, dist[1:]))
    assert dist[-1] < 1e-10 * sp.linalg.norm(ideal.trial)


def test_full_domain_lod_equals_ideal(medium):
    system, qois = medium
    a = solve_lod(compute_basis(None, system, qois), system)
    b = solve_lod(compute_basis(8, system, qois), system)
    assert np.abs(a.dofs - b.dofs).max() <= 1e-9


def test_petrov_galerkin_consistency(medium):
    system, qois = medium
    lod = solve_lod(compute_basis(1, system, qois), system)
    r = lod.basis.test.T @ (system.matrix @ lod.dofs - system.load)
    assert np.abs(r).max() <= 1e-9 * max(1.0, np.abs(lod.coarse_rhs).max())
    np.testing.assert_allclose(lod.basis.trial @ lod.coefficients, lod.dofs)


def test_zero_rhs_gives_zero_solution():
    system, qois = setup(2, 8, f=lambda x: np.zeros(np.asarray(x).shape[:-1]))
    lod = solve_lod(compute_basis(1, system, qois), system)
    assert not lod.coefficients.any() and not lod.dofs.any()


def test_reconstruction_satisfies_boundary_conditions(medium):
    system, qois = medium
    lod = solve_lod(compute_basis(1, system, qois), system)
    sol = lod.solution
    bd = system.mesh.boundary_vertex
    assert not sol.u[bd].any()
    x = system.mesh.vertices
    assert not sol.q[np.isclose(np.abs(x[:, 0]), 1.0), 1].any()
    assert not sol.q[np.isclose(np.abs(x[:, 1]), 1.0), 0].any()


def test_threads_and_cache_are_deterministic(medium, tmp_path):
    system, qois = medium
    a = compute_basis(1, system, qois, threads=1)
    b = compute_basis(1, system, qois, threads=3, cache_dir=tmp_path)
    c = compute_basis(1, system, qois, cache_dir=tmp_path)
    assert len(list(tmp_path.glob("*.npz"))) == 1
    for m in (b, c):
        assert (a.trial != m.trial).nnz == 0 and (a.test != m.test).nnz == 0


def test_mismatched_basis_rejected(toy, medium):
    with pytest.raises(ValueError):
        solve_lod(compute_basis(1, *setup(2, 8)), medium[0])


def test_singular_corrector_reported(toy, monkeypatch):
    system, qois = toy

    def boom(*args, **kwargs):
        raise sps.SingularMatrixError("forced")

    monkeypatch.setattr("nondiv_lod.lod.solve_patch", boom)
    with pytest.raises(CorrectorError) as err:
        compute_basis(1, system, qois)
    assert len(err.value.failures) == 17
