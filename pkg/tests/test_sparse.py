import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from nondiv_lod import sparse as sps


def gauss_solve(A, b):
    """Textbook elimination with partial pivoting; the dense oracle."""
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    n = len(b)
    for k in range(n):
        p = k + int(np.argmax(np.abs(A[k:, k])))
        A[[k, p]], b[[k, p]] = A[[p, k]], b[[p, k]]
        for i in range(k + 1, n):
            m = A[i, k] / A[k, k]
            A[i, k:] -= m * A[k, k:]
            b[i] -= m * b[k]
    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        x[i] = (b[i] - A[i, i + 1:] @ x[i + 1:]) / A[i, i]
    return x


def random_sparse(n, seed, density=0.2):
    rng = np.random.default_rng(seed)
    A = sp.random(n, n, density=density, random_state=rng, format="csr")
    return sps.canonical(A + sp.eye(n) * n * 0.1 + sp.random(n, n, density=0.05,
                                                               random_state=rng))


def test_seeded_20x20_against_dense_elimination():
    A = random_sparse(20, 12345)
    b = np.random.default_rng(7).standard_normal(20)
    f = sps.factorize(A)
    np.testing.assert_allclose(f.solve(b), gauss_solve(A.toarray(), b), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(f.solve(b, transposed=True), gauss_solve(A.toarray().T, b),
                               rtol=1e-10, atol=1e-12)


def test_zero_diagonal_needs_pivoting():
    A = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(sps.factorize(A).solve(np.array([2.0, 3.0])), [3.0, 2.0])


def test_triangular():
    L = np.array([[2.0, 0, 0], [1, 3, 0], [0, -1, 4]])
    b = np.array([2.0, 7.0, 6.0])
    np.testing.assert_allclose(sps.factorize(sp.csr_matrix(L)).solve(b), [1.0, 2.0, 2.0])


def test_structural_singularity_reported():
    A = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(sps.SingularMatrixError) as err:
        sps.factorize(A)
    assert err.value.pivot == 1


def test_numerical_singularity_detected():
    A = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(sps.SingularMatrixError):
        sps.factorize(A).solve(np.array([1.0, 1.0]))


def test_shape_checks():
    with pytest.raises(ValueError):
        sps.factorize(sp.csr_matrix(np.ones((2, 3))))
    with pytest.raises(ValueError):
        sps.matvec(sp.csr_matrix(np.ones((2, 3))), np.ones(2))
    with pytest.raises(ValueError):
        sps.factorize(sp.eye(3, format="csr")).solve(np.ones(4))


def test_canonical_sums_duplicates():
    A = sp.csr_matrix((np.array([1.0, 2.0]), (np.array([0, 0]), np.array([1, 1]))), shape=(2, 2))
    C = sps.canonical(A)
    assert C.nnz == 1 and C[0, 1] == 3.0


def test_dense_solve_and_singular():
    K = np.array([[0.0, 2.0], [1.0, 1.0]])
    np.testing.assert_allclose(sps.dense_solve(K, np.array([2.0, 3.0])), [2.0, 1.0])
    with pytest.raises(sps.SingularMatrixError):
        sps.dense_solve(np.ones((2, 2)), np.ones(2))


def test_dump_is_one_based():
    text = sps.dump(sp.csr_matrix(np.array([[0.0, 5.0]])))
    assert text.splitlines()[1:] == ["1 2 1", "1 2 5"]


def test_triple_product():
    rng = np.random.default_rng(0)
    P, M, Q = (sp.csr_matrix(rng.standard_normal(s)) for s in ((5, 2), (5, 4), (4, 3)))
    np.testing.assert_allclose(sps.triple_product(P, M, Q),
                               P.toarray().T @ M.toarray() @ Q.toarray())


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 30), st.integers(0, 10_000))
def test_permuted_system_same_solution(n, seed):
    A = random_sparse(n, seed, density=0.3)
    b = np.random.default_rng(seed).standard_normal(n)
    perm = np.random.default_rng(seed + 1).permutation(n)
    x = sps.factorize(A).solve(b)
    P = sp.eye(n, format="csr")[perm]
    y = sps.factorize(P @ A @ P.T).solve(P @ b)
    np.testing.assert_allclose(P.T @ y, x, rtol=1e-8, atol=1e-10)
    z = sps.factorize(A, ordering=perm).solve(b)
    np.testing.assert_allclose(z, x, rtol=1e-8, atol=1e-10)


def test_nested_dissection_is_permutation():
    s = np.linspace(0, 1, 30)
    pts = np.array([(a, b) for a in s for b in s])
    order = sps.nested_dissection(pts, leaf=10)
    assert sorted(order) == list(range(len(pts)))


def test_debug_residual_check(monkeypatch):
    monkeypatch.setattr(sps, "DEBUG_RESIDUAL_TOL", 1e-12)
    A = random_sparse(10, 3)
    sps.factorize(A).solve(np.ones(10))
