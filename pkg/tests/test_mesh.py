import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nondiv_lod.mesh import (coordinate_permutation, levels_between, patch, prolong, refine,
                             uniform_mesh)


def test_single_cell():
    m = uniform_mesh(1)
    assert (m.n_vertices, m.n_edges, m.n_triangles) == (4, 5, 2)
    assert len(m.interior_vertices) == 0


def test_two_by_two():
    m = uniform_mesh(2)
    assert (m.n_vertices, m.n_edges, m.n_triangles) == (9, 16, 8)
    assert list(m.interior_vertices) == [4]
    np.testing.assert_allclose(m.areas, 0.5)
    assert np.all(m.signed_areas > 0)


def test_rejects_empty_mesh():
    with pytest.raises(ValueError):
        uniform_mesh(0)


@pytest.mark.parametrize("n", [1, 2, 3, 5, 8])
def test_euler_characteristic(n):
    m = uniform_mesh(n)
    assert m.n_vertices - m.n_edges + m.n_triangles == 1
    assert m.boundary_edge.sum() == 4 * n
    np.testing.assert_allclose(m.areas.sum(), 4.0)


@pytest.mark.parametrize("n,k", [(1, 1), (2, 2), (3, 1)])
def test_refinement_counts_and_maps(n, k):
    c = uniform_mesh(n)
    f = refine(c, k)
    assert f.n_triangles == c.n_triangles * 4 ** k
    assert f.n_vertices - f.n_edges + f.n_triangles == 1
    np.testing.assert_allclose(f.areas.sum(), 4.0)
    # children lie inside their parent: parent areas are recovered exactly
    np.testing.assert_allclose(np.bincount(f.parent, weights=f.areas), c.areas)
    # coarse vertices keep their coordinates
    hit = np.flatnonzero(f.coarse_vertex >= 0)
    np.testing.assert_allclose(f.vertices[hit], c.vertices[f.coarse_vertex[hit]])
    # fine vertices on coarse edges are collinear with them
    on = np.flatnonzero(f.vertex_coarse_edge >= 0)
    a, b = c.vertices[c.edges[f.vertex_coarse_edge[on]]].transpose(1, 0, 2)
    d, e = b - a, f.vertices[on] - a
    np.testing.assert_allclose(d[:, 0] * e[:, 1] - d[:, 1] * e[:, 0], 0.0, atol=1e-14)
    assert np.sum(f.edge_coarse_edge >= 0) == c.n_edges * 2 ** k
    assert levels_between(c, f) == k


def test_refine_matches_uniform_vertex_set():
    f = refine(uniform_mesh(2), 2)
    perm = coordinate_permutation(f, uniform_mesh(8))
    np.testing.assert_allclose(f.vertices[perm], uniform_mesh(8).vertices)


def test_edge_normals_unit_and_orthogonal():
    m = uniform_mesh(3)
    t = m.vertices[m.edges[:, 1]] - m.vertices[m.edges[:, 0]]
    np.testing.assert_allclose(np.linalg.norm(m.edge_normals, axis=1), 1.0)
    np.testing.assert_allclose(np.sum(t * m.edge_normals, axis=1), 0.0, atol=1e-15)


def test_barycentric_gradients_sum_to_zero():
    m = refine(uniform_mesh(2), 1)
    np.testing.assert_allclose(m.barycentric_gradients.sum(axis=1), 0.0, atol=1e-13)


def test_prolong_reproduces_affine():
    c = uniform_mesh(2)
    f = refine(c, 2)
    lin = lambda x: 1.0 + 2.0 * x[:, 0] - 3.0 * x[:, 1]
    np.testing.assert_allclose(prolong(c, lin(c.vertices), 2), lin(f.vertices), atol=1e-14)


def test_patch_zero_is_seed_and_full_domain():
    m = uniform_mesh(4)
    assert list(patch(m, [5], 0)) == [5]
    assert len(patch(m, [0], 10)) == m.n_triangles
    with pytest.raises(ValueError):
        patch(m, [], 1)
    with pytest.raises(IndexError):
        patch(m, [m.n_triangles], 1)
    with pytest.raises(ValueError):
        patch(m, [0], -1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 49), st.integers(0, 4), st.integers(0, 4))
def test_patch_monotone_and_composes(t, a, b):
    m = uniform_mesh(5)
    pa = patch(m, [t], a)
    assert set(pa) <= set(patch(m, [t], a + 1))
    assert list(patch(m, pa, b)) == list(patch(m, [t], a + b))
