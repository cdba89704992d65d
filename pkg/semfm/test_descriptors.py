import numpy as np
import pytest
import scipy.linalg as sla

from conftest import bumpy_sphere, rotation
from core.descriptors import (
    DescriptorMatrix, diffuse_descriptors, indicator_functions, vertex_cluster_assignment, wks_descriptors,
    wks_functions,
)
from core.mesh import cotangent_laplacian, make_grid, vertex_areas
from core.semantics import AnchorPair, AnchorSet, SemanticPointCloud
from core.spectral import SpectralBasis, compute_basis
from errors import InputError


def anchors(*pairs):
    return AnchorSet(tuple(AnchorPair(c1, c2, 0.5) for c1, c2 in pairs))


def test_vertex_assignment_uses_nearest_point():
    grid = make_grid(4, 4)
    pc = SemanticPointCloud(np.array([[0.0, 0.0, 0.1], [1.0, 1.0, 0.1], [0.0, 1.0, 0.1]]), np.eye(3))
    labels = vertex_cluster_assignment(grid, pc, np.array([0, 1, 2]))
    # vertex 0 is (0, 0, 0), the last one is (1, 1, 0)
    assert labels[0] == 0
    assert labels[-1] == 1
    assert labels[4] == 2
    with pytest.raises(InputError):
        vertex_cluster_assignment(grid, pc, np.array([0, 1]))


def test_vertex_assignment_ties_go_to_lowest_point_index():
    grid = make_grid(3, 3)
    # both points are equally far from every vertex of the z = 0 plane
    pc = SemanticPointCloud(np.array([[0.5, 0.5, 1.0], [0.5, 0.5, -1.0]]), np.eye(2))
    labels = vertex_cluster_assignment(grid, pc, np.array([3, 5]))
    np.testing.assert_array_equal(labels, 3)


def test_vertex_assignment_scans_past_a_fully_tied_candidate_list():
    grid = make_grid(3, 3)
    # six points at distance 1 from vertex 0, more than the tree is asked for
    pts = np.array([[0, 0, 1], [-1, 0, 0], [0, -1, 0], [0, 0, -1], [1, 0, 0], [0, 1, 0]], dtype=float)
    order = [5, 3, 4, 1, 2, 0]
    pc = SemanticPointCloud(pts[order], np.eye(6))
    labels = vertex_cluster_assignment(grid, pc, np.array([10, 11, 12, 13, 14, 15]))
    assert labels[0] == 10


@pytest.mark.parametrize("seed", range(20))
def test_vertex_assignment_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    grid = make_grid(int(rng.integers(3, 15)), int(rng.integers(3, 15)))
    n = int(rng.integers(1, 60))
    pc = SemanticPointCloud(rng.uniform(-0.5, 1.5, size=(n, 3)), rng.standard_normal((n, 4)))
    labels = rng.integers(0, 5, size=n)
    d = ((grid.vertices[:, None, :] - pc.points[None, :, :]) ** 2).sum(axis=2)
    np.testing.assert_array_equal(vertex_cluster_assignment(grid, pc, labels), labels[np.argmin(d, axis=1)])


def test_indicator_functions_columns_follow_anchor_order():
    assignment = np.array([0, 1, 1, 2, 2, 2])
    F1 = indicator_functions(assignment, anchors((2, 0), (0, 1)), side=1)
    np.testing.assert_array_equal(F1[:, 0], [0, 0, 0, 1, 1, 1])
    np.testing.assert_array_equal(F1[:, 1], [1, 0, 0, 0, 0, 0])
    F2 = indicator_functions(assignment, anchors((2, 0), (0, 1)), side=2)
    np.testing.assert_array_equal(F2[:, 0], [1, 0, 0, 0, 0, 0])
    with pytest.raises(InputError, match="own no vertex"):
        indicator_functions(assignment, anchors((4, 0)), side=1)


def test_diffused_descriptors_are_unit_and_nonnegative(bumpy):
    basis = compute_basis(bumpy, 30)
    F = np.zeros((bumpy.n_vertices, 2))
    F[:10, 0] = 1.0
    F[50:80, 1] = 1.0
    D = diffuse_descriptors(basis, F, t=0.05, anchors=((0, 1), (2, 3)))
    assert isinstance(D, DescriptorMatrix)
    assert D.alpha == 2
    assert D.anchors == ((0, 1), (2, 3))
    np.testing.assert_allclose(np.linalg.norm(D.values, axis=0), 1.0, atol=1e-8)
    assert D.values.min() >= 0.0


def test_diffused_spike_matches_dense_exponential():
    mesh = bumpy_sphere(1)  # 42 vertices
    n = mesh.n_vertices
    L = cotangent_laplacian(mesh).toarray()
    m = vertex_areas(mesh)
    # full generalized eigenbasis, so truncation loses nothing
    evals, evecs = sla.eigh(L, np.diag(m))
    basis = SpectralBasis(np.maximum(evals, 0.0), evecs, m)
    t = mesh.mean_edge_length() ** 2
    spike = np.zeros((n, 1))
    spike[3] = 1.0

    got = diffuse_descriptors(basis, spike, t).values[:, 0]
    oracle = np.maximum(sla.expm(-t * (L / m[:, None])) @ spike[:, 0], 0.0)
    np.testing.assert_allclose(got, oracle / np.linalg.norm(oracle), atol=1e-4)


def test_diffusion_commutes_with_column_permutation(bumpy):
    basis = compute_basis(bumpy, 30)
    rng = np.random.default_rng(4)
    F = (rng.random((bumpy.n_vertices, 5)) < 0.2).astype(np.float64)
    F[0] = 1.0
    perm = rng.permutation(5)
    D = diffuse_descriptors(basis, F, 0.05).values
    np.testing.assert_allclose(diffuse_descriptors(basis, F[:, perm], 0.05).values, D[:, perm], atol=1e-12)


def test_diffused_descriptors_reject_empty_regions(bumpy):
    basis = compute_basis(bumpy, 10)
    F = np.zeros((bumpy.n_vertices, 2))
    F[0, 0] = 1.0
    with pytest.raises(InputError, match="empty"):
        diffuse_descriptors(basis, F, 0.1)
    with pytest.raises(InputError):
        diffuse_descriptors(basis, np.zeros((bumpy.n_vertices, 0)), 0.1)


def test_descriptors_are_invariant_under_rigid_motion(bumpy):
    moved = bumpy.with_vertices(bumpy.vertices @ rotation(3).T + np.array([2.0, -1.0, 0.5]))
    b1, b2 = compute_basis(bumpy, 25), compute_basis(moved, 25)
    F = np.zeros((bumpy.n_vertices, 1))
    F[5:40, 0] = 1.0
    np.testing.assert_allclose(diffuse_descriptors(b1, F, 0.05).values, diffuse_descriptors(b2, F, 0.05).values,
                               atol=1e-6)
    np.testing.assert_allclose(wks_descriptors(b1, 20), wks_descriptors(b2, 20), atol=1e-6)


def test_wks_shape_and_normalization(bumpy):
    basis = compute_basis(bumpy, 30)
    W = wks_descriptors(basis, n_energies=16, normalized=False)
    assert W.shape == (bumpy.n_vertices, 16)
    assert np.all(np.isfinite(W))
    assert W.min() >= 0.0
    Wn = wks_descriptors(basis, n_energies=16, normalized=True)
    np.testing.assert_allclose(basis.mass @ Wn, 1.0, atol=1e-6)


def test_wks_needs_positive_eigenvalues(bumpy):
    with pytest.raises(InputError):
        wks_descriptors(compute_basis(bumpy, 2))
    with pytest.raises(InputError):
        wks_descriptors(compute_basis(bumpy, 10), n_energies=0)


def test_wks_ignores_eigenfunction_signs(bumpy):
    basis = compute_basis(bumpy, 30)
    signs = np.where(np.random.default_rng(2).random(basis.k) < 0.5, -1.0, 1.0)
    flipped = SpectralBasis(basis.eigenvalues, basis.eigenfunctions * signs[None, :], basis.mass)
    np.testing.assert_array_equal(wks_descriptors(flipped, 16), wks_descriptors(basis, 16))


def test_wks_functions_have_unit_mean_value(bumpy):
    basis = compute_basis(bumpy, 30)
    big = compute_basis(bumpy.with_vertices(2.0 * bumpy.vertices), 30)
    F = wks_functions(basis, n_energies=16)
    np.testing.assert_allclose(basis.mass @ F / basis.area, 1.0, atol=1e-6)
    # eigenfunctions and eigenvalues rescale with the area, the functions do not
    np.testing.assert_allclose(wks_functions(big, n_energies=16), F, rtol=1e-5)
    np.testing.assert_array_equal(wks_functions(basis, 16, normalized=False), wks_descriptors(basis, 16, normalized=False))
