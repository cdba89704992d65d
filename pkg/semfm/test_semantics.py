import itertools
import json

import numpy as np
import pytest

from core.mesh import make_icosphere
from core.semantics import (
    AnchorPair, AnchorSet, ClusterSet, LiftedSampleSet, SemanticPointCloud, aggregate_samples,
    build_semantic_graph, cluster_similarity, load_samples, sample_surface, save_samples, select_anchors,
    spectral_cluster,
)
from errors import InputError, NumericalError, UnsupportedSizeError


@pytest.fixture(scope="module")
def sphere():
    return make_icosphere(2)


def random_samples(mesh, n, d, seed):
    rng = np.random.default_rng(seed)
    pts, _ = sample_surface(mesh, n, rng)
    return LiftedSampleSet(pts, rng.standard_normal((n, d)))


def two_group_cloud(n_per_group=20, seed=0):
    rng = np.random.default_rng(seed)
    a = np.column_stack([rng.random(n_per_group), rng.random(n_per_group), np.zeros(n_per_group)])
    b = a + np.array([10.0, 0.0, 0.0])
    emb = np.vstack([np.tile([1.0, 0.0], (n_per_group, 1)), np.tile([0.0, 1.0], (n_per_group, 1))])
    emb += 1e-3 * rng.standard_normal(emb.shape)
    return SemanticPointCloud(np.vstack([a, b]), emb)


# ---------------- aggregation ----------------
@pytest.mark.parametrize("seed", range(20))
def test_aggregate_matches_brute_force_radius_average(sphere, seed):
    samples = random_samples(sphere, 50 + 15 * seed, 4, seed=seed)
    radius = (0.05, 0.15, 0.3, 0.6)[seed % 4]
    pc = aggregate_samples(sphere, samples, 80, radius, seed=100 + seed)

    points, _ = sample_surface(sphere, 80, np.random.default_rng(100 + seed))
    np.testing.assert_array_equal(pc.points, points)
    for p, got in zip(points, pc.embeddings):
        d = np.linalg.norm(samples.positions - p, axis=1)
        inside = d <= radius
        expected = samples.embeddings[inside].mean(axis=0) if inside.any() else samples.embeddings[np.argmin(d)]
        np.testing.assert_allclose(got, expected, atol=1e-10)


def test_aggregate_constant_embedding_and_nearest_fallback(sphere):
    pts, _ = sample_surface(sphere, 5, np.random.default_rng(0))
    samples = LiftedSampleSet(pts, np.tile([0.25, -1.0, 3.0], (5, 1)))
    pc = aggregate_samples(sphere, samples, 40, radius=1e-4, seed=2)
    np.testing.assert_allclose(pc.embeddings, np.tile([0.25, -1.0, 3.0], (40, 1)))


def test_aggregate_is_seeded_and_ignores_sample_order(sphere):
    samples = random_samples(sphere, 200, 3, seed=2)
    perm = np.random.default_rng(9).permutation(len(samples))
    shuffled = LiftedSampleSet(samples.positions[perm], samples.embeddings[perm])
    a = aggregate_samples(sphere, samples, 50, 0.4, seed=3)
    b = aggregate_samples(sphere, shuffled, 50, 0.4, seed=3)
    np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_allclose(a.embeddings, b.embeddings, atol=1e-12)


def test_aggregate_preconditions(sphere):
    samples = random_samples(sphere, 10, 2, seed=0)
    with pytest.raises(InputError):
        aggregate_samples(sphere, LiftedSampleSet(np.zeros((0, 3)), np.zeros((0, 2))), 10, 0.1)
    with pytest.raises(InputError):
        aggregate_samples(sphere, samples, 10, 0.0)
    with pytest.raises(InputError):
        aggregate_samples(sphere, samples, 0, 0.1)


def test_point_cloud_rejects_coincident_points():
    pts = np.array([[0, 0, 0], [1, 0, 0], [1e-12, 0, 0]], dtype=float)
    with pytest.raises(InputError, match="coincident"):
        SemanticPointCloud(pts, np.ones((3, 2)))


# ---------------- graph ----------------
def test_graph_matches_dense_knn_oracle():
    rng = np.random.default_rng(4)
    pts = rng.random((50, 3))
    emb = rng.standard_normal((50, 6))
    g = build_semantic_graph(SemanticPointCloud(pts, emb), k_nn=4, sigma=0.7)

    dist = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    np.fill_diagonal(dist, np.inf)
    adj = np.zeros((50, 50), dtype=bool)
    for i in range(50):
        adj[i, np.argsort(dist[i])[:4]] = True
    adj |= adj.T
    emb_d2 = ((emb[:, None] - emb[None]) ** 2).sum(axis=2)
    expected = np.where(adj, np.exp(-emb_d2 / 0.7 ** 2), 0.0)
    np.testing.assert_allclose(g.weights.toarray(), expected, rtol=1e-12, atol=0)
    assert g.sigma == 0.7
    assert np.all(np.asarray(g.weights.sum(axis=1)).ravel() > 0)
    assert len(g.edges) == int(adj.sum() // 2)


def test_graph_weight_at_sigma_distance_is_inverse_e():
    pc = SemanticPointCloud(np.array([[0, 0, 0], [1, 0, 0]], dtype=float), np.array([[0.0, 0.0], [0.5, 0.0]]))
    explicit = build_semantic_graph(pc, k_nn=1, sigma=0.5)
    assert explicit.weights[0, 1] == pytest.approx(np.exp(-1.0))
    median = build_semantic_graph(pc, k_nn=1)
    assert median.sigma == pytest.approx(0.5)
    assert median.weights[1, 0] == pytest.approx(0.36787944117144233)


def test_graph_identical_embeddings_give_unit_weights():
    pts = np.random.default_rng(0).random((12, 3))
    g = build_semantic_graph(SemanticPointCloud(pts, np.ones((12, 3))), k_nn=3)
    assert g.sigma == 1.0
    np.testing.assert_array_equal(g.weights.data, 1.0)


def test_graph_is_invariant_under_orthogonal_embedding_transform():
    rng = np.random.default_rng(1)
    pts, emb = rng.random((30, 3)), rng.standard_normal((30, 5))
    Q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    a = build_semantic_graph(SemanticPointCloud(pts, emb), k_nn=5)
    b = build_semantic_graph(SemanticPointCloud(pts + 3.0, emb @ Q), k_nn=5)
    np.testing.assert_allclose(a.weights.toarray(), b.weights.toarray(), atol=1e-12)


def test_graph_preconditions():
    pc = SemanticPointCloud(np.eye(3), np.ones((3, 2)))
    with pytest.raises(InputError):
        build_semantic_graph(pc, k_nn=3)
    with pytest.raises(InputError):
        build_semantic_graph(pc, k_nn=1, sigma=-1.0)


# ---------------- clustering ----------------
def test_spectral_cluster_recovers_bipartition():
    pc = two_group_cloud()
    cs = spectral_cluster(build_semantic_graph(pc, k_nn=8), 2, seed=0)
    np.testing.assert_array_equal(cs.labels, [0] * 20 + [1] * 20)
    np.testing.assert_allclose(cs.centroids[0], pc.embeddings[:20].mean(axis=0), atol=1e-8)
    np.testing.assert_array_equal(cs.sizes, [20, 20])


def test_spectral_cluster_is_deterministic_and_ordered_by_first_occurrence(sphere):
    samples = random_samples(sphere, 400, 3, seed=3)
    pc = aggregate_samples(sphere, samples, 120, 0.3, seed=0)
    g = build_semantic_graph(pc, k_nn=8)
    a = spectral_cluster(g, 4, seed=11)
    b = spectral_cluster(g, 4, seed=11)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.labels[0] == 0
    _, first = np.unique(a.labels, return_index=True)
    assert list(np.argsort(first)) == [0, 1, 2, 3]
    assert a.sizes.min() > 0
    for c in range(4):
        np.testing.assert_allclose(a.centroids[c], pc.embeddings[a.labels == c].mean(axis=0), atol=1e-8)


def test_spectral_cluster_one_point_per_cluster():
    pc = SemanticPointCloud(np.random.default_rng(0).random((6, 3)), np.arange(12, dtype=float).reshape(6, 2))
    cs = spectral_cluster(build_semantic_graph(pc, k_nn=2), 6)
    np.testing.assert_array_equal(cs.labels, np.arange(6))
    np.testing.assert_allclose(cs.centroids, pc.embeddings)


def test_spectral_cluster_bounds():
    g = build_semantic_graph(two_group_cloud(5), k_nn=2)
    with pytest.raises(InputError):
        spectral_cluster(g, 1)
    with pytest.raises(InputError):
        spectral_cluster(g, 11)


# ---------------- similarity ----------------
def test_cluster_similarity_values(caplog):
    cs1 = ClusterSet(np.array([0, 1, 2]), np.array([[1.0, 0.0], [0.0, 2.0], [0.0, 0.0]]))
    cs2 = ClusterSet(np.array([0, 1]), np.array([[3.0, 0.0], [1.0, 1.0]]))
    with caplog.at_level("WARNING"):
        S = cluster_similarity(cs1, cs2)
    np.testing.assert_allclose(S, [[1.0, 1 / np.sqrt(2)], [0.0, 1 / np.sqrt(2)], [0.0, 0.0]], atol=1e-12)
    assert "zero-norm" in caplog.text
    self_sim = cluster_similarity(cs2, cs2)
    np.testing.assert_allclose(np.diag(self_sim), 1.0, atol=1e-12)
    with pytest.raises(InputError):
        cluster_similarity(cs1, ClusterSet(np.array([0]), np.ones((1, 3))))


# ---------------- anchors ----------------
def brute_force_total(S, alpha):
    K1, K2 = S.shape
    best = -np.inf
    for rows in itertools.combinations(range(K1), alpha):
        for cols in itertools.permutations(range(K2), alpha):
            best = max(best, sum(S[r, c] for r, c in zip(rows, cols)))
    return best


def test_select_anchors_five_region_scenario():
    rng = np.random.default_rng(0)
    S = rng.uniform(0.0, 0.5, (5, 5))
    S[2, 1], S[3, 4], S[2, 4], S[3, 1] = 0.89, 0.85, 0.87, 0.3
    anchors = select_anchors(S, 2)
    assert [(p.c1, p.c2) for p in anchors.pairs] == [(2, 1), (3, 4)]
    assert [p.similarity for p in anchors.pairs] == [0.89, 0.85]
    assert anchors.total == pytest.approx(1.74)
    assert anchors.clusters(1) == [2, 3]
    assert anchors.clusters(2) == [1, 4]


def test_select_anchors_single_entry():
    anchors = select_anchors(np.array([[0.3]]), 1)
    assert anchors.pairs == (AnchorPair(0, 0, 0.3),)


@pytest.mark.parametrize("shape", [(5, 5), (3, 6), (6, 4)])
def test_select_anchors_matches_exhaustive_oracle(shape):
    rng = np.random.default_rng(sum(shape))
    for _ in range(100 if shape == (5, 5) else 20):
        S = rng.uniform(-1.0, 1.0, shape)
        for alpha in range(1, min(3, min(shape)) + 1):
            anchors = select_anchors(S, alpha)
            assert anchors.alpha == alpha
            assert anchors.total == pytest.approx(brute_force_total(S, alpha), abs=1e-9)
            sims = [p.similarity for p in anchors.pairs]
            assert sims == sorted(sims, reverse=True)


def test_select_anchors_total_grows_with_alpha_on_nonnegative_matrix():
    S = np.random.default_rng(3).uniform(0.0, 1.0, (4, 4))
    totals = [select_anchors(S, a).total for a in range(1, 5)]
    assert totals == sorted(totals)


def test_select_anchors_ties_go_to_smallest_pairs():
    anchors = select_anchors(np.full((3, 3), 0.5), 2)
    assert [(p.c1, p.c2) for p in anchors.pairs] == [(0, 0), (1, 1)]


def test_select_anchors_skips_forbidden_pairs():
    S = np.array([[-np.inf, 0.1], [0.1, 0.9]])
    anchors = select_anchors(S, 2)
    assert sorted((p.c1, p.c2) for p in anchors.pairs) == [(0, 1), (1, 0)]
    with pytest.raises(InputError, match="eligible"):
        select_anchors(np.array([[-np.inf, -np.inf], [0.2, 0.4]]), 2)


def test_select_anchors_errors():
    with pytest.raises(InputError):
        select_anchors(np.zeros((2, 3)), 3)
    with pytest.raises(UnsupportedSizeError):
        select_anchors(np.zeros((11, 11)), 1)
    with pytest.raises(InputError):
        select_anchors(np.array([[np.nan, 0.0]]), 1)
    with pytest.raises(InputError):
        select_anchors(np.array([[1.5, 0.0]]), 1)


def test_anchor_set_must_be_one_to_one():
    with pytest.raises(NumericalError):
        AnchorSet((AnchorPair(0, 1, 0.5), AnchorPair(0, 2, 0.4)))


# ---------------- sample files ----------------
def test_sample_files_json_and_binary(tmp_path, sphere):
    samples = random_samples(sphere, 25, 7, seed=6)
    js = save_samples(samples, tmp_path / "s.json")
    data = json.loads(js.read_text())
    assert data["d"] == 7 and len(data["samples"]) == 25
    assert set(data["samples"][0]) == {"p", "e"}

    bn = save_samples(samples, tmp_path / "s.bin", binary=True)
    assert bn.read_bytes()[:4] == b"SFMS"
    for path in (js, bn):
        back = load_samples(path)
        np.testing.assert_array_equal(back.positions, samples.positions)
        np.testing.assert_array_equal(back.embeddings, samples.embeddings)


def test_malformed_sample_files(tmp_path):
    with pytest.raises(InputError):
        load_samples(tmp_path / "missing.json")
    bad_dim = tmp_path / "bad.json"
    bad_dim.write_text(json.dumps({"d": 3, "samples": [{"p": [0, 0, 0], "e": [1, 2]}]}))
    with pytest.raises(InputError, match="dimension"):
        load_samples(bad_dim)
    truncated = tmp_path / "bad.bin"
    truncated.write_bytes(b"SFMS" + (2).to_bytes(4, "little") + (3).to_bytes(4, "little") + bytes(8))
    with pytest.raises(InputError):
        load_samples(truncated)
    non_finite = tmp_path / "nan.json"
    non_finite.write_text('{"d": 1, "samples": [{"p": [0, 0, NaN], "e": [1]}]}')
    with pytest.raises(InputError):
        load_samples(non_finite)
