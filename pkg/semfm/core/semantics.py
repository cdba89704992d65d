"""
Semantic side of the pipeline:

  lifted samples -> sparse semantic point cloud -> kNN similarity graph
  -> spectral clustering -> cross-object cluster similarity -> anchor pairs

Lifted samples enter through a file boundary (JSON or packed binary); nothing here
knows where the embeddings came from.
"""
from __future__ import annotations
import json
import logging
import math
import os
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh
from scipy.spatial import cKDTree
from sklearn.cluster import KMeans

from core.mesh import TriangleMesh
from errors import InputError, NumericalError, UnsupportedSizeError

logger = logging.getLogger(__name__)

SAMPLES_MAGIC = b"SFMS"
_SAMPLES_HEADER = struct.Struct("<4sII")
COINCIDENT_TOL = 1e-9
DENSE_CLUSTER_LIMIT = 2000
MAX_ANCHOR_CLUSTERS = 10
TIE_TOL = 1e-12


# ---------------------------- Lifted samples ----------------------------
@dataclass(frozen=True, eq=False)
class LiftedSampleSet:
    positions: np.ndarray
    embeddings: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3) if np.size(self.positions) else np.zeros((0, 3))
        e = np.asarray(self.embeddings, dtype=np.float64)
        if e.ndim != 2 or e.shape[1] < 1:
            raise InputError(f"embeddings must have shape (n, d) with d >= 1, got {e.shape}")
        if p.shape[0] != e.shape[0]:
            raise InputError(f"{p.shape[0]} positions but {e.shape[0]} embeddings")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(e))):
            raise InputError("lifted samples must contain finite values only")
        p.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "embeddings", e)

    @property
    def d(self) -> int:
        return int(self.embeddings.shape[1])

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "d": self.d,
            "samples": [{"p": p.tolist(), "e": e.tolist()} for p, e in zip(self.positions, self.embeddings)],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LiftedSampleSet":
        try:
            d = int(data["d"])
            samples = data["samples"]
            pos = [s["p"] for s in samples]
            emb = [s["e"] for s in samples]
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"malformed sample set: {e}") from e
        if any(len(x) != 3 for x in pos):
            raise InputError("every sample position needs 3 coordinates")
        if any(len(x) != d for x in emb):
            raise InputError(f"every sample embedding must have dimension d={d}")
        return cls(np.asarray(pos, dtype=np.float64).reshape(-1, 3),
                   np.asarray(emb, dtype=np.float64).reshape(-1, d))


def save_samples(samples: LiftedSampleSet, path: Union[str, os.PathLike], binary: bool = False) -> Path:
    """JSON by default; `binary` writes magic, d, count then packed float64 records."""
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        if binary:
            records = np.hstack([samples.positions, samples.embeddings]).astype("<f8")
            p.write_bytes(_SAMPLES_HEADER.pack(SAMPLES_MAGIC, samples.d, len(samples)) + records.tobytes())
        else:
            p.write_text(json.dumps(samples.to_dict()), encoding="utf-8")
    except OSError as e:
        raise InputError(f"Cannot write sample set to {p}: {e}") from e
    return p


def load_samples(path: Union[str, os.PathLike]) -> LiftedSampleSet:
    """Read a sample set; the binary variant is recognised by its magic bytes."""
    p = Path(path)
    if not p.is_file():
        raise InputError(f"Sample file not found: {p}")
    raw = p.read_bytes()
    if raw[:4] == SAMPLES_MAGIC:
        if len(raw) < _SAMPLES_HEADER.size:
            raise InputError(f"sample file {p} is truncated")
        _, d, count = _SAMPLES_HEADER.unpack_from(raw, 0)
        expected = _SAMPLES_HEADER.size + 8 * count * (3 + d)
        if d < 1 or len(raw) != expected:
            raise InputError(f"sample file {p} has {len(raw)} bytes, expected {expected} for d={d}, count={count}")
        rec = np.frombuffer(raw, dtype="<f8", offset=_SAMPLES_HEADER.size).reshape(count, 3 + d)
        return LiftedSampleSet(rec[:, :3].copy(), rec[:, 3:].copy())
    try:
        data = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise InputError(f"sample file {p} is neither JSON nor the binary format: {e}") from e
    if not isinstance(data, dict):
        raise InputError(f"sample file {p} must hold a JSON object")
    return LiftedSampleSet.from_dict(data)


# ---------------------------- Point cloud ----------------------------
@dataclass(frozen=True, eq=False)
class SemanticPointCloud:
    points: np.ndarray
    embeddings: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        e = np.asarray(self.embeddings, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 3 or e.ndim != 2 or p.shape[0] != e.shape[0]:
            raise InputError(f"point cloud shapes disagree: points {p.shape}, embeddings {e.shape}")
        if p.shape[0] == 0:
            raise InputError("semantic point cloud is empty")
        if cKDTree(p).query_pairs(COINCIDENT_TOL):
            raise InputError("semantic point cloud has coincident points")
        p.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "embeddings", e)

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @property
    def d(self) -> int:
        return int(self.embeddings.shape[1])


def sample_surface(mesh: TriangleMesh, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Area-weighted uniform surface sampling; returns (points, face ids)."""
    areas = mesh.face_areas
    faces = rng.choice(mesh.n_faces, size=n, p=areas / areas.sum())
    r1, r2 = rng.random(n), rng.random(n)
    s = np.sqrt(r1)
    u, v, w = 1.0 - s, s * (1.0 - r2), s * r2
    tri = mesh.vertices[mesh.faces[faces]]
    pts = u[:, None] * tri[:, 0] + v[:, None] * tri[:, 1] + w[:, None] * tri[:, 2]
    return pts, faces


def aggregate_samples(mesh: TriangleMesh, samples: LiftedSampleSet, n_points: int, radius: float,
                      seed: int = 0) -> SemanticPointCloud:
    """
    Draw n_points on the surface and give each the mean embedding of the samples
    within `radius`; a point with no sample in range takes its nearest sample's
    embedding.
    """
    if len(samples) == 0:
        raise InputError("cannot aggregate an empty sample set")
    if radius <= 0:
        raise InputError(f"aggregation radius must be positive, got {radius}")
    if n_points < 1:
        raise InputError(f"point count must be at least 1, got {n_points}")
    rng = np.random.default_rng(seed)
    points, _ = sample_surface(mesh, n_points, rng)

    tree = cKDTree(samples.positions)
    neighborhoods = tree.query_ball_point(points, r=radius)
    out = np.empty((n_points, samples.d), dtype=np.float64)
    empty = []
    for i, idx in enumerate(neighborhoods):
        if idx:
            out[i] = samples.embeddings[np.sort(idx)].mean(axis=0)
        else:
            empty.append(i)
    if empty:
        _, nearest = tree.query(points[empty], k=1)
        out[empty] = samples.embeddings[np.atleast_1d(nearest)]
        logger.debug("%d of %d cloud points had no sample within %.4g; used nearest sample",
                     len(empty), n_points, radius)
    return SemanticPointCloud(points, out)


# ---------------------------- Graph and clustering ----------------------------
@dataclass(frozen=True, eq=False)
class SemanticGraph:
    weights: sp.csr_matrix
    embeddings: np.ndarray
    k_nn: int
    sigma: float

    @property
    def n_nodes(self) -> int:
        return int(self.weights.shape[0])

    @property
    def edges(self) -> np.ndarray:
        """Upper-triangle (i, j, w) triples."""
        upper = sp.triu(self.weights, k=1).tocoo()
        return np.column_stack([upper.row, upper.col, upper.data])


def build_semantic_graph(pc: SemanticPointCloud, k_nn: int = 10,
                         sigma: Union[str, float, None] = "median") -> SemanticGraph:
    """
    kNN over point positions, symmetrized by union, weighted by
    exp(-|s_j - s_l|^2 / sigma^2). sigma="median" uses the median embedding
    distance over the edges (1.0 when that median is 0).
    """
    m = len(pc)
    if k_nn < 1 or k_nn >= m:
        raise InputError(f"k_nn must be in [1, {m - 1}] for {m} points, got {k_nn}")
    _, idx = cKDTree(pc.points).query(pc.points, k=k_nn + 1)
    rows, cols = [], []
    for i in range(m):
        nbrs = idx[i][idx[i] != i][:k_nn]
        rows.append(np.full(nbrs.size, i))
        cols.append(nbrs)
    r, c = np.concatenate(rows), np.concatenate(cols)
    pairs = np.unique(np.column_stack([np.minimum(r, c), np.maximum(r, c)]), axis=0)

    diff = pc.embeddings[pairs[:, 0]] - pc.embeddings[pairs[:, 1]]
    d2 = np.einsum("ij,ij->i", diff, diff)
    if sigma is None or (isinstance(sigma, str) and sigma == "median"):
        s = float(np.median(np.sqrt(d2)))
        if s <= 0.0:
            s = 1.0
    else:
        s = float(sigma)
        if not (s > 0 and math.isfinite(s)):
            raise InputError(f"sigma must be positive, got {sigma}")
    w = np.maximum(np.exp(-d2 / s ** 2), np.finfo(np.float64).tiny)

    W = sp.coo_matrix(
        (np.concatenate([w, w]), (np.concatenate([pairs[:, 0], pairs[:, 1]]), np.concatenate([pairs[:, 1], pairs[:, 0]]))),
        shape=(m, m),
    ).tocsr()
    return SemanticGraph(W, pc.embeddings, int(k_nn), s)


@dataclass(frozen=True, eq=False)
class ClusterSet:
    labels: np.ndarray
    centroids: np.ndarray

    @property
    def K(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.K)

    @property
    def d(self) -> int:
        return int(self.centroids.shape[1])


def _first_occurrence_relabel(labels: np.ndarray) -> np.ndarray:
    _, first = np.unique(labels, return_index=True)
    order = labels[np.sort(first)]
    mapping = np.empty(labels.max() + 1, dtype=np.int64)
    mapping[order] = np.arange(order.size)
    return mapping[labels]


def _spectral_embedding(W: sp.csr_matrix, K: int, seed: int) -> np.ndarray:
    m = W.shape[0]
    deg = np.asarray(W.sum(axis=1)).ravel()
    dinv = 1.0 / np.sqrt(deg)
    A = sp.diags(dinv) @ W @ sp.diags(dinv)
    # top-K eigenvectors of D^-1/2 W D^-1/2 = bottom-K of the normalized Laplacian
    if m <= DENSE_CLUSTER_LIMIT:
        _, U = sla.eigh(A.toarray(), subset_by_index=[m - K, m - 1])
    else:
        v0 = np.random.default_rng(seed).standard_normal(m)
        _, U = eigsh(A, k=K, which="LA", v0=v0)
    norms = np.linalg.norm(U, axis=1, keepdims=True)
    return np.divide(U, norms, out=np.zeros_like(U), where=norms > 0)


def _kmeans_labels(U: np.ndarray, K: int, seed: int) -> np.ndarray:
    km = KMeans(n_clusters=K, init="k-means++", n_init=10, max_iter=100, tol=1e-6, random_state=seed)
    return km.fit_predict(U).astype(np.int64)


def spectral_cluster(graph: SemanticGraph, K: int, seed: int = 0) -> ClusterSet:
    """
    Normalized spectral clustering into K clusters. Cluster ids are ordered by
    the first point index that carries them.
    """
    m = graph.n_nodes
    if K < 2 or K > m:
        raise InputError(f"cluster count K must be in [2, {m}], got {K}")
    if K == m:
        labels = np.arange(m, dtype=np.int64)
    else:
        U = _spectral_embedding(graph.weights, K, seed)
        labels = _kmeans_labels(U, K, seed)
        if np.bincount(labels, minlength=K).min() == 0:
            logger.warning("k-means left an empty cluster (K=%d, seed=%d); re-seeding once", K, seed)
            labels = _kmeans_labels(U, K, seed + 1)
            if np.bincount(labels, minlength=K).min() == 0:
                raise NumericalError(f"spectral clustering produced an empty cluster for K={K}")
        labels = _first_occurrence_relabel(labels)
    centroids = np.vstack([graph.embeddings[labels == c].mean(axis=0) for c in range(K)])
    return ClusterSet(labels, centroids)


def cluster_similarity(cs1: ClusterSet, cs2: ClusterSet) -> np.ndarray:
    """K1 x K2 cosine similarity of cluster mean embeddings; zero-norm rows/columns are 0."""
    if cs1.d != cs2.d:
        raise InputError(f"embedding dimensions differ: {cs1.d} vs {cs2.d}")

    def unit(x: np.ndarray, side: int) -> np.ndarray:
        n = np.linalg.norm(x, axis=1, keepdims=True)
        zero = n[:, 0] == 0
        if np.any(zero):
            logger.warning("shape %d: %d cluster(s) with zero-norm mean embedding; similarity set to 0",
                           side, int(zero.sum()))
        return np.divide(x, n, out=np.zeros_like(x), where=n > 0)

    return np.clip(unit(cs1.centroids, 1) @ unit(cs2.centroids, 2).T, -1.0, 1.0)


# ---------------------------- Anchors ----------------------------
@dataclass(frozen=True)
class AnchorPair:
    c1: int
    c2: int
    similarity: float


@dataclass(frozen=True)
class AnchorSet:
    pairs: Tuple[AnchorPair, ...]

    def __post_init__(self):
        left = [p.c1 for p in self.pairs]
        right = [p.c2 for p in self.pairs]
        if len(set(left)) != len(left) or len(set(right)) != len(right):
            raise NumericalError(f"anchor set is not one-to-one: {[(p.c1, p.c2) for p in self.pairs]}")

    @property
    def alpha(self) -> int:
        return len(self.pairs)

    @property
    def total(self) -> float:
        return float(sum(p.similarity for p in self.pairs))

    def clusters(self, side: int) -> List[int]:
        if side not in (1, 2):
            raise InputError(f"side must be 1 or 2, got {side}")
        return [p.c1 if side == 1 else p.c2 for p in self.pairs]

    def to_dict(self) -> Dict[str, Any]:
        return {"alpha": self.alpha, "total": self.total,
                "pairs": [{"c1": p.c1, "c2": p.c2, "similarity": p.similarity} for p in self.pairs]}


def _better(a: Tuple[float, Optional[tuple]], b: Tuple[float, Optional[tuple]]) -> Tuple[float, Optional[tuple]]:
    """Higher total wins; totals equal within TIE_TOL go to the lexicographically smaller pair list."""
    if b[1] is None:
        return a
    if a[1] is None:
        return b
    if b[0] > a[0] + TIE_TOL:
        return b
    if a[0] > b[0] + TIE_TOL:
        return a
    return a if a[1] <= b[1] else b


def select_anchors(S: np.ndarray, alpha: int) -> AnchorSet:
    """
    Exact maximum-total injective assignment of `alpha` cluster pairs.

    Memoized search over rows of the longer side with a bitmask of used clusters
    on the shorter side (at most MAX_ANCHOR_CLUSTERS). -inf entries mark pairs that
    may not be chosen. Ties go to the lexicographically smallest sorted (c1, c2)
    list; the result is ordered by descending similarity.
    """
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.size == 0:
        raise InputError(f"similarity matrix must be a non-empty 2-D array, got shape {S.shape}")
    K1, K2 = S.shape
    if alpha < 1 or alpha > min(K1, K2):
        raise InputError(f"alpha must be in [1, {min(K1, K2)}], got {alpha}")
    if min(K1, K2) > MAX_ANCHOR_CLUSTERS:
        raise UnsupportedSizeError(
            f"anchor selection supports at most {MAX_ANCHOR_CLUSTERS} clusters on the smaller side, got {min(K1, K2)}"
        )
    if np.any(np.isnan(S)) or np.any(np.isposinf(S)):
        raise InputError("similarity matrix contains NaN or +inf")
    finite = S[np.isfinite(S)]
    if finite.size and (finite.min() < -1 - TIE_TOL or finite.max() > 1 + TIE_TOL):
        raise InputError("similarities must lie in [-1, 1]")

    transpose = K1 > K2
    A = S.T if transpose else S
    n_rows, n_cols = A.shape

    def pair(r: int, c: int) -> Tuple[int, int]:
        return (c, r) if transpose else (r, c)

    @lru_cache(maxsize=None)
    def best(r: int, used: int, need: int) -> Tuple[float, Optional[tuple]]:
        if need == 0:
            return 0.0, ()
        if n_rows - r < need:
            return -math.inf, None
        result = best(r + 1, used, need)
        for c in range(n_cols):
            if used >> c & 1 or not np.isfinite(A[r, c]):
                continue
            sub_val, sub_key = best(r + 1, used | (1 << c), need - 1)
            if sub_key is None:
                continue
            key = tuple(sorted(sub_key + (pair(r, c),)))
            result = _better(result, (float(A[r, c]) + sub_val, key))
        return result

    _, key = best(0, 0, alpha)
    if key is None:
        raise InputError(f"fewer than alpha={alpha} eligible cluster pairs")
    pairs = sorted((AnchorPair(int(c1), int(c2), float(S[c1, c2])) for c1, c2 in key),
                   key=lambda p: (-p.similarity, p.c1, p.c2))
    return AnchorSet(tuple(pairs))
