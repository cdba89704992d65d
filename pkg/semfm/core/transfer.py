"""
Affordance-region transfer and the evaluation metrics (IoU, category-average
IoU, normalized geodesic error).
"""
from __future__ import annotations
import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from core.fmap import FunctionalMap, PointwiseMap
from core.mesh import TriangleMesh, edge_graph, estimate_geodesic_diameter, pairwise_geodesics
from core.spectral import SpectralBasis, project
from errors import InputError, NumericalError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class AffordanceRegion:
    mesh_id: str
    indices: np.ndarray

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=np.int64).reshape(-1))
        if idx.size == 0:
            raise InputError(f"affordance region on '{self.mesh_id}' is empty")
        if idx[0] < 0:
            raise InputError(f"affordance region on '{self.mesh_id}' has negative indices")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return int(self.indices.size)

    def check_range(self, n_vertices: int) -> None:
        if self.indices[-1] >= n_vertices:
            raise InputError(
                f"affordance region on '{self.mesh_id}' references vertex {int(self.indices[-1])}, mesh has {n_vertices}"
            )

    def indicator(self, n_vertices: int) -> np.ndarray:
        self.check_range(n_vertices)
        f = np.zeros(n_vertices, dtype=np.float64)
        f[self.indices] = 1.0
        return f

    def to_dict(self) -> Dict[str, Any]:
        return {"mesh_id": self.mesh_id, "indices": self.indices.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AffordanceRegion":
        try:
            return cls(str(data["mesh_id"]), np.asarray(data["indices"], dtype=np.int64))
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"malformed affordance region: {e}") from e


def load_region(path: Union[str, os.PathLike]) -> AffordanceRegion:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"Affordance file not found: {p}")
    try:
        return AffordanceRegion.from_dict(json.loads(p.read_text(encoding="utf-8")))
    except json.JSONDecodeError as e:
        raise InputError(f"Malformed affordance file {p}: {e}") from e


def save_region(region: AffordanceRegion, path: Union[str, os.PathLike]) -> Path:
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(region.to_dict()), encoding="utf-8")
    except OSError as e:
        raise InputError(f"Cannot write affordance region to {p}: {e}") from e
    return p


# ---------------------------- Transfer ----------------------------
def transfer_region_pointwise(T: PointwiseMap, region: AffordanceRegion, target_id: str = "target") -> AffordanceRegion:
    """Image of the region under T, deduplicated."""
    region.check_range(len(T))
    return AffordanceRegion(target_id, T.target_index[region.indices])


def transfer_region_indicator(basis1: SpectralBasis, basis2: SpectralBasis, fmap: FunctionalMap,
                              region: AffordanceRegion, threshold: float = 0.5,
                              target_id: str = "target") -> AffordanceRegion:
    """
    Push the region indicator's shape-1 coefficients through C^T, reconstruct on
    shape 2 and keep vertices at or above threshold * max.
    """
    if not 0 < threshold < 1:
        raise InputError(f"threshold must be in (0, 1), got {threshold}")
    k = fmap.k
    if k > basis1.k or k > basis2.k:
        raise InputError(f"functional map dimension {k} exceeds the bases ({basis1.k}, {basis2.k})")
    a1 = project(basis1.truncate(k), region.indicator(basis1.n_vertices))
    g = basis2.eigenfunctions[:, :k] @ (fmap.C.T @ a1)
    peak = float(g.max())
    if not peak > 0:
        raise NumericalError(
            f"transferred indicator has no positive values (max {peak:.3e}); try a lower threshold or another mode"
        )
    keep = np.flatnonzero(g >= threshold * peak)
    if keep.size == 0:
        raise NumericalError("no vertex passed the threshold; lower the threshold")
    return AffordanceRegion(target_id, keep)


# ---------------------------- Metrics ----------------------------
def iou(a: AffordanceRegion, b: AffordanceRegion) -> float:
    if a.mesh_id != b.mesh_id:
        raise InputError(f"IoU of regions on different meshes: '{a.mesh_id}' vs '{b.mesh_id}'")
    inter = np.intersect1d(a.indices, b.indices, assume_unique=True).size
    union = np.union1d(a.indices, b.indices).size
    return inter / union


def category_average_iou(reports: Sequence[Any], n_objects: Optional[int] = None) -> float:
    """
    Mean IoU over a complete sweep of N(N-1) ordered pairs. Items are reports
    with an `iou` attribute or plain numbers.
    """
    count = len(reports)
    if n_objects is None:
        n = (1 + math.isqrt(1 + 4 * count)) // 2
        if count == 0 or n * (n - 1) != count:
            raise InputError(f"{count} reports do not form a complete ordered-pair sweep")
    else:
        n = n_objects
        if count != n * (n - 1):
            raise InputError(f"expected {n * (n - 1)} reports for {n} objects, got {count}")
    if all(hasattr(r, "source") and hasattr(r, "target") for r in reports):
        pairs = {(r.source, r.target) for r in reports}
        if len(pairs) != count or any(s == t for s, t in pairs):
            raise InputError("report list has repeated or self pairs")
    values = [float(r.iou if hasattr(r, "iou") else r) for r in reports]
    if any(not 0.0 <= v <= 1.0 for v in values):
        raise InputError("IoU values must lie in [0, 1]")
    return float(math.fsum(values) / count)


def sample_vertices(n_vertices: int, size: int, seed: int = 0) -> np.ndarray:
    """Sorted seeded subset of vertex ids (all vertices when size >= n_vertices)."""
    if size >= n_vertices:
        return np.arange(n_vertices)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n_vertices, size=size, replace=False))


def geodesic_error(T: PointwiseMap, T_gt: PointwiseMap, mesh2: TriangleMesh,
                   vertices: Optional[Iterable[int]] = None, diameter: Optional[float] = None,
                   graph: Optional[sp.csr_matrix] = None, chunk: int = 256) -> np.ndarray:
    """
    Per-vertex edge-graph distance on mesh2 between T(i) and T_gt(i), divided by
    the geodesic diameter estimate. Unreachable targets give +inf.
    """
    if len(T) != len(T_gt):
        raise InputError(f"maps cover different vertex counts: {len(T)} vs {len(T_gt)}")
    T.check_target(mesh2.n_vertices)
    T_gt.check_target(mesh2.n_vertices)
    idx = np.arange(len(T)) if vertices is None else np.asarray(list(vertices), dtype=np.int64)
    g = edge_graph(mesh2) if graph is None else graph
    diam = estimate_geodesic_diameter(mesh2, graph=g) if diameter is None else float(diameter)
    if not diam > 0:
        raise NumericalError(f"geodesic diameter of '{mesh2.name}' is not positive")

    pred = T.target_index[idx]
    gt = T_gt.target_index[idx]
    sources, inverse = np.unique(gt, return_inverse=True)
    err = np.empty(idx.size, dtype=np.float64)
    for start in range(0, sources.size, chunk):
        block = sources[start:start + chunk]
        D = pairwise_geodesics(mesh2, block, graph=g, chunk=chunk)
        sel = (inverse >= start) & (inverse < start + block.size)
        err[sel] = D[inverse[sel] - start, pred[sel]]
    return err / diam
