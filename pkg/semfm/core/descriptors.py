"""
Per-vertex descriptor functions fed to functional-map estimation.

- Anchor descriptors: nearest-cloud-point cluster assignment, binary indicator per
  anchor pair, heat-diffused in the spectral basis, clamped at 0, unit l2 norm.
- WKS: geometry-only baseline descriptors.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy.spatial import cKDTree

from core.mesh import TriangleMesh
from core.semantics import AnchorSet, SemanticPointCloud
from core.spectral import SpectralBasis, heat_diffuse
from errors import InputError, NumericalError

logger = logging.getLogger(__name__)

# neighbours inspected first when resolving equal-distance ties
_TIE_CANDIDATES = 4


@dataclass(frozen=True, eq=False)
class DescriptorMatrix:
    """|V| x alpha matrix; column i belongs to anchor pair i on both shapes."""
    values: np.ndarray
    anchors: Tuple[Tuple[int, int], ...] = field(default=())

    @property
    def alpha(self) -> int:
        return int(self.values.shape[1])


def vertex_cluster_assignment(mesh: TriangleMesh, pc: SemanticPointCloud, labels: np.ndarray) -> np.ndarray:
    """Label of each vertex's Euclidean-nearest cloud point (lowest point index on ties)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (len(pc),):
        raise InputError(f"{labels.shape[0]} labels for {len(pc)} cloud points")
    kq = min(_TIE_CANDIDATES, len(pc))
    tree = cKDTree(pc.points)
    dist, idx = tree.query(mesh.vertices, k=kq)
    if kq == 1:
        return labels[np.asarray(idx).reshape(-1)]
    dist = np.asarray(dist).reshape(-1, kq)
    idx = np.asarray(idx).reshape(-1, kq)
    tied = dist == dist[:, :1]
    nearest = np.where(tied, idx, np.iinfo(np.int64).max).min(axis=1)
    # every candidate tied: more equidistant points may lie beyond the query
    if kq < len(pc):
        for v in np.flatnonzero(tied.all(axis=1)):
            ball = tree.query_ball_point(mesh.vertices[v], dist[v, 0])
            nearest[v] = min(ball, default=nearest[v])
    return labels[nearest]


def indicator_functions(assignment: np.ndarray, anchors: AnchorSet, side: int) -> np.ndarray:
    """|V| x alpha 0/1 matrix; column i marks vertices in anchor pair i's cluster on `side`."""
    assignment = np.asarray(assignment, dtype=np.int64)
    clusters = anchors.clusters(side)
    present = set(np.unique(assignment).tolist())
    missing = [c for c in clusters if c not in present]
    if missing:
        raise InputError(f"anchor cluster(s) {missing} own no vertex on shape {side}")
    return np.column_stack([(assignment == c).astype(np.float64) for c in clusters]).reshape(assignment.size, len(clusters))


def diffuse_descriptors(basis: SpectralBasis, indicators: np.ndarray, t: float,
                        anchors: Tuple[Tuple[int, int], ...] = ()) -> DescriptorMatrix:
    """heat_diffuse per column, clamp at 0, normalize to unit l2 norm."""
    F = np.asarray(indicators, dtype=np.float64)
    if F.ndim != 2 or F.shape[1] == 0:
        raise InputError(f"indicator matrix must be |V| x alpha with alpha >= 1, got {F.shape}")
    empty = np.flatnonzero(~np.any(F != 0, axis=0))
    if empty.size:
        raise InputError(f"anchor region(s) {empty.tolist()} are empty")
    D = np.maximum(heat_diffuse(basis, F, t), 0.0)
    norms = np.linalg.norm(D, axis=0)
    if np.any(norms == 0):
        raise NumericalError(f"diffused descriptor column(s) {np.flatnonzero(norms == 0).tolist()} vanished")
    return DescriptorMatrix(D / norms[None, :], tuple(anchors))


def wks_descriptors(basis: SpectralBasis, n_energies: int = 100, sigma_scale: float = 7.0,
                    normalized: bool = True) -> np.ndarray:
    """
    Wave kernel signature over log-energies spaced uniformly between the first
    and last positive eigenvalue, with Gaussian width sigma_scale * energy step.
    `normalized` rescales each column to unit surface integral.
    """
    if n_energies < 1:
        raise InputError(f"n_energies must be positive, got {n_energies}")
    lam = basis.eigenvalues
    positive = lam > 1e-9 * max(float(lam.max()), 1e-300)
    if int(positive.sum()) < 2:
        raise InputError(f"WKS needs at least 2 positive eigenvalues, basis has {int(positive.sum())}")
    log_lam = np.log(lam[positive])
    phi2 = basis.eigenfunctions[:, positive] ** 2

    energies = np.linspace(log_lam[0], log_lam[-1], n_energies)
    step = (log_lam[-1] - log_lam[0]) / max(n_energies - 1, 1)
    sigma = sigma_scale * step if step > 0 else 1.0
    expo = -((energies[None, :] - log_lam[:, None]) ** 2) / (2.0 * sigma ** 2)
    # shift per energy; the ratio below is unchanged
    G = np.exp(expo - expo.max(axis=0, keepdims=True))
    wks = (phi2 @ G) / G.sum(axis=0, keepdims=True)
    if normalized:
        wks = wks / (basis.mass @ wks)[None, :]
    return wks


def wks_functions(basis: SpectralBasis, n_energies: int = 100, sigma_scale: float = 7.0,
                  normalized: bool = True) -> np.ndarray:
    """
    WKS as functions to be matched across shapes. Normalized columns are scaled
    to unit mean value, so they do not depend on the surface area and the
    constant mode of the estimated map stays at sqrt(area1 / area2).
    """
    wks = wks_descriptors(basis, n_energies, sigma_scale, normalized)
    return wks * basis.area if normalized else wks
