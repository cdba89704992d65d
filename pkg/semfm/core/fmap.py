"""
Functional maps between two spectral bases.

Direction convention: C (k x k) maps shape-2 spectral coefficients to shape-1
coefficients, so the pointwise map recovered from C runs from shape-1 vertices to
shape-2 vertices.
"""
from __future__ import annotations
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import scipy.linalg as sla

from core.descriptors import DescriptorMatrix
from core.spectral import SpectralBasis, project
from errors import InputError, NumericalError

logger = logging.getLogger(__name__)

NN_BLOCK = 2048

Descriptors = Union[DescriptorMatrix, np.ndarray]


@dataclass(frozen=True, eq=False)
class FunctionalMap:
    C: np.ndarray
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        C = np.asarray(self.C, dtype=np.float64)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise InputError(f"functional map must be square, got shape {C.shape}")
        if not np.all(np.isfinite(C)):
            raise NumericalError("functional map has non-finite entries")
        C.setflags(write=False)
        object.__setattr__(self, "C", C)

    @property
    def k(self) -> int:
        return int(self.C.shape[0])

    def to_dict(self) -> Dict[str, Any]:
        return {"k": self.k, "C": self.C.tolist(), "provenance": self.provenance}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FunctionalMap":
        try:
            C = np.asarray(data["C"], dtype=np.float64)
            k = int(data["k"])
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"malformed functional map: {e}") from e
        if C.shape != (k, k):
            raise InputError(f"functional map declares k={k} but C has shape {C.shape}")
        return cls(C, dict(data.get("provenance") or {}))


@dataclass(frozen=True, eq=False)
class PointwiseMap:
    """target_index[i] is the shape-2 vertex that shape-1 vertex i maps to."""
    target_index: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.target_index, dtype=np.int64).reshape(-1)
        if t.size and t.min() < 0:
            raise InputError("pointwise map has negative indices")
        t.setflags(write=False)
        object.__setattr__(self, "target_index", t)

    def __len__(self) -> int:
        return int(self.target_index.size)

    def check_target(self, n_target: int) -> None:
        if self.target_index.size and self.target_index.max() >= n_target:
            raise InputError(f"pointwise map index {int(self.target_index.max())} out of range [0, {n_target})")

    def to_dict(self) -> Dict[str, Any]:
        return {"map": self.target_index.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PointwiseMap":
        try:
            return cls(np.asarray(data["map"], dtype=np.int64))
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"malformed pointwise map: {e}") from e


def save_json(obj: Union[FunctionalMap, PointwiseMap], path: Union[str, os.PathLike]) -> Path:
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(obj.to_dict()), encoding="utf-8")
    except OSError as e:
        raise InputError(f"Cannot write {p}: {e}") from e
    return p


# ---------------------------- Estimation ----------------------------
def _values(F: Descriptors) -> np.ndarray:
    return np.asarray(F.values if isinstance(F, DescriptorMatrix) else F, dtype=np.float64)


def default_reg_weight(A1: np.ndarray, k: int) -> float:
    """1e-3 * |A1|_F^2 / k."""
    return 1e-3 * float(np.sum(A1 ** 2)) / k


def fmap_energy(C: np.ndarray, A1: np.ndarray, A2: np.ndarray, evals1: np.ndarray, evals2: np.ndarray,
                reg_weight: float) -> float:
    """|C A2 - A1|_F^2 + w |C diag(evals2) - diag(evals1) C|_F^2."""
    data = np.sum((C @ A2 - A1) ** 2)
    comm = np.sum((C * evals2[None, :] - evals1[:, None] * C) ** 2)
    return float(data + reg_weight * comm)


def estimate_fmap(basis1: SpectralBasis, basis2: SpectralBasis, F1: Descriptors, F2: Descriptors,
                  reg_weight: Optional[float] = None) -> FunctionalMap:
    """
    Least-squares map from descriptor coefficients with the Laplacian
    commutativity penalty. Each row of C is an independent stacked system

        [A2^T ; sqrt(w) diag|evals2 - evals1[i]|] c_i = [A1[i] ; 0]

    solved with the minimum-norm least-squares solver.
    """
    if basis1.k != basis2.k:
        raise InputError(f"bases must share k, got {basis1.k} and {basis2.k}")
    D1, D2 = _values(F1), _values(F2)
    if D1.ndim != 2 or D2.ndim != 2 or D1.shape[1] != D2.shape[1]:
        raise InputError(f"descriptor counts differ: {D1.shape} vs {D2.shape}")
    if D1.shape[1] == 0:
        raise InputError("at least one descriptor is required")
    k = basis1.k
    A1 = project(basis1, D1)
    A2 = project(basis2, D2)
    w = default_reg_weight(A1, k) if reg_weight is None else float(reg_weight)
    if w < 0:
        raise InputError(f"reg_weight must be nonnegative, got {w}")
    if w == 0 and np.linalg.matrix_rank(A2) < k:
        raise NumericalError(
            f"descriptor system is singular (rank {np.linalg.matrix_rank(A2)} < k={k}) with reg_weight=0; "
            "use a positive reg_weight"
        )

    ev1, ev2 = basis1.eigenvalues, basis2.eigenvalues
    sw = np.sqrt(w)
    C = np.empty((k, k), dtype=np.float64)
    rhs_pad = np.zeros(k)
    for i in range(k):
        if w > 0:
            lhs = np.vstack([A2.T, sw * np.diag(np.abs(ev2 - ev1[i]))])
            rhs = np.concatenate([A1[i], rhs_pad])
        else:
            lhs, rhs = A2.T, A1[i]
        C[i], *_ = sla.lstsq(lhs, rhs)

    expected = np.sqrt(basis1.area / basis2.area)
    if abs(abs(C[0, 0]) - expected) > 0.2 * expected:
        logger.warning("constant-mode consistency: |C00|=%.4g, expected about %.4g", abs(C[0, 0]), expected)
    return FunctionalMap(C, {"alpha": int(D1.shape[1]), "reg_weight": w, "trace": [k]})


# ---------------------------- Pointwise recovery ----------------------------
def fmap_to_pointwise(basis1: SpectralBasis, basis2: SpectralBasis, fmap: Union[FunctionalMap, np.ndarray],
                      block: int = NN_BLOCK) -> PointwiseMap:
    """
    Vertex i of shape 1 goes to the shape-2 vertex j whose row of Phi2 C^T is
    nearest to row i of Phi1 (exact blocked scan; lowest j on ties).
    """
    C = fmap.C if isinstance(fmap, FunctionalMap) else np.asarray(fmap, dtype=np.float64)
    k = C.shape[0]
    if C.shape != (k, k) or k > basis1.k or k > basis2.k:
        raise InputError(f"functional map of shape {C.shape} does not fit bases of dimension {basis1.k}, {basis2.k}")
    query = basis1.eigenfunctions[:, :k]
    targets = basis2.eigenfunctions[:, :k] @ C.T
    t_sq = np.einsum("ij,ij->i", targets, targets)
    out = np.empty(query.shape[0], dtype=np.int64)
    for start in range(0, query.shape[0], block):
        q = query[start:start + block]
        # |q|^2 is constant along each row and does not affect the argmin
        d = t_sq[None, :] - 2.0 * (q @ targets.T)
        out[start:start + q.shape[0]] = np.argmin(d, axis=1)
    return PointwiseMap(out)


def pointwise_to_fmap(basis1: SpectralBasis, basis2: SpectralBasis, T: PointwiseMap, k: int) -> FunctionalMap:
    """C = Phi1[:, :k]^T M1 Phi2[T, :k]."""
    if k < 1 or k > basis1.k or k > basis2.k:
        raise InputError(f"k={k} exceeds the available eigenpairs ({basis1.k}, {basis2.k})")
    if len(T) != basis1.n_vertices:
        raise InputError(f"pointwise map covers {len(T)} vertices, shape 1 has {basis1.n_vertices}")
    T.check_target(basis2.n_vertices)
    phi1 = basis1.eigenfunctions[:, :k]
    pulled = basis2.eigenfunctions[T.target_index, :k]
    return FunctionalMap(phi1.T @ (basis1.mass[:, None] * pulled), {"trace": [k]})


def zoomout_refine(basis1: SpectralBasis, basis2: SpectralBasis, C0: FunctionalMap, step: int,
                   k_final: int) -> FunctionalMap:
    """
    Alternate pointwise recovery and re-estimation while growing the dimension
    by `step` (capped at k_final). The provenance trace lists every dimension.
    """
    if step < 1:
        raise InputError(f"ZoomOut step must be at least 1, got {step}")
    available = min(basis1.k, basis2.k)
    if not (C0.k <= k_final <= available):
        raise InputError(f"need k0={C0.k} <= k_final={k_final} <= available eigenpairs {available}")
    trace: List[int] = [C0.k]
    C = C0.C
    k = C0.k
    while k < k_final:
        T = fmap_to_pointwise(basis1, basis2, C)
        k = min(k + step, k_final)
        C = pointwise_to_fmap(basis1, basis2, T, k).C
        trace.append(k)
        logger.debug("zoomout: k=%d", k)
    provenance = dict(C0.provenance)
    provenance["trace"] = trace
    return FunctionalMap(C, provenance)
