"""
Truncated Laplace-Beltrami eigenbasis of a triangle mesh.

Solves the generalized problem L phi = lambda M phi (L = PSD cotangent stiffness,
M = lumped mass) for the k smallest eigenpairs. Columns are M-orthonormal and
sign-fixed so that each column's largest-magnitude entry is positive.

The basis can be cached on disk, keyed by the mesh content hash:

    magic  b"SFMB" | version u32 | k u32 | n u32 |
    eigenvalues f64[k] | eigenfunctions f64[n*k] (row-major) | mass f64[n]

all little-endian.
"""
from __future__ import annotations
import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh

import config
from core.mesh import TriangleMesh, cotangent_laplacian, vertex_areas
from errors import EigenSolverError, InputError, UnsupportedSizeError

logger = logging.getLogger(__name__)

MAX_K = 512
CACHE_MAGIC = b"SFMB"
CACHE_VERSION = 1
CACHE_SUFFIX = ".sfmb"
_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    mass: np.ndarray
    from_cache: bool = False

    def __post_init__(self):
        evals = np.asarray(self.eigenvalues, dtype=np.float64)
        evecs = np.asarray(self.eigenfunctions, dtype=np.float64)
        mass = np.asarray(self.mass, dtype=np.float64)
        if evecs.ndim != 2 or evals.shape != (evecs.shape[1],) or mass.shape != (evecs.shape[0],):
            raise InputError(
                f"inconsistent basis shapes: eigenvalues {evals.shape}, eigenfunctions {evecs.shape}, mass {mass.shape}"
            )
        for arr in (evals, evecs, mass):
            arr.setflags(write=False)
        object.__setattr__(self, "eigenvalues", evals)
        object.__setattr__(self, "eigenfunctions", evecs)
        object.__setattr__(self, "mass", mass)

    @property
    def k(self) -> int:
        return int(self.eigenvalues.shape[0])

    @property
    def n_vertices(self) -> int:
        return int(self.eigenfunctions.shape[0])

    @property
    def area(self) -> float:
        return float(self.mass.sum())

    def truncate(self, k: int) -> "SpectralBasis":
        """Leading k eigenpairs."""
        if k < 1 or k > self.k:
            raise InputError(f"cannot truncate a basis of dimension {self.k} to {k}")
        if k == self.k:
            return self
        return SpectralBasis(self.eigenvalues[:k], self.eigenfunctions[:, :k], self.mass, self.from_cache)


# ---------------------------- Solvers ----------------------------
def _regularized_mass(mesh: TriangleMesh) -> np.ndarray:
    mass = vertex_areas(mesh)
    floor = 1e-12 * float(mass.max())
    isolated = mass <= floor
    if np.any(isolated):
        logger.warning("%s: %d vertex(es) without incident faces; mass floored at %.3e",
                       mesh.name, int(isolated.sum()), floor)
        mass = np.where(isolated, floor, mass)
    return mass


def _dense_eigenpairs(L: sp.csr_matrix, mass: np.ndarray, k: int):
    s = 1.0 / np.sqrt(mass)
    A = (L.toarray() * s[:, None]) * s[None, :]
    A = 0.5 * (A + A.T)
    evals, evecs = sla.eigh(A, subset_by_index=[0, k - 1])
    return evals, evecs * s[:, None]


def _sparse_eigenpairs(L: sp.csr_matrix, mass: np.ndarray, k: int, scale: float):
    n = L.shape[0]
    # shift slightly below zero so that L - sigma*M is positive definite
    sigma = -1e-2 / max(scale, 1e-300) ** 2
    v0 = np.random.default_rng(0).standard_normal(n)
    try:
        evals, evecs = eigsh(L, k=k, M=sp.diags(mass).tocsc(), sigma=sigma, which="LM", v0=v0)
    except ArpackNoConvergence as e:
        raise EigenSolverError(f"shift-invert eigensolver did not converge for k={k}",
                               achieved=len(e.eigenvalues)) from e
    except (ArpackError, RuntimeError) as e:
        raise EigenSolverError(f"shift-invert eigensolver failed: {e}", achieved=0) from e
    order = np.argsort(evals, kind="stable")
    evals, evecs = evals[order], evecs[:, order]
    # restore exact M-orthonormality inside the computed span
    sq = np.sqrt(mass)
    Q, R = np.linalg.qr(evecs * sq[:, None])
    Q = Q * np.sign(np.where(np.diag(R) == 0, 1.0, np.diag(R)))[None, :]
    return evals, Q / sq[:, None]


def _fix_signs(evecs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(evecs), axis=0)
    signs = np.sign(evecs[idx, np.arange(evecs.shape[1])])
    signs[signs == 0] = 1.0
    return evecs * signs[None, :]


def _solve(mesh: TriangleMesh, k: int, dense_limit: int) -> SpectralBasis:
    L = cotangent_laplacian(mesh)
    mass = _regularized_mass(mesh)
    if mesh.n_vertices <= dense_limit:
        evals, evecs = _dense_eigenpairs(L, mass, k)
    else:
        evals, evecs = _sparse_eigenpairs(L, mass, k, mesh.bounding_box_diagonal())
    if not (np.all(np.isfinite(evals)) and np.all(np.isfinite(evecs))):
        raise EigenSolverError("eigensolver returned non-finite values", achieved=0)
    lowest = float(evals.min())
    if lowest < -1e-8 * max(1.0, float(np.abs(evals).max())):
        logger.warning("%s: negative eigenvalue %.3e clipped to 0", mesh.name, lowest)
    evals = np.maximum(evals, 0.0)
    return SpectralBasis(evals, _fix_signs(evecs), mass)


def compute_basis(mesh: TriangleMesh, k: int, cache_dir: Optional[Union[str, os.PathLike]] = None,
                  dense_limit: Optional[int] = None) -> SpectralBasis:
    """
    k smallest generalized eigenpairs of (L, M), dense below `dense_limit` vertices
    and shift-invert Lanczos above. With `cache_dir`, a cached basis of dimension
    >= k for the same mesh content is truncated and returned (from_cache=True).
    """
    if k < 1:
        raise InputError(f"basis dimension must be positive, got {k}")
    if k >= mesh.n_vertices:
        raise InputError(f"basis dimension k={k} must be smaller than the vertex count {mesh.n_vertices}")
    if k > MAX_K:
        raise UnsupportedSizeError(f"basis dimension k={k} exceeds the supported maximum {MAX_K}")
    limit = config.DENSE_EIG_LIMIT if dense_limit is None else dense_limit

    cache_path = None
    if cache_dir is not None:
        cache_path = Path(cache_dir) / f"{mesh.content_hash}{CACHE_SUFFIX}"
        if cache_path.is_file():
            try:
                cached = load_basis(cache_path)
            except InputError as e:
                logger.warning("ignoring unreadable basis cache %s: %s", cache_path, e)
            else:
                if cached.n_vertices == mesh.n_vertices and cached.k >= k:
                    logger.debug("basis cache hit for %s (k=%d)", mesh.name, cached.k)
                    return cached.truncate(k)

    basis = _solve(mesh, k, limit)
    logger.debug("%s: computed %d eigenpairs (lambda_max=%.4g)", mesh.name, k, float(basis.eigenvalues[-1]))
    if cache_path is not None:
        try:
            save_basis(basis, cache_path)
        except InputError as e:
            logger.warning("could not write basis cache: %s", e)
    return basis


# ---------------------------- Cache I/O ----------------------------
def save_basis(basis: SpectralBasis, path: Union[str, os.PathLike]) -> Path:
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        with open(p, "wb") as fh:
            fh.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, basis.k, basis.n_vertices))
            fh.write(basis.eigenvalues.astype("<f8").tobytes())
            fh.write(np.ascontiguousarray(basis.eigenfunctions, dtype="<f8").tobytes())
            fh.write(basis.mass.astype("<f8").tobytes())
    except OSError as e:
        raise InputError(f"Cannot write basis cache {p}: {e}") from e
    return p


def load_basis(path: Union[str, os.PathLike]) -> SpectralBasis:
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as e:
        raise InputError(f"Cannot read basis cache {p}: {e}") from e
    if len(raw) < _HEADER.size:
        raise InputError(f"basis cache {p} is truncated")
    magic, version, k, n = _HEADER.unpack_from(raw, 0)
    if magic != CACHE_MAGIC:
        raise InputError(f"basis cache {p} has a bad magic header")
    if version != CACHE_VERSION:
        raise InputError(f"basis cache {p} has version {version}, expected {CACHE_VERSION}")
    expected = _HEADER.size + 8 * (k + n * k + n)
    if len(raw) != expected:
        raise InputError(f"basis cache {p} has {len(raw)} bytes, expected {expected}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    evals = body[:k].copy()
    evecs = body[k:k + n * k].reshape(n, k).copy()
    mass = body[k + n * k:].copy()
    return SpectralBasis(evals, evecs, mass, from_cache=True)


# ---------------------------- Function transport ----------------------------
def project(basis: SpectralBasis, fields: np.ndarray) -> np.ndarray:
    """Spectral coefficients Phi^T M f; 1-D input gives a 1-D result."""
    f = np.asarray(fields, dtype=np.float64)
    if f.shape[0] != basis.n_vertices or f.ndim > 2:
        raise InputError(f"field has {f.shape[0]} rows, basis has {basis.n_vertices} vertices")
    weighted = f * basis.mass if f.ndim == 1 else f * basis.mass[:, None]
    return basis.eigenfunctions.T @ weighted


def reconstruct(basis: SpectralBasis, coeffs: np.ndarray) -> np.ndarray:
    a = np.asarray(coeffs, dtype=np.float64)
    if a.shape[0] != basis.k or a.ndim > 2:
        raise InputError(f"coefficients have {a.shape[0]} rows, basis has dimension {basis.k}")
    return basis.eigenfunctions @ a


def heat_diffuse(basis: SpectralBasis, field: np.ndarray, t: float) -> np.ndarray:
    """Phi diag(exp(-t lambda)) Phi^T M f in the truncated basis."""
    if t < 0:
        raise InputError(f"diffusion time must be nonnegative, got {t}")
    a = project(basis, field)
    decay = np.exp(-t * basis.eigenvalues)
    a = a * decay if a.ndim == 1 else a * decay[:, None]
    return reconstruct(basis, a)


def default_diffusion_time(mesh: TriangleMesh, t_scale: float = 10.0) -> float:
    """(mean edge length)^2 * t_scale."""
    if t_scale < 0:
        raise InputError(f"t_scale must be nonnegative, got {t_scale}")
    return mesh.mean_edge_length() ** 2 * t_scale
