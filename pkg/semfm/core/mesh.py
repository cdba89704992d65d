"""
Triangle meshes: representation, OFF/OBJ I/O, colored PLY export, and the
discrete operators everything else is built on (lumped mass, cotangent
stiffness, edge-graph geodesics).

Conventions
-----------
- vertices are float64 (n, 3), faces int64 (m, 3); both are read-only once the
  mesh is built.
- the stiffness matrix L is positive semidefinite: off-diagonal entry for edge
  (i, j) is -(cot a + cot b) / 2, diagonal is minus the off-diagonal row sum.
"""
from __future__ import annotations
import hashlib
import io
import logging
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import BinaryIO, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from errors import InputError, MeshParseError

logger = logging.getLogger(__name__)

MIN_FACE_AREA = 1e-12
COT_CLAMP = 1e6
MIN_ANGLE = 1e-6

MeshSource = Union[str, os.PathLike, bytes, BinaryIO]


def _triangle_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    e1 = vertices[faces[:, 1]] - vertices[faces[:, 0]]
    e2 = vertices[faces[:, 2]] - vertices[faces[:, 0]]
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


# ---------------------------- Data Model ----------------------------
@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    name: str = "mesh"

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3:
            raise InputError(f"vertices must have shape (n, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise InputError(f"faces must have shape (m, 3), got {f.shape}")
        if v.shape[0] < 4:
            raise InputError(f"a mesh needs at least 4 vertices, got {v.shape[0]}")
        if f.shape[0] < 1:
            raise InputError("a mesh needs at least one face")
        if not np.all(np.isfinite(v)):
            raise InputError("vertex coordinates must be finite")
        if f.min() < 0 or f.max() >= v.shape[0]:
            raise InputError(f"face index out of range [0, {v.shape[0]})")
        repeated = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        if np.any(repeated):
            raise InputError(f"face {int(np.argmax(repeated))} repeats a vertex")
        areas = _triangle_areas(v, f)
        small = areas <= MIN_FACE_AREA
        if np.any(small):
            raise InputError(f"face {int(np.argmax(small))} is degenerate (area {areas[small][0]:.3e})")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_faces(self) -> int:
        return int(self.faces.shape[0])

    @cached_property
    def face_areas(self) -> np.ndarray:
        return _triangle_areas(self.vertices, self.faces)

    @property
    def area(self) -> float:
        return float(self.face_areas.sum())

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted (i, j) pairs, i < j."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=0)
        e.sort(axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.int64(self.n_vertices).tobytes())
        h.update(self.vertices.tobytes())
        h.update(self.faces.tobytes())
        return h.hexdigest()

    def mean_edge_length(self) -> float:
        e = self.edges
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).mean())

    def bounding_box_diagonal(self) -> float:
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    def with_vertices(self, vertices: np.ndarray, name: Optional[str] = None) -> "TriangleMesh":
        """Same connectivity, new positions."""
        return TriangleMesh(vertices, self.faces, name or self.name)


# ---------------------------- Parsing ----------------------------
def _read_source(source: MeshSource) -> Tuple[str, Optional[str]]:
    """Return (text, suffix) for a path, raw bytes or a binary stream."""
    if isinstance(source, (bytes, bytearray)):
        raw, suffix = bytes(source), None
    elif hasattr(source, "read"):
        raw, suffix = source.read(), None
        if isinstance(raw, str):
            return raw, None
    else:
        p = Path(source)
        if not p.is_file():
            raise InputError(f"Mesh file not found: {p}")
        raw, suffix = p.read_bytes(), p.suffix.lower().lstrip(".")
    try:
        return raw.decode("utf-8"), suffix
    except UnicodeDecodeError as e:
        raise MeshParseError(f"mesh is not ASCII/UTF-8 text: {e}") from e


def _significant_lines(text: str) -> Iterable[Tuple[int, List[str]]]:
    for lineno, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].strip()
        if content:
            yield lineno, content.split()


def _parse_float(tok: str, lineno: int) -> float:
    try:
        x = float(tok)
    except ValueError:
        raise MeshParseError(f"non-numeric coordinate '{tok}'", lineno) from None
    if not np.isfinite(x):
        raise MeshParseError(f"non-finite coordinate '{tok}'", lineno)
    return x


def _fan(polygon: Sequence[int], vertices: np.ndarray, lineno: int) -> List[Tuple[int, int, int]]:
    """Fan-triangulate a polygon and reject degenerate triangles."""
    if len(polygon) < 3:
        raise MeshParseError(f"face needs at least 3 vertices, got {len(polygon)}", lineno)
    if len(set(polygon)) != len(polygon):
        raise MeshParseError("degenerate face (repeated vertex)", lineno)
    tris = [(polygon[0], polygon[i], polygon[i + 1]) for i in range(1, len(polygon) - 1)]
    areas = _triangle_areas(vertices, np.asarray(tris, dtype=np.int64))
    if np.any(areas <= MIN_FACE_AREA):
        raise MeshParseError("degenerate face (zero area)", lineno)
    return tris


def _parse_off(text: str) -> Tuple[np.ndarray, np.ndarray]:
    lines = list(_significant_lines(text))
    if not lines:
        raise MeshParseError("empty OFF file", 1)
    pos = 0
    lineno, toks = lines[pos]
    if toks[0].upper() != "OFF":
        raise MeshParseError(f"malformed header '{toks[0]}' (expected 'OFF')", lineno)
    counts = toks[1:]
    pos += 1
    if not counts:
        if pos >= len(lines):
            raise MeshParseError("missing vertex/face counts", lineno + 1)
        lineno, counts = lines[pos]
        pos += 1
    try:
        n_verts, n_faces = int(counts[0]), int(counts[1])
    except (ValueError, IndexError):
        raise MeshParseError(f"malformed counts line '{' '.join(counts)}'", lineno) from None
    if n_verts < 0 or n_faces < 0:
        raise MeshParseError("negative vertex/face count", lineno)

    vertices = np.empty((n_verts, 3), dtype=np.float64)
    for i in range(n_verts):
        if pos >= len(lines):
            raise MeshParseError(f"unexpected end of file after {i} of {n_verts} vertices", lineno + 1)
        lineno, toks = lines[pos]
        pos += 1
        if len(toks) < 3:
            raise MeshParseError(f"vertex needs 3 coordinates, got {len(toks)}", lineno)
        vertices[i] = [_parse_float(t, lineno) for t in toks[:3]]

    faces: List[Tuple[int, int, int]] = []
    for i in range(n_faces):
        if pos >= len(lines):
            raise MeshParseError(f"unexpected end of file after {i} of {n_faces} faces", lineno + 1)
        lineno, toks = lines[pos]
        pos += 1
        try:
            n = int(toks[0])
            idx = [int(t) for t in toks[1:1 + n]]
        except ValueError:
            raise MeshParseError(f"non-integer face entry in '{' '.join(toks)}'", lineno) from None
        if len(idx) != n:
            raise MeshParseError(f"face declares {n} vertices but lists {len(idx)}", lineno)
        for j in idx:
            if j < 0 or j >= n_verts:
                raise MeshParseError(f"face index {j} out of range [0, {n_verts})", lineno)
        faces.extend(_fan(idx, vertices, lineno))
    return vertices, np.asarray(faces, dtype=np.int64).reshape(-1, 3)


def _parse_obj(text: str) -> Tuple[np.ndarray, np.ndarray]:
    verts: List[List[float]] = []
    polys: List[Tuple[int, List[int]]] = []
    for lineno, toks in _significant_lines(text):
        tag = toks[0]
        if tag == "v":
            if len(toks) < 4:
                raise MeshParseError(f"vertex needs 3 coordinates, got {len(toks) - 1}", lineno)
            verts.append([_parse_float(t, lineno) for t in toks[1:4]])
        elif tag == "f":
            idx: List[int] = []
            for t in toks[1:]:
                head = t.split("/", 1)[0]
                try:
                    j = int(head)
                except ValueError:
                    raise MeshParseError(f"non-integer face index '{t}'", lineno) from None
                if j == 0:
                    raise MeshParseError("OBJ face indices are 1-based; got 0", lineno)
                # negative indices are relative to the vertices read so far
                idx.append(len(verts) + j if j < 0 else j - 1)
            polys.append((lineno, idx))
        # vt / vn / o / g / s / usemtl / mtllib carry nothing we need

    vertices = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    faces: List[Tuple[int, int, int]] = []
    for lineno, idx in polys:
        for j in idx:
            if j < 0 or j >= len(vertices):
                raise MeshParseError(f"face index {j + 1} out of range [1, {len(vertices)}]", lineno)
        faces.extend(_fan(idx, vertices, lineno))
    return vertices, np.asarray(faces, dtype=np.int64).reshape(-1, 3)


def load_mesh(source: MeshSource, fmt: Optional[str] = None, name: Optional[str] = None) -> TriangleMesh:
    """
    Parse an ASCII OFF or OBJ mesh from a path, raw bytes or a binary stream.
    Polygons are fan-triangulated; vertex and face order follow the file.

    Raises MeshParseError (naming the line) for malformed content.
    """
    text, suffix = _read_source(source)
    kind = (fmt or suffix or "").lower()
    if kind == "off":
        vertices, faces = _parse_off(text)
    elif kind == "obj":
        vertices, faces = _parse_obj(text)
    else:
        raise InputError(f"Unsupported mesh format '{kind or '?'}' (expected OFF or OBJ)")
    if name is None:
        name = Path(source).stem if isinstance(source, (str, os.PathLike)) else "mesh"
    try:
        return TriangleMesh(vertices, faces, name)
    except MeshParseError:
        raise
    except InputError as e:
        raise MeshParseError(str(e)) from e


def save_mesh(mesh: TriangleMesh, path: Union[str, os.PathLike], fmt: Optional[str] = None) -> Path:
    """Write the mesh as ASCII OFF or OBJ (format from `fmt` or the suffix)."""
    p = Path(path)
    kind = (fmt or p.suffix.lstrip(".")).lower()
    buf = io.StringIO()
    if kind == "off":
        buf.write("OFF\n")
        buf.write(f"{mesh.n_vertices} {mesh.n_faces} 0\n")
        for x, y, z in mesh.vertices:
            buf.write(f"{x:.17g} {y:.17g} {z:.17g}\n")
        for a, b, c in mesh.faces:
            buf.write(f"3 {a} {b} {c}\n")
    elif kind == "obj":
        for x, y, z in mesh.vertices:
            buf.write(f"v {x:.17g} {y:.17g} {z:.17g}\n")
        for a, b, c in mesh.faces:
            buf.write(f"f {a + 1} {b + 1} {c + 1}\n")
    else:
        raise InputError(f"Unsupported mesh format '{kind}' (expected OFF or OBJ)")
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(buf.getvalue(), encoding="utf-8")
    except OSError as e:
        raise InputError(f"Cannot write mesh to {p}: {e}") from e
    return p


# ---------------------------- Operators ----------------------------
def vertex_areas(mesh: TriangleMesh) -> np.ndarray:
    """Lumped mass: one third of the incident triangle areas per vertex."""
    w = np.repeat(mesh.face_areas / 3.0, 3)
    return np.bincount(mesh.faces.ravel(), weights=w, minlength=mesh.n_vertices)


def corner_cotangents(mesh: TriangleMesh) -> np.ndarray:
    """
    (m, 3) cotangents of the corner angles; column i is the angle at faces[:, i],
    which is opposite the edge (faces[:, i+1], faces[:, i+2]).
    Near-degenerate corners are clamped to |cot| <= COT_CLAMP.
    """
    v, f = mesh.vertices, mesh.faces
    cots = np.empty(f.shape, dtype=np.float64)
    angles = np.empty(f.shape, dtype=np.float64)
    for i in range(3):
        a, b, c = f[:, i], f[:, (i + 1) % 3], f[:, (i + 2) % 3]
        e1 = v[b] - v[a]
        e2 = v[c] - v[a]
        dot = np.einsum("ij,ij->i", e1, e2)
        cross = np.linalg.norm(np.cross(e1, e2), axis=1)
        angles[:, i] = np.arctan2(cross, dot)
        with np.errstate(divide="ignore", invalid="ignore"):
            cots[:, i] = dot / cross
    bad = (angles < MIN_ANGLE) | (angles > np.pi - MIN_ANGLE) | ~np.isfinite(cots)
    if np.any(bad):
        logger.warning(
            "%s: %d near-degenerate corner angle(s) (min angle %.3e rad); cotangents clamped to +/-%.0e",
            mesh.name, int(bad.sum()), float(angles.min()), COT_CLAMP,
        )
    cots = np.nan_to_num(cots, nan=0.0, posinf=COT_CLAMP, neginf=-COT_CLAMP)
    return np.clip(cots, -COT_CLAMP, COT_CLAMP)


def cotangent_laplacian(mesh: TriangleMesh) -> sp.csr_matrix:
    """
    PSD cotangent stiffness matrix. Contributions are accumulated per face, so
    non-manifold edges (more than two incident faces) simply sum.
    """
    n, f = mesh.n_vertices, mesh.faces
    cots = corner_cotangents(mesh)
    rows, cols, vals = [], [], []
    for i in range(3):
        b, c = f[:, (i + 1) % 3], f[:, (i + 2) % 3]
        w = -0.5 * cots[:, i]
        rows += [b, c]
        cols += [c, b]
        vals += [w, w]
    off = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    diag = -np.asarray(off.sum(axis=1)).ravel()
    L = (off + sp.diags(diag)).tocsr()
    L.sum_duplicates()
    return L


def edge_graph(mesh: TriangleMesh) -> sp.csr_matrix:
    """Symmetric sparse graph over mesh edges weighted by Euclidean length."""
    e = mesh.edges
    w = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    n = mesh.n_vertices
    g = sp.coo_matrix(
        (np.concatenate([w, w]), (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]))),
        shape=(n, n),
    )
    return g.tocsr()


def _check_sources(mesh: TriangleMesh, sources: Iterable[int]) -> np.ndarray:
    src = np.unique(np.asarray(list(sources), dtype=np.int64))
    if src.size == 0:
        raise InputError("graph_geodesics needs at least one source vertex")
    if src.min() < 0 or src.max() >= mesh.n_vertices:
        raise InputError(f"source vertex out of range [0, {mesh.n_vertices})")
    return src


def graph_geodesics(mesh: TriangleMesh, sources: Iterable[int], graph: Optional[sp.csr_matrix] = None) -> np.ndarray:
    """
    Shortest edge-path distance from the nearest source to every vertex.
    Vertices unreachable from all sources get +inf.
    """
    src = _check_sources(mesh, sources)
    g = edge_graph(mesh) if graph is None else graph
    d = dijkstra(g, directed=False, indices=src, min_only=True)
    d = np.asarray(d, dtype=np.float64)
    d[src] = 0.0
    return d


def pairwise_geodesics(mesh: TriangleMesh, sources: Sequence[int], graph: Optional[sp.csr_matrix] = None,
                       chunk: int = 256) -> np.ndarray:
    """(len(sources), n) distance rows, computed in chunks to bound memory."""
    src = np.asarray(sources, dtype=np.int64)
    g = edge_graph(mesh) if graph is None else graph
    out = np.empty((src.size, mesh.n_vertices), dtype=np.float64)
    for start in range(0, src.size, chunk):
        block = src[start:start + chunk]
        out[start:start + block.size] = dijkstra(g, directed=False, indices=block)
    return out


def estimate_geodesic_diameter(mesh: TriangleMesh, n_samples: int = 8, seed: int = 0,
                               graph: Optional[sp.csr_matrix] = None) -> float:
    """
    Farthest-point sweep: start at a seeded vertex, jump to the farthest reachable
    vertex n_samples times and keep the largest finite distance seen.
    """
    g = edge_graph(mesh) if graph is None else graph
    rng = np.random.default_rng(seed)
    current = int(rng.integers(mesh.n_vertices))
    best = 0.0
    for _ in range(max(1, n_samples)):
        d = graph_geodesics(mesh, [current], graph=g)
        finite = np.where(np.isfinite(d), d, -1.0)
        far = int(np.argmax(finite))
        best = max(best, float(finite[far]))
        if far == current:
            break
        current = far
    return best


# ---------------------------- Export ----------------------------
# Scalar ramp (diverging blue -> pale yellow -> red), stops at 0, .25, .5, .75, 1
SCALAR_RAMP_STOPS = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
SCALAR_RAMP_RGB = np.array([
    [49, 54, 149],
    [116, 173, 209],
    [255, 255, 191],
    [244, 109, 67],
    [165, 0, 38],
], dtype=np.float64)

# Label palette, cycled by label id; negative labels are drawn in NEUTRAL_RGB
LABEL_PALETTE = np.array([
    [31, 119, 180], [255, 127, 14], [44, 160, 44], [214, 39, 40], [148, 103, 189],
    [140, 86, 75], [227, 119, 194], [127, 127, 127], [188, 189, 34], [23, 190, 207],
], dtype=np.uint8)
NEUTRAL_RGB = np.array([200, 200, 200], dtype=np.uint8)


def field_colors(field: np.ndarray) -> np.ndarray:
    """
    Map a per-vertex field to uint8 RGB. Integer and boolean fields are labels
    (palette cycle); float fields are scalars min-max normalized onto the ramp.
    """
    arr = np.asarray(field)
    if arr.dtype == bool or np.issubdtype(arr.dtype, np.integer):
        labels = arr.astype(np.int64)
        rgb = LABEL_PALETTE[np.mod(labels, len(LABEL_PALETTE))].copy()
        rgb[labels < 0] = NEUTRAL_RGB
        return rgb
    vals = arr.astype(np.float64)
    finite = np.isfinite(vals)
    rgb = np.tile(NEUTRAL_RGB, (vals.size, 1))
    if not np.any(finite):
        return rgb
    lo, hi = vals[finite].min(), vals[finite].max()
    u = np.zeros_like(vals) if hi <= lo else (vals - lo) / (hi - lo)
    for ch in range(3):
        rgb[finite, ch] = np.rint(np.interp(u[finite], SCALAR_RAMP_STOPS, SCALAR_RAMP_RGB[:, ch])).astype(np.uint8)
    return rgb


def export_colored_mesh(mesh: TriangleMesh, field: Sequence, path: Optional[Union[str, os.PathLike]] = None) -> bytes:
    """ASCII PLY with per-vertex `red green blue`; written to `path` when given."""
    arr = np.asarray(field)
    if arr.ndim != 1 or arr.shape[0] != mesh.n_vertices:
        raise InputError(f"field length {arr.shape[0] if arr.ndim else 0} does not match vertex count {mesh.n_vertices}")
    rgb = field_colors(arr)
    buf = io.StringIO()
    buf.write("ply\nformat ascii 1.0\n")
    buf.write(f"comment {mesh.name}\n")
    buf.write(f"element vertex {mesh.n_vertices}\n")
    buf.write("property float x\nproperty float y\nproperty float z\n")
    buf.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
    buf.write(f"element face {mesh.n_faces}\n")
    buf.write("property list uchar int vertex_indices\nend_header\n")
    for (x, y, z), (r, g, b) in zip(mesh.vertices, rgb):
        buf.write(f"{x:.10g} {y:.10g} {z:.10g} {r} {g} {b}\n")
    for a, b, c in mesh.faces:
        buf.write(f"3 {a} {b} {c}\n")
    data = buf.getvalue().encode("ascii")
    if path is not None:
        p = Path(path)
        try:
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_bytes(data)
        except OSError as e:
            raise InputError(f"Cannot write PLY to {p}: {e}") from e
    return data


# ---------------------------- Constructors ----------------------------
def make_icosphere(subdivisions: int = 3, radius: float = 1.0, name: str = "icosphere") -> TriangleMesh:
    """Subdivided icosahedron projected onto a sphere."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ]
    faces = [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
    verts = [list(np.asarray(v, dtype=np.float64) / np.linalg.norm(v)) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = (np.asarray(verts[a]) + np.asarray(verts[b])) / 2.0
                verts.append(list(m / np.linalg.norm(m)))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new_faces
    return TriangleMesh(np.asarray(verts) * radius, np.asarray(faces), name)


def make_grid(nx: int, ny: int, width: float = 1.0, height: float = 1.0, name: str = "grid") -> TriangleMesh:
    """Flat (nx+1) x (ny+1) vertex grid in the z = 0 plane, two triangles per cell."""
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])
    idx = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[1:, :-1].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[:-1, 1:].ravel()
    faces = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return TriangleMesh(verts, faces, name)
