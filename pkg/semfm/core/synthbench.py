"""
Procedural category benchmark.

Each category is built from one labeled template: a tube of vertex rings along
an axis, closed by two poles and split into parts by axial ranges, with side
arms (capped stubs or handle loops) grafted onto holes cut into the tube. Arms
are parts of their own, so templates carry no rotational symmetry about the
axis. Objects share the template's connectivity, so the ground-truth
correspondence between any two members is the vertex-index identity. Geometric
variety comes from seeded smooth deformations; semantic variety from embedding
noise.
"""
from __future__ import annotations
import json
import logging
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.mesh import TriangleMesh, estimate_geodesic_diameter, graph_geodesics, save_mesh
from core.semantics import LiftedSampleSet, sample_surface, save_samples
from core.transfer import AffordanceRegion, save_region
from errors import InputError
from schemas import Manifest, ObjectEntry, SCHEMA_VERSION

logger = logging.getLogger(__name__)

MAX_AMPLITUDE = 0.5
MIN_SAMPLES_PER_PART = 20
BLEND_WIDTH = 0.02

_Z = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class Arm:
    """
    Side tube leaving the body at axial position `s` and angle `theta`.
    Without `end_s` it is a capped stub of the given length, leaning `tilt`
    radians toward +z; with `end_s` it is a loop that reaches `length` away
    from the body and re-enters it at (end_s, theta).
    """
    part: str
    s: float
    theta: float
    length: float
    width: float
    tilt: float = 0.0
    end_s: Optional[float] = None

    @property
    def is_loop(self) -> bool:
        return self.end_s is not None


@dataclass(frozen=True)
class Template:
    """Radius profile r(s), cross-section aspect and squareness along s in [0, 1], plus arms."""
    body_parts: Tuple[str, ...]
    # body part p covers s in [bounds[p], bounds[p + 1])
    bounds: Tuple[float, ...]
    profile_s: Tuple[float, ...]
    profile_r: Tuple[float, ...]
    aspect_s: Tuple[float, ...] = (0.0, 1.0)
    aspect_y: Tuple[float, ...] = (1.0, 1.0)
    # superellipse exponent of the cross-section: 2 is round, larger is boxier
    section_s: Tuple[float, ...] = (0.0, 1.0)
    section_n: Tuple[float, ...] = (2.0, 2.0)
    arms: Tuple[Arm, ...] = ()
    length: float = 1.0
    # index into `parts`
    affordance_part: int = 0

    @property
    def parts(self) -> Tuple[str, ...]:
        return self.body_parts + tuple(arm.part for arm in self.arms)


# The handle tool is symmetric under a half turn that swaps grip and shaft (and
# trigger and spur): only the part labels tell the two ends apart.
TEMPLATES: Dict[str, Template] = {
    "handle-tool": Template(
        body_parts=("grip", "guard", "shaft"),
        bounds=(0.0, 0.44, 0.56, 1.0),
        profile_s=(0.0, 0.03, 0.42, 0.47, 0.5, 0.53, 0.58, 0.97, 1.0),
        profile_r=(0.02, 0.035, 0.035, 0.05, 0.055, 0.05, 0.035, 0.035, 0.02),
        section_s=(0.0, 0.42, 0.47, 0.53, 0.58, 1.0),
        section_n=(4.0, 4.0, 2.0, 2.0, 4.0, 4.0),
        arms=(
            Arm("trigger", s=0.25, theta=np.pi / 3, length=0.2, width=0.045, tilt=0.35),
            Arm("spur", s=0.75, theta=2 * np.pi / 3, length=0.2, width=0.045, tilt=-0.35),
        ),
        length=1.0,
        affordance_part=0,
    ),
    "two-part-container": Template(
        body_parts=("base", "body", "lid"),
        bounds=(0.0, 0.1, 0.78, 1.0),
        profile_s=(0.0, 0.05, 0.1, 0.7, 0.78, 0.8, 0.95, 1.0),
        profile_r=(0.30, 0.33, 0.35, 0.35, 0.36, 0.30, 0.29, 0.20),
        arms=(Arm("handle", s=0.3, theta=0.0, length=0.2, width=0.06, end_s=0.65),),
        length=0.9,
        affordance_part=3,
    ),
    "blade-tool": Template(
        body_parts=("handle", "guard", "blade"),
        bounds=(0.0, 0.38, 0.44, 1.0),
        profile_s=(0.0, 0.05, 0.35, 0.41, 0.47, 0.9, 1.0),
        profile_r=(0.06, 0.07, 0.07, 0.10, 0.09, 0.06, 0.01),
        aspect_s=(0.0, 0.38, 0.44, 1.0),
        aspect_y=(0.75, 0.75, 0.2, 0.12),
        section_s=(0.0, 0.38, 0.44, 1.0),
        section_n=(3.0, 3.0, 2.0, 2.0),
        length=1.1,
        affordance_part=0,
    ),
}


@dataclass(frozen=True)
class CategorySpec:
    base: str = "handle-tool"
    n_objects: int = 4
    amplitude: float = 0.25
    d: int = 32
    noise: float = 0.1
    seed: int = 0
    rings: int = 48
    segments: int = 24
    n_samples: int = 2000
    radius_fraction: float = 0.2
    affordance_part: Optional[int] = None

    def __post_init__(self):
        if self.base not in TEMPLATES:
            raise InputError(f"unknown base shape '{self.base}' (choose from {', '.join(TEMPLATES)})")
        if self.n_objects < 2:
            raise InputError(f"a category needs at least 2 objects, got {self.n_objects}")
        if not 0.0 <= self.amplitude <= MAX_AMPLITUDE:
            raise InputError(f"amplitude {self.amplitude} outside the stable range [0, {MAX_AMPLITUDE}]")
        if self.noise < 0:
            raise InputError(f"noise must be nonnegative, got {self.noise}")
        if self.d < 2:
            raise InputError(f"embedding dimension must be at least 2, got {self.d}")
        if self.rings < 4 or self.segments < 6:
            raise InputError("template resolution needs at least 4 rings and 6 segments")
        if self.radius_fraction < 0:
            raise InputError(f"radius_fraction must be nonnegative, got {self.radius_fraction}")
        n_parts = len(TEMPLATES[self.base].parts)
        if self.affordance_part is not None and not 0 <= self.affordance_part < n_parts:
            raise InputError(f"affordance_part must be in [0, {n_parts}) for '{self.base}'")
        check_resolution(self.template, self.rings, self.segments)

    @property
    def template(self) -> Template:
        return TEMPLATES[self.base]

    @property
    def target_part(self) -> int:
        return self.template.affordance_part if self.affordance_part is None else self.affordance_part


@dataclass(eq=False)
class SyntheticObject:
    name: str
    index: int
    mesh: TriangleMesh
    part_labels: np.ndarray
    part_names: Tuple[str, ...]
    axial: np.ndarray
    # (n, P) per-vertex part weights driving the deformation
    blend: np.ndarray
    gt_affordance: Optional[AffordanceRegion] = None

    @property
    def gt_map_to_base(self) -> np.ndarray:
        return np.arange(self.mesh.n_vertices)


# ---------------------------- Resolution ----------------------------
@dataclass(frozen=True)
class _Hole:
    """Block of rows x cols body quads starting at ring i0, segment j0."""
    i0: int
    j0: int
    rows: int
    cols: int

    def vertex_cells(self, n_s: int) -> set:
        return {(i, j % n_s) for i in range(self.i0, self.i0 + self.rows + 1)
                for j in range(self.j0, self.j0 + self.cols + 1)}


def ring_positions(n_r: int) -> np.ndarray:
    return np.arange(1, n_r + 1) / (n_r + 1)


def _place_hole(tpl: Template, arm: Arm, s: float, n_r: int, n_s: int,
                size: Optional[Tuple[int, int]] = None) -> _Hole:
    if size is None:
        spacing = tpl.length / (n_r + 1)
        arc = 2.0 * np.pi * float(np.interp(s, tpl.profile_s, tpl.profile_r)) / n_s
        size = (max(1, int(round(arm.width / spacing))), max(1, min(n_s - 2, int(round(arm.width / arc)))))
    rows, cols = size
    i0 = int(round(s * (n_r + 1) - 1 - rows / 2))
    if i0 < 0 or i0 + rows > n_r - 1:
        raise InputError(f"{n_r} rings leave no room for arm '{arm.part}' at s={s}; use more rings")
    j0 = int(round(arm.theta / (2.0 * np.pi) * n_s - cols / 2)) % n_s
    return _Hole(i0, j0, rows, cols)


def check_resolution(tpl: Template, n_r: int, n_s: int) -> List[Tuple[_Hole, Optional[_Hole]]]:
    """
    Every body part must own at least one ring and every arm needs its own
    holes in the tube; returns the (start, end) holes per arm.
    """
    counts = np.bincount(_part_of(ring_positions(n_r), tpl.bounds), minlength=len(tpl.body_parts))
    for p in np.flatnonzero(counts == 0):
        raise InputError(f"{n_r} rings leave part '{tpl.body_parts[p]}' without vertices; use more rings")

    holes, cells = [], []
    for arm in tpl.arms:
        start = _place_hole(tpl, arm, arm.s, n_r, n_s)
        end = _place_hole(tpl, arm, arm.end_s, n_r, n_s, (start.rows, start.cols)) if arm.is_loop else None
        for hole in (start, end):
            if hole is None:
                continue
            own = hole.vertex_cells(n_s)
            for other, taken in cells:
                if own & taken:
                    raise InputError(f"arms '{other}' and '{arm.part}' overlap at {n_r} rings x {n_s} segments")
            cells.append((arm.part, own))
        holes.append((start, end))
    return holes


# ---------------------------- Template ----------------------------
def _part_of(s: np.ndarray, bounds: Sequence[float]) -> np.ndarray:
    inner = np.asarray(bounds[1:-1])
    return np.searchsorted(inner, s, side="right").astype(np.int64)


def _superellipse(theta: np.ndarray, n: np.ndarray) -> np.ndarray:
    c, s = np.abs(np.cos(theta)), np.abs(np.sin(theta))
    return (c ** n + s ** n) ** (-1.0 / n)


def _boundary(idx: np.ndarray, hole: _Hole) -> np.ndarray:
    """Body vertex ids around a hole, one cycle."""
    n_s = idx.shape[1]
    i0, j0, rows, cols = hole.i0, hole.j0, hole.rows, hole.cols
    cycle = [(i0, j0 + k) for k in range(cols)]
    cycle += [(i0 + k, j0 + cols) for k in range(rows)]
    cycle += [(i0 + rows, j0 + cols - k) for k in range(cols)]
    cycle += [(i0 + rows - k, j0) for k in range(rows)]
    return np.array([idx[i, j % n_s] for i, j in cycle], dtype=np.int64)


class _Assembly:
    """Growing vertex and face lists with per-vertex labels."""

    def __init__(self, vertices: np.ndarray, axial: np.ndarray, labels: np.ndarray):
        self.vertices = [vertices]
        self.axial = [axial]
        self.labels = [labels]
        self.arm_t = [np.zeros(len(vertices))]
        self.faces: List[np.ndarray] = []
        self.n = len(vertices)

    def add(self, points: np.ndarray, axial, label: int, t) -> np.ndarray:
        m = len(points)
        ids = np.arange(self.n, self.n + m)
        self.n += m
        self.vertices.append(points)
        self.axial.append(np.broadcast_to(np.asarray(axial, dtype=float), (m,)).copy())
        self.labels.append(np.full(m, label, dtype=np.int64))
        self.arm_t.append(np.broadcast_to(np.asarray(t, dtype=float), (m,)).copy())
        return ids

    def strip(self, rings: Sequence[np.ndarray], centers: np.ndarray) -> None:
        for k in range(len(rings) - 1):
            a, d = rings[k], rings[k + 1]
            b, c = np.roll(a, -1), np.roll(d, -1)
            tri = np.vstack([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
            self.faces.append(self._outward(tri, centers[k], centers[k + 1]))

    def fan(self, pole: int, ring: np.ndarray, center: np.ndarray) -> None:
        tri = np.column_stack([np.full(len(ring), pole), ring, np.roll(ring, -1)])
        self.faces.append(self._outward(tri, center))

    def _outward(self, tri: np.ndarray, c0: np.ndarray, c1: Optional[np.ndarray] = None) -> np.ndarray:
        p = np.vstack(self.vertices)[tri]
        normal = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        centroid = p.mean(axis=1)
        if c1 is None:
            out = centroid - c0
        else:
            axis = (c1 - c0) / max(np.linalg.norm(c1 - c0), 1e-12)
            out = centroid - 0.5 * (c0 + c1)
            out -= np.outer(out @ axis, axis)
        flip = np.einsum("ij,ij->i", normal, out) < 0
        tri[flip] = tri[flip][:, [0, 2, 1]]
        return tri


def _radial(theta: float) -> np.ndarray:
    return np.array([np.cos(theta), np.sin(theta), 0.0])


def _rounded(off: np.ndarray) -> np.ndarray:
    rho = np.linalg.norm(off, axis=1)
    return off * (rho.mean() / np.maximum(rho, 1e-12))[:, None]


def _graft_stub(asm: _Assembly, loop: np.ndarray, arm: Arm, part: int, spacing: float) -> None:
    P = np.vstack(asm.vertices)[loop]
    c0 = P.mean(axis=0)
    u = _radial(arm.theta)
    d = np.cos(arm.tilt) * u + np.sin(arm.tilt) * _Z
    off = P - c0
    off -= np.outer(off @ d, d)
    circle = _rounded(off)
    rho = float(np.linalg.norm(circle[0]))

    n_a = max(2, int(round(arm.length / spacing)))
    rings, centers = [loop], [c0]
    for k in range(1, n_a + 1):
        t = k / n_a
        w = min(1.0, 2.0 * t)
        shrink = 0.6 if k == n_a else 1.0
        center = c0 + t * arm.length * d
        ring = center + shrink * ((1.0 - w) * off + w * circle)
        rings.append(asm.add(ring, arm.s, part, t))
        centers.append(center)
    asm.strip(rings, np.array(centers))
    pole = asm.add((c0 + (arm.length + 0.4 * rho) * d)[None], arm.s, part, 1.0)
    asm.fan(int(pole[0]), rings[-1], centers[-1])


def _match_cycle(predicted: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Cyclic shift and direction of P's indices that best matches `predicted`."""
    m = len(P)
    best, best_cost = None, np.inf
    for order in (np.arange(m), np.arange(m)[::-1]):
        for k in range(m):
            perm = np.roll(order, -k)
            cost = float(np.linalg.norm(P[perm] - predicted, axis=1).sum())
            if cost < best_cost:
                best, best_cost = perm, cost
    return best


def _graft_loop(asm: _Assembly, loop_a: np.ndarray, loop_b: np.ndarray, arm: Arm, part: int,
                spacing: float) -> None:
    V = np.vstack(asm.vertices)
    PA, PB = V[loop_a], V[loop_b]
    cA, cB = PA.mean(axis=0), PB.mean(axis=0)
    u = _radial(arm.theta)
    w = np.cross(_Z, u)
    off = PA - cA
    alpha, beta = off @ w, off @ _Z
    coords = np.column_stack([alpha, beta])
    circle = _rounded(coords)

    def frame(phi: float) -> Tuple[np.ndarray, np.ndarray]:
        g = 0.5 * (1.0 - np.cos(phi))
        center = (1.0 - g) * cA + g * cB + u * arm.length * np.sin(phi)
        tangent = 0.5 * np.sin(phi) * (cB - cA) + u * arm.length * np.cos(phi)
        tangent /= np.linalg.norm(tangent)
        normal = np.cross(w, tangent)
        return center, normal

    half = 0.5 * abs(float((cB - cA) @ _Z))
    path = np.pi * np.sqrt(0.5 * (arm.length ** 2 + half ** 2))
    n_a = max(3, int(round(path / spacing)))
    rings, centers = [loop_a], [cA]
    for k in range(1, n_a + 1):
        phi = np.pi * k / (n_a + 1)
        b = np.sin(phi)
        center, normal = frame(phi)
        xy = (1.0 - b) * coords + b * circle
        # N(0) = -z, so a +z offset at the start sits along -N
        ring = center + np.outer(xy[:, 0], w) - np.outer(xy[:, 1], normal)
        g = 0.5 * (1.0 - np.cos(phi))
        rings.append(asm.add(ring, (1.0 - g) * arm.s + g * arm.end_s, part, b))
        centers.append(center)

    _, end_normal = frame(np.pi)
    predicted = cB + np.outer(alpha, w) - np.outer(beta, end_normal)
    rings.append(loop_b[_match_cycle(predicted, PB)])
    centers.append(cB)
    asm.strip(rings, np.array(centers))


def build_template(spec: CategorySpec) -> SyntheticObject:
    """Undeformed labeled template for the spec's base shape."""
    tpl = spec.template
    n_r, n_s = spec.rings, spec.segments
    holes = check_resolution(tpl, n_r, n_s)
    s_ring = ring_positions(n_r)
    theta = 2.0 * np.pi * np.arange(n_s) / n_s
    r = np.interp(s_ring, tpl.profile_s, tpl.profile_r)
    ay = np.interp(s_ring, tpl.aspect_s, tpl.aspect_y)
    n_exp = np.interp(s_ring, tpl.section_s, tpl.section_n)

    S, TH = np.meshgrid(s_ring, theta, indexing="ij")
    R = r[:, None] * _superellipse(TH, n_exp[:, None])
    X = R * np.cos(TH)
    Y = R * ay[:, None] * np.sin(TH)
    Z = S * tpl.length
    ring_verts = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
    poles = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, tpl.length]])
    south, north = n_r * n_s, n_r * n_s + 1
    body_axial = np.concatenate([S.ravel(), [0.0, 1.0]])
    asm = _Assembly(np.vstack([ring_verts, poles]), body_axial, _part_of(body_axial, tpl.bounds))

    idx = np.arange(n_r * n_s).reshape(n_r, n_s)
    keep = np.ones((n_r - 1, n_s), dtype=bool)
    for hole in (h for pair in holes for h in pair if h is not None):
        keep[hole.i0:hole.i0 + hole.rows, (hole.j0 + np.arange(hole.cols)) % n_s] = False
    a = idx[:-1, :][keep]
    b = np.roll(idx[:-1, :], -1, axis=1)[keep]
    c = np.roll(idx[1:, :], -1, axis=1)[keep]
    d = idx[1:, :][keep]
    asm.faces += [np.column_stack([a, b, c]), np.column_stack([a, c, d])]
    first, last = idx[0], idx[-1]
    asm.faces.append(np.column_stack([np.full(n_s, south), np.roll(first, -1), first]))
    asm.faces.append(np.column_stack([np.full(n_s, north), last, np.roll(last, -1)]))

    spacing = tpl.length / (n_r + 1)
    n_body = len(tpl.body_parts)
    for p, (arm, (start, end)) in enumerate(zip(tpl.arms, holes)):
        if arm.is_loop:
            _graft_loop(asm, _boundary(idx, start), _boundary(idx, end), arm, n_body + p, spacing)
        else:
            _graft_stub(asm, _boundary(idx, start), arm, n_body + p, spacing)

    # hole interiors leave unreferenced body vertices behind
    faces = np.vstack(asm.faces)
    used = np.unique(faces)
    remap = np.full(asm.n, -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    vertices = np.vstack(asm.vertices)[used]
    axial = np.concatenate(asm.axial)[used]
    labels = np.concatenate(asm.labels)[used]
    arm_t = np.concatenate(asm.arm_t)[used]
    mesh = TriangleMesh(vertices, remap[faces], name=spec.base)

    blend = np.zeros((used.size, len(tpl.parts)))
    blend[:, :n_body] = part_blend_weights(axial, tpl.bounds)
    on_arm = labels >= n_body
    blend[on_arm] *= (1.0 - arm_t[on_arm])[:, None]
    blend[np.flatnonzero(on_arm), labels[on_arm]] += arm_t[on_arm]
    return SyntheticObject(spec.base, -1, mesh, labels, tpl.parts, axial, blend)


# ---------------------------- Deformation ----------------------------
def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def part_blend_weights(axial: np.ndarray, bounds: Sequence[float]) -> np.ndarray:
    """(n, P) smooth partition of unity over body parts, logistic in s around each bound."""
    n_parts = len(bounds) - 1
    cols = []
    for p in range(n_parts):
        lo = 1.0 if p == 0 else _sigmoid((axial - bounds[p]) / BLEND_WIDTH)
        hi = 0.0 if p == n_parts - 1 else _sigmoid((axial - bounds[p + 1]) / BLEND_WIDTH)
        cols.append(np.broadcast_to(lo - hi, axial.shape))
    w = np.column_stack(cols)
    return w / w.sum(axis=1, keepdims=True)


def deform(template: SyntheticObject, spec: CategorySpec, rng: np.random.Generator) -> np.ndarray:
    """
    Per-part scaling about the axis blended across part borders, axial
    stretch, bending and jitter, all kept close to isometric. Each vertex moves
    at most amplitude/2 * template diagonal, so two members differ by at most
    amplitude * diagonal.
    """
    V0 = template.mesh.vertices
    amp = spec.amplitude
    if amp == 0:
        return V0.copy()
    tpl = spec.template
    diag = template.mesh.bounding_box_diagonal()
    s = template.axial

    radial = 1.0 + 0.4 * amp * rng.uniform(-1.0, 1.0, len(tpl.parts))
    scale = template.blend @ radial
    stretch = 1.0 + 0.2 * amp * rng.uniform(-1.0, 1.0)
    bend = amp * rng.uniform(-1.0, 1.0)

    V = V0.copy()
    V[:, :2] *= scale[:, None]
    V[:, 2] *= stretch
    V[:, 0] += bend * tpl.length * (s - 0.5) ** 2
    V += 0.002 * amp * diag * rng.standard_normal(V.shape)

    disp = V - V0
    norm = np.linalg.norm(disp, axis=1)
    bound = 0.5 * amp * diag
    over = norm > bound
    disp[over] *= (bound / norm[over])[:, None]
    return V0 + disp


def generate_affordance(obj: SyntheticObject, part: int, radius_fraction: float = 0.2,
                        seed: int = 0) -> AffordanceRegion:
    """Edge-graph geodesic ball around a seeded vertex of `part`, cut to the part."""
    members = np.flatnonzero(obj.part_labels == part)
    if members.size == 0:
        raise InputError(f"object '{obj.name}' has no vertex in part {part}")
    if radius_fraction < 0:
        raise InputError(f"radius_fraction must be nonnegative, got {radius_fraction}")
    rng = np.random.default_rng(seed)
    center = int(members[rng.integers(members.size)])
    dist = graph_geodesics(obj.mesh, [center])
    radius = radius_fraction * estimate_geodesic_diameter(obj.mesh)
    region = members[dist[members] <= radius]
    if region.size == 0:
        raise InputError(f"affordance ball on '{obj.name}' does not meet part {part}")
    return AffordanceRegion(obj.name, region)


def generate_category(spec: CategorySpec) -> List[SyntheticObject]:
    """N deformed copies of the template, each with its ground-truth affordance."""
    template = build_template(spec)
    objects = []
    for i in range(spec.n_objects):
        rng = np.random.default_rng([spec.seed, i])
        name = f"obj_{i}"
        mesh = template.mesh.with_vertices(deform(template, spec, rng), name=name)
        obj = SyntheticObject(name, i, mesh, template.part_labels.copy(), template.part_names, template.axial,
                              template.blend)
        obj.gt_affordance = generate_affordance(obj, spec.target_part, spec.radius_fraction, spec.seed)
        objects.append(obj)
    logger.debug("generated %d '%s' objects (%d vertices each)", spec.n_objects, spec.base, template.mesh.n_vertices)
    return objects




# ---------------------------- Semantics ----------------------------
def part_vectors(n_parts: int, d: int, seed: int) -> np.ndarray:
    """Seeded random unit vectors, one per part, shared across a category."""
    if d < 2:
        raise InputError(f"embedding dimension must be at least 2, got {d}")
    g = np.random.default_rng(seed).standard_normal((n_parts, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def generate_semantic_field(obj: SyntheticObject, d: int, noise: float, seed: int,
                            n_samples: int = 2000) -> LiftedSampleSet:
    """
    Area-weighted surface samples labeled by their dominant vertex's part; the
    embedding is the part vector plus isotropic Gaussian noise whose RMS norm
    is `noise`. Parts below MIN_SAMPLES_PER_PART get extra samples on their own faces.
    """
    if d < 2:
        raise InputError(f"embedding dimension must be at least 2, got {d}")
    if noise < 0:
        raise InputError(f"noise must be nonnegative, got {noise}")
    vectors = part_vectors(len(obj.part_names), d, seed)
    rng = np.random.default_rng([seed, max(obj.index, 0), 1])
    mesh = obj.mesh

    pts, faces = sample_surface(mesh, max(n_samples, 1), rng)
    labels = _dominant_labels(obj, pts, faces)

    extra_pts, extra_labels = [], []
    counts = np.bincount(labels, minlength=len(obj.part_names))
    face_parts = obj.part_labels[mesh.faces]
    for p in np.flatnonzero(counts < MIN_SAMPLES_PER_PART):
        own = np.flatnonzero(np.all(face_parts == p, axis=1))
        if own.size == 0:
            own = np.flatnonzero(np.any(face_parts == p, axis=1))
        if own.size == 0:
            raise InputError(f"part '{obj.part_names[p]}' of '{obj.name}' has no faces to sample")
        need = MIN_SAMPLES_PER_PART - counts[p]
        sub = TriangleMesh(mesh.vertices, mesh.faces[own], mesh.name)
        q, _ = sample_surface(sub, int(need), rng)
        extra_pts.append(q)
        extra_labels.append(np.full(int(need), p))
    if extra_pts:
        pts = np.vstack([pts] + extra_pts)
        labels = np.concatenate([labels] + extra_labels)

    emb = vectors[labels]
    if noise > 0:
        emb = emb + (noise / np.sqrt(d)) * rng.standard_normal(emb.shape)
    return LiftedSampleSet(pts, emb)


def _dominant_labels(obj: SyntheticObject, pts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    tri = obj.mesh.faces[faces]
    dist = np.linalg.norm(obj.mesh.vertices[tri] - pts[:, None, :], axis=2)
    nearest = tri[np.arange(tri.shape[0]), np.argmin(dist, axis=1)]
    return obj.part_labels[nearest]


# ---------------------------- Dataset writer ----------------------------
def write_dataset(spec: CategorySpec, out_dir: Union[str, os.PathLike]) -> Path:
    """
    Write obj_<i>.off, obj_<i>_samples.json, obj_<i>_affordance.json,
    obj_<i>_parts.json and manifest.json; returns the manifest path.
    """
    root = Path(out_dir)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise InputError(f"Cannot create dataset directory {root}: {e}") from e

    entries, gts = [], []
    for obj in generate_category(spec):
        save_mesh(obj.mesh, root / f"{obj.name}.off")
        samples = generate_semantic_field(obj, spec.d, spec.noise, spec.seed, spec.n_samples)
        save_samples(samples, root / f"{obj.name}_samples.json")
        save_region(obj.gt_affordance, root / f"{obj.name}_affordance.json")
        parts = {"part_names": list(obj.part_names), "labels": obj.part_labels.tolist()}
        _write_json(root / f"{obj.name}_parts.json", parts)
        entries.append(ObjectEntry(id=obj.name, mesh=f"{obj.name}.off", samples=f"{obj.name}_samples.json",
                                   affordance=f"{obj.name}_affordance.json", parts=f"{obj.name}_parts.json"))
        gts.append(f"{obj.name}_affordance.json")

    manifest = Manifest(schema_version=SCHEMA_VERSION, seed=spec.seed, spec=asdict(spec),
                        objects=entries, gt_affordances=gts)
    path = root / "manifest.json"
    _write_json(path, manifest.model_dump())
    return path


def _write_json(path: Path, data) -> None:
    try:
        path.write_text(json.dumps(data, indent=2), encoding="utf-8")
    except OSError as e:
        raise InputError(f"Cannot write {path}: {e}") from e
